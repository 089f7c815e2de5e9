#pragma once

#include <span>
#include <vector>

#include "obarrier/polynomial.hpp"

namespace obarrier {

enum class Relation { Ge, Gt };

/// poly(x) >= 0 or poly(x) > 0, poly over state variables only.
struct Constraint {
    Polynomial poly;
    Relation rel = Relation::Ge;
};

using Conjunction = std::vector<Constraint>;

/// Union of conjunctions of polynomial inequalities.
class SemialgebraicSet {
public:
    SemialgebraicSet() = default;  // empty set
    SemialgebraicSet(std::size_t num_vars, std::vector<Conjunction> disjuncts);

    static SemialgebraicSet empty(std::size_t num_vars);
    static SemialgebraicSet whole(std::size_t num_vars);
    static SemialgebraicSet box(std::span<const double> low, std::span<const double> high);
    static SemialgebraicSet ball(std::span<const double> center, double radius);

    std::size_t num_vars() const noexcept { return nx_; }
    const std::vector<Conjunction>& disjuncts() const noexcept { return disjuncts_; }
    bool is_empty_syntactically() const noexcept { return disjuncts_.empty(); }

    /// Strict relations are tested as >= 0 (boundaries have measure zero).
    bool contains(std::span<const double> x) const;

    SemialgebraicSet unite(const SemialgebraicSet& o) const;
    SemialgebraicSet intersect(const SemialgebraicSet& o) const;
    /// Closure of the complement: every disjunct is negated with each atom flipped to
    /// -p >= 0, then distributed back into disjunctive form.
    SemialgebraicSet complement() const;
    SemialgebraicSet minus(const SemialgebraicSet& o) const { return intersect(o.complement()); }

private:
    std::size_t nx_ = 0;
    std::vector<Conjunction> disjuncts_;
};

/// Evaluation plan for hot membership tests.
class CompiledSet {
public:
    CompiledSet() = default;
    explicit CompiledSet(const SemialgebraicSet& s);
    bool contains(const double* x) const;
    bool empty() const noexcept { return disjuncts_.empty(); }

private:
    std::vector<std::vector<CompiledPolynomial>> disjuncts_;
};

}  // namespace obarrier
