#include "obarrier/semialgebraic.hpp"

#include "obarrier/errors.hpp"

namespace obarrier {

SemialgebraicSet::SemialgebraicSet(std::size_t num_vars, std::vector<Conjunction> disjuncts)
    : nx_(num_vars), disjuncts_(std::move(disjuncts)) {
    for (const auto& conj : disjuncts_)
        for (const auto& c : conj)
            if (c.poly.num_state_vars() != nx_ || c.poly.num_noise_vars() != 0)
                throw DimensionMismatch("set constraint must be a polynomial in the state variables only");
}

SemialgebraicSet SemialgebraicSet::empty(std::size_t num_vars) { return SemialgebraicSet(num_vars, {}); }

SemialgebraicSet SemialgebraicSet::whole(std::size_t num_vars) {
    return SemialgebraicSet(num_vars, {Conjunction{}});
}

SemialgebraicSet SemialgebraicSet::box(std::span<const double> low, std::span<const double> high) {
    if (low.size() != high.size()) throw DimensionMismatch("box bounds differ in length");
    const std::size_t n = low.size();
    Conjunction conj;
    for (std::size_t i = 0; i < n; ++i) {
        Polynomial xi = Polynomial::state_var(n, 0, i);
        conj.push_back({xi - Polynomial::constant(n, 0, low[i]), Relation::Ge});
        conj.push_back({Polynomial::constant(n, 0, high[i]) - xi, Relation::Ge});
    }
    return SemialgebraicSet(n, {conj});
}

SemialgebraicSet SemialgebraicSet::ball(std::span<const double> center, double radius) {
    const std::size_t n = center.size();
    Polynomial g = Polynomial::constant(n, 0, radius * radius);
    for (std::size_t i = 0; i < n; ++i) {
        Polynomial d = Polynomial::state_var(n, 0, i) - Polynomial::constant(n, 0, center[i]);
        g -= d * d;
    }
    return SemialgebraicSet(n, {Conjunction{{g, Relation::Ge}}});
}

bool SemialgebraicSet::contains(std::span<const double> x) const {
    if (x.size() != nx_) throw DimensionMismatch("set_contains: wrong state dimension");
    for (const auto& conj : disjuncts_) {
        bool all = true;
        for (const auto& c : conj) {
            if (c.poly.eval(x) < 0.0) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

SemialgebraicSet SemialgebraicSet::unite(const SemialgebraicSet& o) const {
    if (o.nx_ != nx_) throw DimensionMismatch("set union: dimension mismatch");
    auto d = disjuncts_;
    d.insert(d.end(), o.disjuncts_.begin(), o.disjuncts_.end());
    return SemialgebraicSet(nx_, std::move(d));
}

SemialgebraicSet SemialgebraicSet::intersect(const SemialgebraicSet& o) const {
    if (o.nx_ != nx_) throw DimensionMismatch("set intersection: dimension mismatch");
    std::vector<Conjunction> d;
    for (const auto& a : disjuncts_) {
        for (const auto& b : o.disjuncts_) {
            Conjunction c = a;
            c.insert(c.end(), b.begin(), b.end());
            d.push_back(std::move(c));
        }
    }
    return SemialgebraicSet(nx_, std::move(d));
}

SemialgebraicSet SemialgebraicSet::complement() const {
    // not(OR_i AND_j p_ij >= 0) = AND_i OR_j (-p_ij >= 0)
    SemialgebraicSet result = whole(nx_);
    for (const auto& conj : disjuncts_) {
        std::vector<Conjunction> negated;
        for (const auto& c : conj) negated.push_back(Conjunction{{-c.poly, Relation::Ge}});
        result = result.intersect(SemialgebraicSet(nx_, std::move(negated)));
    }
    return result;
}

CompiledSet::CompiledSet(const SemialgebraicSet& s) {
    for (const auto& conj : s.disjuncts()) {
        std::vector<CompiledPolynomial> polys;
        for (const auto& c : conj) polys.emplace_back(c.poly);
        disjuncts_.push_back(std::move(polys));
    }
}

bool CompiledSet::contains(const double* x) const {
    for (const auto& conj : disjuncts_) {
        bool all = true;
        for (const auto& p : conj) {
            if (p(x, nullptr) < 0.0) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

}  // namespace obarrier
