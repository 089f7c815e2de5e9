#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace obarrier {

/// Exponent vector over (state variables, noise variables), state first.
using Exponents = std::vector<int>;

/// Sparse multivariate polynomial in n state variables x and m noise variables w.
/// Terms are kept in a sorted map so iteration order (and therefore every
/// floating-point sum over terms) is deterministic.
class Polynomial {
public:
    using TermMap = std::map<Exponents, double>;

    Polynomial() = default;
    Polynomial(std::size_t num_state_vars, std::size_t num_noise_vars = 0);

    static Polynomial constant(std::size_t nx, std::size_t nw, double c);
    static Polynomial state_var(std::size_t nx, std::size_t nw, std::size_t i);
    static Polynomial noise_var(std::size_t nx, std::size_t nw, std::size_t j);
    /// Single monomial x^sx w^sw with coefficient c.
    static Polynomial monomial(std::size_t nx, std::size_t nw, const Exponents& e, double c = 1.0);

    std::size_t num_state_vars() const noexcept { return nx_; }
    std::size_t num_noise_vars() const noexcept { return nw_; }
    std::size_t num_vars() const noexcept { return nx_ + nw_; }
    const TermMap& terms() const noexcept { return terms_; }
    std::size_t size() const noexcept { return terms_.size(); }
    bool is_zero() const noexcept { return terms_.empty(); }

    /// Adds c * monomial(e); a term whose coefficient becomes exactly zero is erased.
    void add_term(const Exponents& e, double c);
    double coefficient(const Exponents& e) const;

    int degree() const;
    int state_degree() const;
    int noise_degree() const;
    bool has_noise() const;

    double eval(std::span<const double> x, std::span<const double> w = {}) const;

    /// Same polynomial viewed with a different number of noise variables
    /// (extra noise variables get exponent 0). Dropping noise variables that
    /// occur in a term is a DimensionMismatch.
    Polynomial with_noise_vars(std::size_t nw) const;

    Polynomial& operator+=(const Polynomial& o);
    Polynomial& operator-=(const Polynomial& o);
    Polynomial& operator*=(double s);
    friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
    friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
    friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
    friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
    friend Polynomial operator*(const Polynomial& a, const Polynomial& b);
    Polynomial operator-() const { return *this * -1.0; }

    Polynomial pow(int k) const;

    /// Human-readable form, e.g. "1.5*x1^2*w1 - 0.2".
    std::string to_string() const;

    friend bool operator==(const Polynomial&, const Polynomial&) = default;

private:
    void check_same_shape(const Polynomial& o) const;

    std::size_t nx_ = 0;
    std::size_t nw_ = 0;
    TermMap terms_;
};

/// poly_eval: exact sum of coefficient times monomial value.
double poly_eval(const Polynomial& p, std::span<const double> x, std::span<const double> w = {});

/// poly_compose: outer(inner_1(x,w), ..., inner_n(x,w)). `outer` must be noise free
/// and have one state variable per inner polynomial.
Polynomial poly_compose(const Polynomial& outer, std::span<const Polynomial> inner);

/// Flattened evaluation plan for hot loops (grid sweeps, trajectory simulation).
class CompiledPolynomial {
public:
    CompiledPolynomial() = default;
    explicit CompiledPolynomial(const Polynomial& p);

    std::size_t num_state_vars() const noexcept { return nx_; }
    std::size_t num_noise_vars() const noexcept { return nw_; }

    /// No dimension checks; callers guarantee sizes.
    double operator()(const double* x, const double* w) const;

private:
    std::size_t nx_ = 0;
    std::size_t nw_ = 0;
    std::vector<double> coeffs_;
    // Per term: (variable index, exponent) pairs stored in factor_* with offsets.
    std::vector<std::size_t> term_begin_;
    std::vector<unsigned> factor_var_;
    std::vector<int> factor_exp_;
};

/// All exponent vectors over n variables with total degree <= d, graded
/// lexicographic order (constant monomial first).
std::vector<Exponents> monomials_up_to(std::size_t n, int d);

}  // namespace obarrier

namespace obarrier {

/// p(inner_1(x,w), ..., inner_n(x,w), w): substitutes the state variables of p
/// and leaves its noise variables in place. inner has p.num_noise_vars() noise vars.
Polynomial poly_substitute_state(const Polynomial& p, std::span<const Polynomial> inner);

}  // namespace obarrier
