#include "obarrier/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "obarrier/errors.hpp"

namespace obarrier {

namespace {

double ipow(double base, int e) {
    double r = 1.0;
    while (e > 0) {
        if (e & 1) r *= base;
        base *= base;
        e >>= 1;
    }
    return r;
}

}  // namespace

Polynomial::Polynomial(std::size_t num_state_vars, std::size_t num_noise_vars)
    : nx_(num_state_vars), nw_(num_noise_vars) {}

Polynomial Polynomial::constant(std::size_t nx, std::size_t nw, double c) {
    Polynomial p(nx, nw);
    p.add_term(Exponents(nx + nw, 0), c);
    return p;
}

Polynomial Polynomial::state_var(std::size_t nx, std::size_t nw, std::size_t i) {
    if (i >= nx) throw DimensionMismatch("state variable index out of range");
    Exponents e(nx + nw, 0);
    e[i] = 1;
    return monomial(nx, nw, e);
}

Polynomial Polynomial::noise_var(std::size_t nx, std::size_t nw, std::size_t j) {
    if (j >= nw) throw DimensionMismatch("noise variable index out of range");
    Exponents e(nx + nw, 0);
    e[nx + j] = 1;
    return monomial(nx, nw, e);
}

Polynomial Polynomial::monomial(std::size_t nx, std::size_t nw, const Exponents& e, double c) {
    Polynomial p(nx, nw);
    p.add_term(e, c);
    return p;
}

void Polynomial::add_term(const Exponents& e, double c) {
    if (e.size() != nx_ + nw_) throw DimensionMismatch("exponent vector length mismatch");
    if (std::any_of(e.begin(), e.end(), [](int k) { return k < 0; }))
        throw DimensionMismatch("negative exponent");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(e, c);
    if (!inserted) {
        it->second += c;
        if (it->second == 0.0) terms_.erase(it);
    }
}

double Polynomial::coefficient(const Exponents& e) const {
    auto it = terms_.find(e);
    return it == terms_.end() ? 0.0 : it->second;
}

int Polynomial::degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) d = std::max(d, std::accumulate(e.begin(), e.end(), 0));
    return d;
}

int Polynomial::state_degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_)
        d = std::max(d, std::accumulate(e.begin(), e.begin() + static_cast<long>(nx_), 0));
    return d;
}

int Polynomial::noise_degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_)
        d = std::max(d, std::accumulate(e.begin() + static_cast<long>(nx_), e.end(), 0));
    return d;
}

bool Polynomial::has_noise() const { return noise_degree() > 0; }

double Polynomial::eval(std::span<const double> x, std::span<const double> w) const {
    if (x.size() != nx_ || w.size() != nw_)
        throw DimensionMismatch("poly_eval: expected " + std::to_string(nx_) + " state and " +
                                std::to_string(nw_) + " noise values, got " +
                                std::to_string(x.size()) + " and " + std::to_string(w.size()));
    double sum = 0.0;
    for (const auto& [e, c] : terms_) {
        double m = c;
        for (std::size_t i = 0; i < nx_; ++i)
            if (e[i]) m *= ipow(x[i], e[i]);
        for (std::size_t j = 0; j < nw_; ++j)
            if (e[nx_ + j]) m *= ipow(w[j], e[nx_ + j]);
        sum += m;
    }
    return sum;
}

Polynomial Polynomial::with_noise_vars(std::size_t nw) const {
    Polynomial r(nx_, nw);
    for (const auto& [e, c] : terms_) {
        Exponents f(nx_ + nw, 0);
        std::copy_n(e.begin(), nx_, f.begin());
        for (std::size_t j = 0; j < nw_; ++j) {
            if (e[nx_ + j] == 0) continue;
            if (j >= nw) throw DimensionMismatch("cannot drop a noise variable that occurs");
            f[nx_ + j] = e[nx_ + j];
        }
        r.add_term(f, c);
    }
    return r;
}

void Polynomial::check_same_shape(const Polynomial& o) const {
    if (nx_ != o.nx_ || nw_ != o.nw_)
        throw DimensionMismatch("polynomials have different variable counts");
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
    check_same_shape(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& o) {
    check_same_shape(o);
    for (const auto& [e, c] : o.terms_) add_term(e, -c);
    return *this;
}

Polynomial& Polynomial::operator*=(double s) {
    if (s == 0.0) {
        terms_.clear();
        return *this;
    }
    for (auto it = terms_.begin(); it != terms_.end();) {
        it->second *= s;
        if (it->second == 0.0)
            it = terms_.erase(it);
        else
            ++it;
    }
    return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_same_shape(b);
    Polynomial r(a.nx_, a.nw_);
    Exponents e(a.nx_ + a.nw_);
    for (const auto& [ea, ca] : a.terms_) {
        for (const auto& [eb, cb] : b.terms_) {
            for (std::size_t k = 0; k < e.size(); ++k) e[k] = ea[k] + eb[k];
            r.add_term(e, ca * cb);
        }
    }
    return r;
}

Polynomial Polynomial::pow(int k) const {
    if (k < 0) throw DimensionMismatch("negative power");
    Polynomial result = constant(nx_, nw_, 1.0);
    Polynomial base = *this;
    while (k > 0) {
        if (k & 1) result = result * base;
        k >>= 1;
        if (k) base = base * base;
    }
    return result;
}

std::string Polynomial::to_string() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    os.precision(12);
    bool first = true;
    for (auto it = terms_.rbegin(); it != terms_.rend(); ++it) {
        const auto& [e, c] = *it;
        double mag = std::abs(c);
        if (first)
            os << (c < 0 ? "-" : "");
        else
            os << (c < 0 ? " - " : " + ");
        first = false;
        bool is_const = std::all_of(e.begin(), e.end(), [](int k) { return k == 0; });
        if (is_const || mag != 1.0) {
            os << mag;
            if (!is_const) os << "*";
        }
        bool first_factor = true;
        for (std::size_t i = 0; i < e.size(); ++i) {
            if (!e[i]) continue;
            if (!first_factor) os << "*";
            first_factor = false;
            if (i < nx_)
                os << "x" << (i + 1);
            else
                os << "w" << (i - nx_ + 1);
            if (e[i] > 1) os << "^" << e[i];
        }
    }
    return os.str();
}

double poly_eval(const Polynomial& p, std::span<const double> x, std::span<const double> w) {
    return p.eval(x, w);
}

Polynomial poly_compose(const Polynomial& outer, std::span<const Polynomial> inner) {
    if (outer.has_noise()) throw DimensionMismatch("poly_compose: outer polynomial has noise variables");
    if (inner.size() != outer.num_state_vars())
        throw DimensionMismatch("poly_compose: need " + std::to_string(outer.num_state_vars()) +
                                " inner polynomials, got " + std::to_string(inner.size()));
    if (inner.empty()) {
        // Constant outer over zero variables; nothing to substitute into.
        return outer;
    }
    const std::size_t nx = inner.front().num_state_vars();
    const std::size_t nw = inner.front().num_noise_vars();
    for (const auto& q : inner)
        if (q.num_state_vars() != nx || q.num_noise_vars() != nw)
            throw DimensionMismatch("poly_compose: inner polynomials disagree on variable counts");

    // Cache inner powers; benchmarks reuse the same powers across many terms.
    std::vector<std::vector<Polynomial>> powers(inner.size());
    auto power_of = [&](std::size_t i, int k) -> const Polynomial& {
        auto& cache = powers[i];
        if (cache.empty()) cache.push_back(Polynomial::constant(nx, nw, 1.0));
        while (static_cast<int>(cache.size()) <= k) cache.push_back(cache.back() * inner[i]);
        return cache[static_cast<std::size_t>(k)];
    };

    Polynomial result(nx, nw);
    for (const auto& [e, c] : outer.terms()) {
        Polynomial term = Polynomial::constant(nx, nw, c);
        for (std::size_t i = 0; i < inner.size(); ++i)
            if (e[i]) term = term * power_of(i, e[i]);
        result += term;
    }
    return result;
}

CompiledPolynomial::CompiledPolynomial(const Polynomial& p)
    : nx_(p.num_state_vars()), nw_(p.num_noise_vars()) {
    for (const auto& [e, c] : p.terms()) {
        coeffs_.push_back(c);
        term_begin_.push_back(factor_var_.size());
        for (std::size_t k = 0; k < e.size(); ++k) {
            if (!e[k]) continue;
            factor_var_.push_back(static_cast<unsigned>(k));
            factor_exp_.push_back(e[k]);
        }
    }
    term_begin_.push_back(factor_var_.size());
}

double CompiledPolynomial::operator()(const double* x, const double* w) const {
    double sum = 0.0;
    for (std::size_t t = 0; t < coeffs_.size(); ++t) {
        double m = coeffs_[t];
        for (std::size_t f = term_begin_[t]; f < term_begin_[t + 1]; ++f) {
            unsigned v = factor_var_[f];
            double base = v < nx_ ? x[v] : w[v - nx_];
            m *= ipow(base, factor_exp_[f]);
        }
        sum += m;
    }
    return sum;
}

std::vector<Exponents> monomials_up_to(std::size_t n, int d) {
    std::vector<Exponents> out;
    Exponents e(n, 0);
    for (int total = 0; total <= d; ++total) {
        // Enumerate compositions of `total` into n parts, lexicographically descending in e[0].
        std::vector<Exponents> level;
        auto rec = [&](auto&& self, std::size_t i, int remaining) -> void {
            if (n == 0) return;
            if (i + 1 == n) {
                e[i] = remaining;
                level.push_back(e);
                return;
            }
            for (int k = remaining; k >= 0; --k) {
                e[i] = k;
                self(self, i + 1, remaining - k);
            }
        };
        rec(rec, 0, total);
        out.insert(out.end(), level.begin(), level.end());
    }
    if (n == 0) out.push_back({});
    return out;
}

}  // namespace obarrier

namespace obarrier {

Polynomial poly_substitute_state(const Polynomial& p, std::span<const Polynomial> inner) {
    const std::size_t n = p.num_state_vars(), nw = p.num_noise_vars();
    if (inner.size() != n) throw DimensionMismatch("poly_substitute_state: one inner polynomial per state variable");
    if (inner.empty()) return p;
    const std::size_t nx = inner.front().num_state_vars();
    std::vector<Polynomial> all(inner.begin(), inner.end());
    for (auto& q : all)
        if (q.num_noise_vars() != nw) q = q.with_noise_vars(nw);
    for (std::size_t j = 0; j < nw; ++j) all.push_back(Polynomial::noise_var(nx, nw, j));
    // view p's noise as trailing state slots so the outer is noise free
    Polynomial outer(n + nw, 0);
    for (const auto& [e, c] : p.terms()) outer.add_term(e, c);
    return poly_compose(outer, all);
}

}  // namespace obarrier
