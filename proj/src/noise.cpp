#include "obarrier/noise.hpp"

#include <cmath>

#include "obarrier/errors.hpp"

namespace obarrier {

NoiseSpec::NoiseSpec(std::vector<NoiseDistribution> dims) : dims_(std::move(dims)) {
    for (const auto& d : dims_) {
        const auto* atoms = std::get_if<DiscreteAtoms>(&d);
        if (!atoms) continue;
        if (atoms->atoms.empty()) throw SchemaError("discrete noise needs at least one atom");
        double total = 0.0;
        for (const auto& [v, w] : atoms->atoms) {
            if (!(w >= 0.0) || !std::isfinite(v)) throw SchemaError("atom weights must be nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) throw SchemaError("atom weights must sum to 1");
    }
}

NoiseSpec NoiseSpec::uniform(std::size_t dims) {
    return NoiseSpec(std::vector<NoiseDistribution>(dims, UniformSymmetric{}));
}

double NoiseSpec::moment(std::size_t j, int k) const {
    const auto& d = dims_.at(j);
    if (std::holds_alternative<UniformSymmetric>(d)) return (k % 2) ? 0.0 : 1.0 / (k + 1);
    double m = 0.0;
    for (const auto& [v, w] : std::get<DiscreteAtoms>(d).atoms) m += w * std::pow(v, k);
    return m;
}

double NoiseSpec::sample(std::size_t j, double u) const {
    const auto& d = dims_.at(j);
    if (std::holds_alternative<UniformSymmetric>(d)) return 2.0 * u - 1.0;
    const auto& atoms = std::get<DiscreteAtoms>(d).atoms;
    double acc = 0.0;
    for (const auto& [v, w] : atoms) {
        acc += w;
        if (u < acc) return v;
    }
    return atoms.back().first;
}

Polynomial poly_expect(const Polynomial& p, const NoiseSpec& noise) {
    const std::size_t nx = p.num_state_vars();
    const std::size_t nw = p.num_noise_vars();
    if (nw != noise.dims())
        throw DimensionMismatch("poly_expect: polynomial has " + std::to_string(nw) +
                                " noise variables, noise spec has " + std::to_string(noise.dims()));
    Polynomial r(nx, 0);
    for (const auto& [e, c] : p.terms()) {
        double m = c;
        for (std::size_t j = 0; j < nw && m != 0.0; ++j) m *= noise.moment(j, e[nx + j]);
        if (m == 0.0) continue;
        r.add_term(Exponents(e.begin(), e.begin() + static_cast<long>(nx)), m);
    }
    return r;
}

}  // namespace obarrier
