#pragma once

#include <cstddef>
#include <utility>
#include <variant>
#include <vector>

#include "obarrier/polynomial.hpp"

namespace obarrier {

/// Uniform distribution on [-1, 1].
struct UniformSymmetric {};

/// Finite distribution: (value, weight) pairs, weights summing to 1.
struct DiscreteAtoms {
    std::vector<std::pair<double, double>> atoms;
};

using NoiseDistribution = std::variant<UniformSymmetric, DiscreteAtoms>;

/// Product distribution of independent per-dimension noises.
class NoiseSpec {
public:
    NoiseSpec() = default;
    explicit NoiseSpec(std::vector<NoiseDistribution> dims);
    static NoiseSpec uniform(std::size_t dims);

    std::size_t dims() const noexcept { return dims_.size(); }
    const NoiseDistribution& dim(std::size_t j) const { return dims_.at(j); }

    /// E[w_j^k].
    double moment(std::size_t j, int k) const;

    /// Inverse-CDF draw for dimension j from u in [0, 1).
    double sample(std::size_t j, double u) const;

private:
    std::vector<NoiseDistribution> dims_;
};

/// poly_expect: integrates out every noise variable; result has no noise variables.
Polynomial poly_expect(const Polynomial& p, const NoiseSpec& noise);

}  // namespace obarrier
