#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obarrier/errors.hpp"
#include "obarrier/model.hpp"

namespace obarrier {

struct Grid {
    std::vector<double> lower, upper;
    std::vector<int> counts;

    Grid() = default;
    Grid(std::vector<double> lower, std::vector<double> upper, std::vector<int> counts);
    /// Covers model.bounds; per_axis = 0 picks 801 / 201 / 81 for 1 / 2 / 3+ dims.
    static Grid for_model(const SystemModel& m, int per_axis = 0);

    std::size_t dims() const noexcept { return counts.size(); }
    std::size_t size() const noexcept { return size_; }
    double spacing(std::size_t axis) const { return (upper[axis] - lower[axis]) / (counts[axis] - 1); }
    std::size_t stride(std::size_t axis) const { return strides_[axis]; }
    void node(std::size_t index, double* x) const;
    std::vector<double> node(std::size_t index) const;

    /// Cell lookup. Returns false outside the box. base is the index of the
    /// lower corner, frac the position inside the cell in [0,1] per axis.
    bool locate(const double* x, std::size_t& base, double* frac) const;

    bool operator==(const Grid& o) const { return lower == o.lower && upper == o.upper && counts == o.counts; }

private:
    std::size_t size_ = 0;
    std::vector<std::size_t> strides_;
};

using GridPtr = std::shared_ptr<const Grid>;

struct GridFunction {
    GridPtr grid;
    std::vector<double> values;  // row-major, last axis fastest
    double outside_value = 0.0;

    GridFunction() = default;
    GridFunction(GridPtr g, double fill, double outside);
    GridFunction(GridPtr g, std::vector<double> v, double outside);

    double operator()(const double* x) const;
    double operator()(std::span<const double> x) const { return (*this)(x.data()); }
    /// Interpolate inside the cell found by Grid::locate.
    double interpolate(std::size_t base, const double* frac) const;
};

/// Tensor-product rule over all noise dimensions.
struct QuadratureRule {
    std::vector<std::vector<std::pair<double, double>>> per_dim;  // (node, weight)
    // flattened tensor product, row-major over dimensions
    std::vector<double> points;  // size() * dims()
    std::vector<double> weights;

    /// Gauss-Legendre of the given order for uniform dims, the atoms for discrete ones.
    static QuadratureRule for_noise(const NoiseSpec& noise, int order = 8);

    std::size_t dims() const noexcept { return per_dim.size(); }
    std::size_t size() const noexcept { return weights.size(); }
    const double* point(std::size_t k) const { return points.data() + k * dims(); }
};

/// Nodes and weights of Gauss-Legendre on [-1,1], weights normalized to sum 1.
std::vector<std::pair<double, double>> gauss_legendre(int order);

struct ObservationEvent {
    int time = 0;
    SemialgebraicSet region;
};

/// Throws InvalidObservation on non-increasing times, t = 0, or a region that
/// meets U (or T in reach-avoid mode) at sampled points.
void validate_observations(const SystemModel& m, std::span<const ObservationEvent> obs);

using NodeMask = std::vector<std::uint8_t>;

/// Per-node flags and the successor table shared by every backward step.
class BackwardContext {
public:
    /// cache_limit_bytes: above this the successor table is recomputed on every step.
    BackwardContext(const SystemModel& m, Grid g, QuadratureRule q, std::size_t cache_limit_bytes = std::size_t(1) << 29);

    const SystemModel& model() const { return *model_; }
    const GridPtr& grid() const { return grid_; }
    const QuadratureRule& quadrature() const { return quad_; }
    bool cached() const { return cached_; }

    const NodeMask& in_x() const { return in_x_; }
    const NodeMask& in_u() const { return in_u_; }
    const NodeMask& in_t() const { return in_t_; }
    const NodeMask& in_init() const { return in_init_; }
    /// X minus U, and minus T in reach-avoid mode.
    const NodeMask& safe_interior() const { return safe_interior_; }
    const NodeMask& x_minus_u() const { return x_minus_u_; }
    NodeMask mask(const SemialgebraicSet& s) const;

    /// E[next(F(node, w))] with the quadrature rule. Fixed summation order.
    double expect(const GridFunction& next, std::size_t node) const;

private:
    std::shared_ptr<const SystemModel> model_;
    GridPtr grid_;
    QuadratureRule quad_;
    NodeMask in_x_, in_u_, in_t_, in_init_, safe_interior_, x_minus_u_;

    bool cached_ = false;
    std::vector<std::uint32_t> row_;  // node -> first successor slot, or npos
    std::vector<std::int64_t> succ_base_;  // -1: outside the box
    std::vector<double> succ_frac_;
    std::vector<CompiledPolynomial> dyn_;

    static constexpr std::uint32_t npos = 0xffffffffu;
};

/// One backward update: keep nodes get E[next(F)], the rest get fill (or 0).
GridFunction backstep(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                      double outside_value, const std::vector<double>* fill = nullptr);
/// Same arithmetic, no threads. Kept as the reference for tests and benchmarks.
GridFunction backstep_serial(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                             double outside_value, const std::vector<double>* fill = nullptr);

/// Stationary function used for t >= t_k + 1.
struct Tail {
    std::optional<Polynomial> poly;
    std::optional<GridFunction> grid;
    bool certified = false;

    static Tail from_poly(Polynomial p, bool certified = true);
    static Tail from_grid(GridFunction g);
    double operator()(const double* x) const;
};

struct ObfResult {
    double q = 0;
    std::vector<GridFunction> B;  // t = 0 .. t_k + 1
};

struct OsbfResult {
    double p = 0;
    std::vector<GridFunction> V;
};

ObfResult get_obf(const BackwardContext& ctx, std::span<const ObservationEvent> obs);
OsbfResult get_osbf(const BackwardContext& ctx, std::span<const ObservationEvent> obs, const Tail& tail);
OsbfResult get_orbf(const BackwardContext& ctx, std::span<const ObservationEvent> obs, const Tail& tail);

/// Value assigned to V at nodes outside X and beyond the grid.
double exit_value(const BackwardContext& ctx, const Tail& tail);

struct ValueIterationResult {
    GridFunction v;
    double residual = 0;
    int iterations = 0;
};

class NotConverged : public Error {
public:
    NotConverged(const std::string& what, ValueIterationResult last) : Error(what), last_(std::move(last)) {}
    const ValueIterationResult& last() const noexcept { return last_; }

private:
    ValueIterationResult last_;
};

/// Monotone iteration from the indicator of U towards the probability of
/// reaching U (or failing reach-avoid).
ValueIterationResult value_iteration_v(const BackwardContext& ctx, double eps = 1e-6, int max_iters = 10000);

enum class BarrierKind { OBF, OSBF, ORBF };

struct CheckReport {
    std::map<int, double> violation;  // condition number -> max violation (0 = fine)
    double tol = 1e-6;

    double worst() const;
    bool passes() const { return worst() <= tol; }
};

/// Evaluates the definitional inequalities at every grid node of X.
/// threshold is q for OBF and p for OSBF/ORBF. tail is required for OSBF/ORBF.
CheckReport check_certificate(const BackwardContext& ctx, std::span<const ObservationEvent> obs,
                              const std::vector<GridFunction>& fns, BarrierKind kind, double threshold,
                              const Tail* tail = nullptr, double tol = 1e-6);

}  // namespace obarrier
