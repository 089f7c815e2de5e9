#include "obarrier/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace obarrier {

// ---------------------------------------------------------------- Grid

Grid::Grid(std::vector<double> lo, std::vector<double> hi, std::vector<int> n)
    : lower(std::move(lo)), upper(std::move(hi)), counts(std::move(n)) {
    if (lower.size() != upper.size() || lower.size() != counts.size() || lower.empty())
        throw DimensionMismatch("grid bounds and counts differ in length");
    strides_.assign(counts.size(), 1);
    size_ = 1;
    for (std::size_t a = counts.size(); a-- > 0;) {
        if (counts[a] < 2) throw SchemaError("grid needs at least 2 nodes per axis");
        if (!(lower[a] < upper[a])) throw SchemaError("grid lower bound must be below upper bound");
        strides_[a] = size_;
        size_ *= static_cast<std::size_t>(counts[a]);
    }
}

Grid Grid::for_model(const SystemModel& m, int per_axis) {
    const std::size_t n = m.state_dim;
    if (per_axis <= 0) per_axis = n <= 1 ? 801 : n == 2 ? 201 : 81;
    return Grid(m.bounds.low, m.bounds.high, std::vector<int>(n, per_axis));
}

void Grid::node(std::size_t index, double* x) const {
    for (std::size_t a = 0; a < dims(); ++a) {
        const std::size_t i = (index / strides_[a]) % static_cast<std::size_t>(counts[a]);
        x[a] = lower[a] + static_cast<double>(i) * spacing(a);
    }
}

std::vector<double> Grid::node(std::size_t index) const {
    std::vector<double> x(dims());
    node(index, x.data());
    return x;
}

bool Grid::locate(const double* x, std::size_t& base, double* frac) const {
    base = 0;
    for (std::size_t a = 0; a < dims(); ++a) {
        const double last = counts[a] - 1;
        double s = (x[a] - lower[a]) / spacing(a);
        if (!(s >= -1e-9 && s <= last + 1e-9)) return false;  // also rejects NaN
        s = std::clamp(s, 0.0, last);
        auto i = static_cast<std::size_t>(s);
        if (i >= static_cast<std::size_t>(counts[a] - 1)) i = counts[a] - 2;
        frac[a] = s - static_cast<double>(i);
        base += i * strides_[a];
    }
    return true;
}

// ---------------------------------------------------------------- GridFunction

GridFunction::GridFunction(GridPtr g, double fill, double outside)
    : grid(std::move(g)), values(grid->size(), fill), outside_value(outside) {}

GridFunction::GridFunction(GridPtr g, std::vector<double> v, double outside)
    : grid(std::move(g)), values(std::move(v)), outside_value(outside) {
    if (values.size() != grid->size()) throw DimensionMismatch("grid function has wrong number of values");
}

double GridFunction::interpolate(std::size_t base, const double* frac) const {
    const std::size_t n = grid->dims();
    double acc = 0.0;
    for (std::size_t c = 0; c < (std::size_t(1) << n); ++c) {
        double w = 1.0;
        std::size_t idx = base;
        for (std::size_t a = 0; a < n; ++a) {
            if (c >> a & 1) {
                w *= frac[a];
                idx += grid->stride(a);
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if (w != 0.0) acc += w * values[idx];
    }
    return acc;
}

double GridFunction::operator()(const double* x) const {
    double frac[16];
    std::size_t base;
    if (grid->dims() > 16) throw DimensionMismatch("grid functions support at most 16 dimensions");
    if (!grid->locate(x, base, frac)) return outside_value;
    return interpolate(base, frac);
}

// ---------------------------------------------------------------- quadrature

std::vector<std::pair<double, double>> gauss_legendre(int order) {
    if (order < 1) throw SchemaError("quadrature order must be positive");
    // Golub-Welsch on the Legendre Jacobi matrix
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double b = k / std::sqrt(4.0 * k * k - 1.0);
        J(k, k - 1) = J(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    std::vector<std::pair<double, double>> rule(order);
    for (int k = 0; k < order; ++k) {
        const double v0 = es.eigenvectors()(0, k);
        rule[k] = {es.eigenvalues()(k), v0 * v0};
    }
    std::sort(rule.begin(), rule.end());
    // symmetrize so odd moments vanish exactly
    for (int k = 0; k < order / 2; ++k) {
        auto& lo = rule[k];
        auto& hi = rule[order - 1 - k];
        const double x = 0.5 * (hi.first - lo.first), w = 0.5 * (hi.second + lo.second);
        lo = {-x, w};
        hi = {x, w};
    }
    if (order % 2) rule[order / 2].first = 0.0;
    double total = 0;
    for (auto& [x, w] : rule) total += w;
    for (auto& [x, w] : rule) w /= total;
    return rule;
}

QuadratureRule QuadratureRule::for_noise(const NoiseSpec& noise, int order) {
    QuadratureRule q;
    for (std::size_t j = 0; j < noise.dims(); ++j) {
        const auto& d = noise.dim(j);
        if (const auto* atoms = std::get_if<DiscreteAtoms>(&d))
            q.per_dim.push_back(atoms->atoms);
        else
            q.per_dim.push_back(gauss_legendre(order));
    }
    const std::size_t nd = q.per_dim.size();
    std::size_t total = 1;
    for (const auto& d : q.per_dim) total *= d.size();
    q.points.resize(total * nd);
    q.weights.resize(total);
    for (std::size_t k = 0; k < total; ++k) {
        std::size_t r = k;
        double w = 1.0;
        for (std::size_t j = nd; j-- > 0;) {
            const auto& [x, wj] = q.per_dim[j][r % q.per_dim[j].size()];
            r /= q.per_dim[j].size();
            q.points[k * nd + j] = x;
            w *= wj;
        }
        q.weights[k] = w;
    }
    return q;
}

// ---------------------------------------------------------------- observations

void validate_observations(const SystemModel& m, std::span<const ObservationEvent> obs) {
    int last = 0;
    for (const auto& e : obs) {
        if (e.time <= last)
            throw InvalidObservation("observation times must be positive and strictly increasing (got " +
                                     std::to_string(e.time) + " after " + std::to_string(last) + ")");
        last = e.time;
        if (e.region.num_vars() != m.state_dim) throw DimensionMismatch("observation region has wrong dimension");
        const bool clear_u = hulls_separated(e.region, m.U);
        const bool clear_t = m.mode != Mode::ReachAvoid || !m.T || hulls_separated(e.region, *m.T);
        if (clear_u && clear_t) continue;
        const SemialgebraicSet inside = e.region.intersect(m.X);
        double radius = 4.0;
        for (std::size_t i = 0; i < m.state_dim; ++i)
            radius = std::max({radius, 4 * std::abs(m.bounds.low[i]), 4 * std::abs(m.bounds.high[i])});
        Box box;
        if (auto hull = linear_box_hull(e.region)) {
            box = std::move(*hull);
            for (std::size_t i = 0; i < m.state_dim; ++i) {
                box.low[i] = std::max(box.low[i], m.bounds.low[i]);
                box.high[i] = std::min(box.high[i], m.bounds.high[i]);
                if (box.low[i] > box.high[i]) box.high[i] = box.low[i];
            }
        } else {
            try {
                box = derive_bounding_box(inside, radius);
            } catch (const SchemaError&) {
                continue;  // empty inside X at scan resolution, nothing can conflict
            }
        }
        try {
            if (!clear_u) check_disjoint(inside, box, m.U, "observation region at t=" + std::to_string(e.time));
            if (!clear_t)
                check_disjoint(inside, box, *m.T, "observation region at t=" + std::to_string(e.time) + " (target)");
        } catch (const WellPosednessError& err) {
            throw InvalidObservation(err.what());
        }
    }
}

// ---------------------------------------------------------------- context

BackwardContext::BackwardContext(const SystemModel& m, Grid g, QuadratureRule q, std::size_t cache_limit_bytes)
    : model_(std::make_shared<SystemModel>(m)), grid_(std::make_shared<Grid>(std::move(g))), quad_(std::move(q)) {
    const Grid& G = *grid_;
    const std::size_t n = G.dims(), N = G.size();
    if (n != m.state_dim) throw DimensionMismatch("grid dimension differs from state dimension");
    if (quad_.dims() != m.noise_dim()) throw DimensionMismatch("quadrature dimension differs from noise dimension");
    if (n > 16) throw DimensionMismatch("at most 16 state dimensions");

    for (const auto& p : m.dynamics) dyn_.emplace_back(p);

    CompiledSet cx(m.X), cu(m.U), ci(m.effective_init());
    CompiledSet ct = m.T ? CompiledSet(*m.T) : CompiledSet();
    const bool ra = m.mode == Mode::ReachAvoid;
    in_x_.assign(N, 0);
    in_u_.assign(N, 0);
    in_t_.assign(N, 0);
    in_init_.assign(N, 0);
    safe_interior_.assign(N, 0);
    x_minus_u_.assign(N, 0);
    std::size_t nx_nodes = 0;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < N; ++i) {
        G.node(i, x.data());
        in_x_[i] = cx.contains(x.data());
        in_u_[i] = cu.contains(x.data());
        in_t_[i] = m.T && ct.contains(x.data());
        in_init_[i] = ci.contains(x.data());
        x_minus_u_[i] = in_x_[i] && !in_u_[i];
        safe_interior_[i] = x_minus_u_[i] && !(ra && in_t_[i]);
        nx_nodes += in_x_[i];
    }

    const std::size_t Q = quad_.size();
    const std::size_t bytes = nx_nodes * Q * (sizeof(std::int64_t) + n * sizeof(double));
    if (bytes > cache_limit_bytes || nx_nodes * Q >= npos) return;

    cached_ = true;
    row_.assign(N, npos);
    std::uint32_t slot = 0;
    for (std::size_t i = 0; i < N; ++i)
        if (in_x_[i]) {
            row_[i] = slot;
            slot += static_cast<std::uint32_t>(Q);
        }
    succ_base_.resize(std::size_t(slot));
    succ_frac_.resize(std::size_t(slot) * n);
#pragma omp parallel for schedule(static)
    for (std::int64_t si = 0; si < static_cast<std::int64_t>(N); ++si) {
        const auto i = static_cast<std::size_t>(si);
        if (row_[i] == npos) continue;
        double xi[16], y[16];
        G.node(i, xi);
        for (std::size_t k = 0; k < Q; ++k) {
            const std::size_t s = row_[i] + k;
            for (std::size_t a = 0; a < n; ++a) y[a] = dyn_[a](xi, quad_.point(k));
            std::size_t base;
            succ_base_[s] = G.locate(y, base, &succ_frac_[s * n]) ? static_cast<std::int64_t>(base) : -1;
        }
    }
}

NodeMask BackwardContext::mask(const SemialgebraicSet& s) const {
    CompiledSet cs(s);
    NodeMask out(grid_->size(), 0);
    std::vector<double> x(grid_->dims());
    for (std::size_t i = 0; i < out.size(); ++i) {
        grid_->node(i, x.data());
        out[i] = cs.contains(x.data());
    }
    return out;
}

double BackwardContext::expect(const GridFunction& next, std::size_t node) const {
    const std::size_t n = grid_->dims(), Q = quad_.size();
    double acc = 0.0;
    if (cached_ && row_[node] != npos) {
        const std::size_t r = row_[node];
        for (std::size_t k = 0; k < Q; ++k) {
            const std::int64_t b = succ_base_[r + k];
            const double val = b < 0 ? next.outside_value
                                     : next.interpolate(static_cast<std::size_t>(b), &succ_frac_[(r + k) * n]);
            acc += quad_.weights[k] * val;
        }
        return acc;
    }
    double xi[16], y[16], frac[16];
    grid_->node(node, xi);
    for (std::size_t k = 0; k < Q; ++k) {
        for (std::size_t a = 0; a < n; ++a) y[a] = dyn_[a](xi, quad_.point(k));
        std::size_t base;
        const double val = grid_->locate(y, base, frac) ? next.interpolate(base, frac) : next.outside_value;
        acc += quad_.weights[k] * val;
    }
    return acc;
}

// ---------------------------------------------------------------- backstep

namespace {

inline double node_update(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                          const std::vector<double>* fill, std::size_t i) {
    if (keep[i] && ctx.in_x()[i]) return ctx.expect(next, i);
    return fill ? (*fill)[i] : 0.0;
}

void check_step_args(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                     const std::vector<double>* fill) {
    const std::size_t N = ctx.grid()->size();
    if (!next.grid || !(*next.grid == *ctx.grid())) throw DimensionMismatch("grid function lives on another grid");
    if (keep.size() != N || (fill && fill->size() != N)) throw DimensionMismatch("mask size differs from grid size");
}

}  // namespace

GridFunction backstep(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                      double outside_value, const std::vector<double>* fill) {
    check_step_args(ctx, next, keep, fill);
    const std::size_t N = ctx.grid()->size();
    std::vector<double> out(N);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(N); ++i)
        out[i] = node_update(ctx, next, keep, fill, static_cast<std::size_t>(i));
    return GridFunction(ctx.grid(), std::move(out), outside_value);
}

GridFunction backstep_serial(const BackwardContext& ctx, const GridFunction& next, const NodeMask& keep,
                             double outside_value, const std::vector<double>* fill) {
    check_step_args(ctx, next, keep, fill);
    const std::size_t N = ctx.grid()->size();
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) out[i] = node_update(ctx, next, keep, fill, i);
    return GridFunction(ctx.grid(), std::move(out), outside_value);
}

// ---------------------------------------------------------------- tails

Tail Tail::from_poly(Polynomial p, bool certified) {
    Tail t;
    t.poly = std::move(p);
    t.certified = certified;
    return t;
}

Tail Tail::from_grid(GridFunction g) {
    Tail t;
    t.grid = std::move(g);
    t.certified = false;
    return t;
}

double Tail::operator()(const double* x) const {
    if (poly) return poly->eval(std::span<const double>(x, poly->num_state_vars()));
    if (grid) return (*grid)(x);
    throw SchemaError("empty tail function");
}

double exit_value(const BackwardContext& ctx, const Tail& tail) {
    const auto& m = ctx.model();
    if (m.mode == Mode::Safety && m.exit == ExitPolicy::Safe) return 0.0;
    double hi = 1.0;
    const std::size_t N = ctx.grid()->size();
    std::vector<double> x(ctx.grid()->dims());
    for (std::size_t i = 0; i < N; ++i) {
        if (!ctx.in_x()[i]) continue;
        ctx.grid()->node(i, x.data());
        hi = std::max(hi, tail(x.data()));
    }
    return hi;
}

// ---------------------------------------------------------------- Alg. 2

namespace {

int last_time(std::span<const ObservationEvent> obs) {
    if (obs.empty()) throw InvalidObservation("backward pass needs at least one observation");
    int last = 0;
    for (const auto& e : obs) {
        if (e.time <= last) throw InvalidObservation("observation times must be positive and strictly increasing");
        last = e.time;
    }
    return last;
}

// keep mask per time 0..t_k
std::vector<const NodeMask*> keep_masks(const BackwardContext& ctx, std::span<const ObservationEvent> obs,
                                        std::vector<NodeMask>& storage) {
    const int tk = last_time(obs);
    storage.clear();
    storage.reserve(obs.size());
    std::vector<const NodeMask*> keep(tk + 1, &ctx.x_minus_u());
    for (const auto& e : obs) {
        storage.push_back(ctx.mask(e.region));
        keep[e.time] = &storage.back();
    }
    return keep;
}

double extreme_over_init(const BackwardContext& ctx, const GridFunction& f, bool want_max) {
    bool any = false;
    double best = want_max ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        if (!ctx.in_init()[i]) continue;
        any = true;
        best = want_max ? std::max(best, f.values[i]) : std::min(best, f.values[i]);
    }
    if (!any) throw NoInitialNode("no grid node lies in the initial set; refine the grid");
    return best;
}

}  // namespace

ObfResult get_obf(const BackwardContext& ctx, std::span<const ObservationEvent> obs) {
    std::vector<NodeMask> storage;
    const auto keep = keep_masks(ctx, obs, storage);
    const int tk = static_cast<int>(keep.size()) - 1;
    ObfResult r;
    r.B.resize(tk + 2);
    r.B[tk + 1] = GridFunction(ctx.grid(), 1.0, 1.0);
    for (int t = tk; t >= 0; --t) r.B[t] = backstep(ctx, r.B[t + 1], *keep[t], 0.0);
    r.q = extreme_over_init(ctx, r.B[0], false);
    return r;
}

OsbfResult get_osbf(const BackwardContext& ctx, std::span<const ObservationEvent> obs, const Tail& tail) {
    std::vector<NodeMask> storage;
    const auto keep = keep_masks(ctx, obs, storage);
    const int tk = static_cast<int>(keep.size()) - 1;
    const double e = exit_value(ctx, tail);
    const GridPtr& G = ctx.grid();
    const std::size_t N = G->size();

    std::vector<double> fill(N, 0.0), term(N);
    std::vector<double> x(G->dims());
    for (std::size_t i = 0; i < N; ++i) {
        if (ctx.in_x()[i]) {
            G->node(i, x.data());
            term[i] = tail(x.data());
        } else {
            fill[i] = term[i] = e;
        }
    }
    OsbfResult r;
    r.V.resize(tk + 2);
    r.V[tk + 1] = GridFunction(G, std::move(term), e);
    for (int t = tk; t >= 0; --t) r.V[t] = backstep(ctx, r.V[t + 1], *keep[t], e, &fill);
    r.p = extreme_over_init(ctx, r.V[0], true);
    return r;
}

OsbfResult get_orbf(const BackwardContext& ctx, std::span<const ObservationEvent> obs, const Tail& tail) {
    if (ctx.model().mode != Mode::ReachAvoid) throw SchemaError("ORBF needs a reach-avoid model");
    return get_osbf(ctx, obs, tail);
}

// ---------------------------------------------------------------- value iteration

ValueIterationResult value_iteration_v(const BackwardContext& ctx, double eps, int max_iters) {
    if (!(eps > 0)) throw SchemaError("value iteration eps must be positive");
    const auto& m = ctx.model();
    const bool ra = m.mode == Mode::ReachAvoid;
    const double e = (!ra && m.exit == ExitPolicy::Safe) ? 0.0 : 1.0;
    const std::size_t N = ctx.grid()->size();
    const auto &in_x = ctx.in_x(), &in_u = ctx.in_u(), &in_t = ctx.in_t();

    std::vector<double> v0(N);
    for (std::size_t i = 0; i < N; ++i) v0[i] = !in_x[i] ? e : in_u[i] ? 1.0 : 0.0;
    ValueIterationResult r{GridFunction(ctx.grid(), std::move(v0), e), 0.0, 0};
    std::vector<double> nxt(N);
    for (int it = 1; it <= max_iters; ++it) {
        double resid = 0.0;
#pragma omp parallel for schedule(static) reduction(max : resid)
        for (std::int64_t si = 0; si < static_cast<std::int64_t>(N); ++si) {
            const auto i = static_cast<std::size_t>(si);
            double val;
            if (!in_x[i])
                val = e;
            else if (in_u[i])
                val = 1.0;
            else if (ra && in_t[i])
                val = 0.0;
            else
                val = ctx.expect(r.v, i);
            nxt[i] = val;
            resid = std::max(resid, std::abs(val - r.v.values[i]));
        }
        r.v.values.swap(nxt);
        r.residual = resid;
        r.iterations = it;
        if (resid < eps) return r;
    }
    throw NotConverged("value iteration did not reach eps=" + std::to_string(eps) + " in " +
                           std::to_string(max_iters) + " sweeps (residual " + std::to_string(r.residual) + ")",
                       std::move(r));
}

// ---------------------------------------------------------------- checker

double CheckReport::worst() const {
    double w = 0;
    for (const auto& [c, v] : violation) w = std::max(w, v);
    return w;
}

CheckReport check_certificate(const BackwardContext& ctx, std::span<const ObservationEvent> obs,
                              const std::vector<GridFunction>& fns, BarrierKind kind, double threshold,
                              const Tail* tail, double tol) {
    std::vector<NodeMask> storage;
    const auto keep = keep_masks(ctx, obs, storage);
    const int tk = static_cast<int>(keep.size()) - 1;
    if (fns.size() != static_cast<std::size_t>(tk + 2))
        throw DimensionMismatch("expected " + std::to_string(tk + 2) + " time slices, got " + std::to_string(fns.size()));
    const bool obf = kind == BarrierKind::OBF;
    if (!obf && !tail) throw SchemaError("OSBF/ORBF check needs the tail function");

    const std::size_t N = ctx.grid()->size();
    const auto &in_x = ctx.in_x(), &in_u = ctx.in_u();
    std::vector<bool> is_obs(tk + 1, false);
    for (const auto& e : obs) is_obs[e.time] = true;

    CheckReport rep;
    rep.tol = tol;
    auto bump = [&](int cond, double v) {
        double& slot = rep.violation[cond];
        slot = std::max(slot, v);
    };
    for (int c = 1; c <= (obf ? 5 : 6); ++c) rep.violation[c] = 0.0;

    for (int t = 0; t <= tk + 1; ++t)
        for (std::size_t i = 0; i < N; ++i) {
            if (!in_x[i]) continue;
            const double f = fns[t].values[i];
            bump(1, obf ? std::max(-f, f - 1.0) : -f);
        }
    for (std::size_t i = 0; i < N; ++i) {
        if (!ctx.in_init()[i]) continue;
        bump(2, obf ? threshold - fns[0].values[i] : fns[0].values[i] - threshold);
    }
    for (std::size_t i = 0; i < N; ++i) {
        if (!in_x[i]) continue;
        const double f = fns[tk + 1].values[i];
        if (obf)
            bump(3, std::abs(f - 1.0));
        else if (in_u[i])
            bump(3, 1.0 - f);
    }
    for (int t = 0; t <= tk; ++t) {
        const int cond = is_obs[t] ? 5 : 4;
        const NodeMask& k = *keep[t];
        double worst = 0.0;
#pragma omp parallel for schedule(static) reduction(max : worst)
        for (std::int64_t si = 0; si < static_cast<std::int64_t>(N); ++si) {
            const auto i = static_cast<std::size_t>(si);
            if (!in_x[i]) continue;
            const double ex = k[i] ? ctx.expect(fns[t + 1], i) : 0.0;
            const double f = fns[t].values[i];
            worst = std::max(worst, obf ? f - ex : ex - f);
        }
        bump(cond, worst);
    }
    if (!obf) {
        const NodeMask& dom = kind == BarrierKind::ORBF ? ctx.safe_interior() : ctx.x_minus_u();
        std::vector<double> x(ctx.grid()->dims());
        double worst = 0.0;
        if (tail->poly) {
            const auto& m = ctx.model();
            const Polynomial ev = poly_expect(poly_compose(*tail->poly, m.dynamics), m.noise);
            for (std::size_t i = 0; i < N; ++i) {
                if (!dom[i]) continue;
                ctx.grid()->node(i, x.data());
                worst = std::max(worst, ev.eval(x) - tail->poly->eval(x));
            }
        } else {
            const GridFunction& g = *tail->grid;
            for (std::size_t i = 0; i < N; ++i)
                if (dom[i]) worst = std::max(worst, ctx.expect(g, i) - g.values[i]);
        }
        bump(6, worst);
    }
    return rep;
}

}  // namespace obarrier
