#include "obarrier/sos.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "obarrier/errors.hpp"

namespace obarrier {

LinExpr& LinExpr::operator+=(const LinExpr& o) {
    constant += o.constant;
    for (const auto& [k, a] : o.coeffs) {
        double& c = coeffs[k];
        c += a;
        if (c == 0.0) coeffs.erase(k);
    }
    return *this;
}

LinExpr& LinExpr::operator*=(double s) {
    constant *= s;
    for (auto& [k, a] : coeffs) a *= s;
    if (s == 0.0) coeffs.clear();
    return *this;
}

bool LinExpr::is_zero() const { return constant == 0.0 && coeffs.empty(); }

AffinePoly AffinePoly::from(const Polynomial& p) {
    if (p.has_noise()) throw DimensionMismatch("AffinePoly: polynomial must be noise free");
    AffinePoly a(p.num_state_vars());
    for (const auto& [e, c] : p.terms()) a.add(e, LinExpr{c, {}});
    return a;
}

int AffinePoly::degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) {
        int s = 0;
        for (int k : e) s += k;
        d = std::max(d, s);
    }
    return d;
}

void AffinePoly::add(const Exponents& e, const LinExpr& c) {
    if (e.size() != nx_) throw DimensionMismatch("AffinePoly: exponent length");
    auto& t = terms_[e];
    t += c;
    if (t.is_zero()) terms_.erase(e);
}

AffinePoly& AffinePoly::operator+=(const AffinePoly& o) {
    if (o.nx_ != nx_) throw DimensionMismatch("AffinePoly: variable count");
    for (const auto& [e, c] : o.terms_) add(e, c);
    return *this;
}

AffinePoly& AffinePoly::operator-=(const AffinePoly& o) {
    AffinePoly neg = o;
    neg *= -1.0;
    return *this += neg;
}

AffinePoly& AffinePoly::operator*=(double s) {
    for (auto& [e, c] : terms_) c *= s;
    if (s == 0.0) terms_.clear();
    return *this;
}

Polynomial AffinePoly::evaluate(const std::vector<double>& ids) const {
    Polynomial p(nx_, 0);
    for (const auto& [e, c] : terms_) {
        double v = c.constant;
        for (const auto& [k, a] : c.coeffs) v += a * ids.at(static_cast<std::size_t>(k));
        if (v != 0.0) p.add_term(e, v);
    }
    return p;
}

AffinePoly PolyTemplate::affine() const {
    AffinePoly a(num_vars);
    for (std::size_t k = 0; k < basis.size(); ++k) a.add(basis[k], LinExpr{0.0, {{ids[k], 1.0}}});
    return a;
}

Polynomial PolyTemplate::instantiate(const std::vector<double>& values) const {
    Polynomial p(num_vars, 0);
    for (std::size_t k = 0; k < basis.size(); ++k) p.add_term(basis[k], values.at(static_cast<std::size_t>(ids[k])));
    return p;
}

int SosProgram::new_id(std::string name) {
    id_names.push_back(std::move(name));
    return num_ids++;
}

PolyTemplate SosProgram::new_template(int degree, const std::string& prefix) {
    PolyTemplate t;
    t.num_vars = num_vars;
    t.basis = monomials_up_to(num_vars, degree);
    for (std::size_t k = 0; k < t.basis.size(); ++k) t.ids.push_back(new_id(prefix + std::to_string(k)));
    return t;
}

namespace {
int even_ceil(int d) { return d + (d % 2); }
int even_floor(int d) { return d - (d % 2); }
}  // namespace

int putinar_encode(SosProgram& prog, const AffinePoly& p, const SemialgebraicSet& S, int mult_degree,
                   const std::string& group, bool flip_sign) {
    const int D = even_ceil(p.degree());
    int count = 0;
    for (const auto& conj : S.disjuncts()) {
        SosConstraint c{p, {}, group};
        for (const auto& g : conj) {
            int md = mult_degree > 0 ? even_floor(mult_degree) : even_floor(std::max(0, D - g.poly.degree()));
            prog.multipliers.push_back({prog.num_vars, md / 2});
            const int k = static_cast<int>(prog.multipliers.size()) - 1;
            c.products.emplace_back(k, flip_sign ? g.poly : -g.poly);
        }
        prog.constraints.push_back(std::move(c));
        ++count;
    }
    return count;
}

namespace {

// x = c + s * x~  ==>  inner_i(x~) = c_i + s_i x~_i
std::vector<Polynomial> forward_map(const std::vector<double>& c, const std::vector<double>& s, std::size_t nw) {
    const std::size_t n = c.size();
    std::vector<Polynomial> inner;
    for (std::size_t i = 0; i < n; ++i)
        inner.push_back(Polynomial::constant(n, nw, c[i]) + s[i] * Polynomial::state_var(n, nw, i));
    return inner;
}

SemialgebraicSet map_set(const SemialgebraicSet& S, const std::vector<Polynomial>& inner) {
    std::vector<Conjunction> ds;
    for (const auto& conj : S.disjuncts()) {
        Conjunction out;
        for (const auto& g : conj) out.push_back({poly_compose(g.poly, inner), g.rel});
        ds.push_back(std::move(out));
    }
    return SemialgebraicSet(S.num_vars(), std::move(ds));
}

struct ScaledModel {
    std::vector<Polynomial> F;
    SemialgebraicSet X, I, U;
    std::optional<SemialgebraicSet> T;
};

ScaledModel rescale(const SystemModel& m, const std::vector<double>& c, const std::vector<double>& s) {
    const std::size_t n = m.state_dim, nw = m.noise_dim();
    ScaledModel out;
    auto inner_noise = forward_map(c, s, nw);
    for (std::size_t i = 0; i < n; ++i) {
        Polynomial f = poly_substitute_state(m.dynamics[i], inner_noise);
        f -= Polynomial::constant(n, nw, c[i]);
        f *= 1.0 / s[i];
        out.F.push_back(std::move(f));
    }
    auto inner = forward_map(c, s, 0);
    out.X = map_set(m.X, inner);
    out.I = map_set(m.effective_init(), inner);
    out.U = map_set(m.U, inner);
    if (m.T) out.T = map_set(*m.T, inner);
    return out;
}

BuiltProgram build_common(const SystemModel& model, const SynthesisConfig& cfg, bool exclude_target) {
    if (cfg.degree < 2 || cfg.degree % 2) throw DegreeTooLow("template degree must be even and at least 2");
    const std::size_t n = model.state_dim;
    BuiltProgram b;
    b.center.assign(n, 0.0);
    b.scale.assign(n, 1.0);
    if (cfg.rescale) {
        for (std::size_t i = 0; i < n; ++i) {
            b.center[i] = 0.5 * (model.bounds.low[i] + model.bounds.high[i]);
            b.scale[i] = 0.5 * (model.bounds.high[i] - model.bounds.low[i]);
        }
    }
    ScaledModel sm = rescale(model, b.center, b.scale);
    b.exit_value = (model.mode == Mode::ReachAvoid || model.exit == ExitPolicy::Unsafe) ? 1.0 : 0.0;

    SosProgram& prog = b.program;
    prog.num_vars = n;
    b.v = prog.new_template(cfg.degree, "a");
    b.gamma_id = prog.new_id("gamma");
    prog.objective = LinExpr{0.0, {{b.gamma_id, 1.0}}};

    const AffinePoly v = b.v.affine();
    const Exponents zero(n, 0);

    AffinePoly gamma_minus_v(n);
    gamma_minus_v.add(zero, LinExpr{0.0, {{b.gamma_id, 1.0}}});
    gamma_minus_v -= v;
    putinar_encode(prog, gamma_minus_v, sm.I, cfg.mult_degree, "init", false);

    putinar_encode(prog, v, sm.X, cfg.mult_degree, "nonneg", false);

    AffinePoly v_minus_1 = v;
    v_minus_1.add(zero, LinExpr{-1.0, {}});
    // U outside X is covered by the exit group
    putinar_encode(prog, v_minus_1, sm.U.intersect(sm.X), cfg.mult_degree, "unsafe", cfg.flip_sign);

    // E[v(F(x, w))], one basis monomial at a time
    AffinePoly ev(n);
    for (std::size_t k = 0; k < b.v.basis.size(); ++k) {
        Polynomial mk = Polynomial::monomial(n, 0, b.v.basis[k]);
        Polynomial e = poly_expect(poly_compose(mk, sm.F), model.noise);
        for (const auto& [ex, c] : e.terms()) ev.add(ex, LinExpr{0.0, {{b.v.ids[k], c}}});
    }
    SemialgebraicSet region = sm.X.minus(sm.U);
    if (exclude_target && sm.T) region = region.minus(*sm.T);
    putinar_encode(prog, v - ev, region, cfg.mult_degree, "decrease", false);

    AffinePoly v_minus_e = v;
    if (b.exit_value != 0.0) v_minus_e.add(zero, LinExpr{-b.exit_value, {}});
    putinar_encode(prog, v_minus_e, sm.X.complement(), cfg.mult_degree, "exit", false);
    return b;
}

}  // namespace

BuiltProgram build_safety_program(const SystemModel& model, const SynthesisConfig& cfg) {
    if (model.mode != Mode::Safety) throw SchemaError("build_safety_program: model is not in safety mode");
    return build_common(model, cfg, false);
}

BuiltProgram build_ra_program(const SystemModel& model, const SynthesisConfig& cfg) {
    if (model.mode != Mode::ReachAvoid) throw SchemaError("build_ra_program: model is not in reach-avoid mode");
    return build_common(model, cfg, true);
}

BuiltProgram build_program(const SystemModel& model, const SynthesisConfig& cfg) {
    return model.mode == Mode::Safety ? build_safety_program(model, cfg) : build_ra_program(model, cfg);
}

namespace {

Exponents add_exp(const Exponents& a, const Exponents& b) {
    Exponents r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

int max_exp_sum(const Polynomial& p) { return p.degree(); }

}  // namespace

SdpLowering sos_to_sdp(const SosProgram& prog, int block_cap) {
    const std::size_t n = prog.num_vars;
    SdpLowering out;
    SdpProblem& sdp = out.sdp;
    sdp.num_free = prog.num_ids;
    sdp.free_cost.assign(static_cast<std::size_t>(prog.num_ids), 0.0);
    for (const auto& [k, a] : prog.objective.coeffs) sdp.free_cost[static_cast<std::size_t>(k)] = a;

    auto add_block = [&](int half) {
        auto basis = monomials_up_to(n, half);
        if (static_cast<int>(basis.size()) > block_cap)
            throw BasisTooLarge(fmt::format("Gram block of size {} exceeds cap {}", basis.size(), block_cap));
        sdp.block_sizes.push_back(static_cast<int>(basis.size()));
        return std::make_pair(static_cast<int>(sdp.block_sizes.size()) - 1, std::move(basis));
    };

    std::vector<std::vector<Exponents>> cbasis;
    for (const auto& c : prog.constraints) {
        int deg = c.base.degree();
        for (const auto& [k, h] : c.products)
            deg = std::max(deg, 2 * prog.multipliers.at(static_cast<std::size_t>(k)).half_degree + max_exp_sum(h));
        auto [blk, basis] = add_block((deg + 1) / 2);
        out.constraint_block.push_back(blk);
        cbasis.push_back(std::move(basis));
    }
    std::vector<std::vector<Exponents>> mbasis;
    for (const auto& m : prog.multipliers) {
        if (m.num_vars != n) throw DimensionMismatch("multiplier variable count");
        auto [blk, basis] = add_block(m.half_degree);
        out.multiplier_block.push_back(blk);
        mbasis.push_back(std::move(basis));
    }

    struct Row {
        std::map<std::tuple<int, int, int>, double> entries;
        std::map<int, double> free;
        double rhs = 0.0;
    };
    for (std::size_t ci = 0; ci < prog.constraints.size(); ++ci) {
        const auto& c = prog.constraints[ci];
        std::map<Exponents, Row> rows;
        const auto& z = cbasis[ci];
        const int qb = out.constraint_block[ci];
        for (std::size_t a = 0; a < z.size(); ++a)
            for (std::size_t b = a; b < z.size(); ++b)
                rows[add_exp(z[a], z[b])].entries[{qb, static_cast<int>(a), static_cast<int>(b)}] += 1.0;
        for (const auto& [e, lin] : c.base.terms()) {
            Row& r = rows[e];
            r.rhs += lin.constant;
            for (const auto& [k, a] : lin.coeffs) r.free[k] -= a;
        }
        for (const auto& [k, h] : c.products) {
            const auto& zk = mbasis[static_cast<std::size_t>(k)];
            const int sb = out.multiplier_block[static_cast<std::size_t>(k)];
            for (std::size_t a = 0; a < zk.size(); ++a)
                for (std::size_t b = a; b < zk.size(); ++b) {
                    Exponents ab = add_exp(zk[a], zk[b]);
                    for (const auto& [beta, hv] : h.terms())
                        rows[add_exp(ab, beta)].entries[{sb, static_cast<int>(a), static_cast<int>(b)}] -= hv;
                }
        }
        for (auto& [e, r] : rows) {
            SdpEquality eq;
            eq.rhs = r.rhs;
            for (const auto& [key, v] : r.entries)
                if (v != 0.0) eq.entries.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v});
            for (const auto& [k, v] : r.free)
                if (v != 0.0) eq.free.emplace_back(k, v);
            if (eq.entries.empty()) {
                // monomial outside every Gram support: only satisfiable if it vanishes identically
                if (eq.free.empty() && eq.rhs == 0.0) continue;
            }
            sdp.equalities.push_back(std::move(eq));
        }
    }
    return out;
}

Polynomial gram_polynomial(std::size_t nx, int half_degree, const Eigen::MatrixXd& Q) {
    auto z = monomials_up_to(nx, half_degree);
    Polynomial p(nx, 0);
    for (std::size_t a = 0; a < z.size(); ++a)
        for (std::size_t b = 0; b < z.size(); ++b)
            p.add_term(add_exp(z[a], z[b]), Q(static_cast<long>(a), static_cast<long>(b)));
    return p;
}

std::map<std::string, double> certificate_residuals(const Polynomial& v, double gamma, const SystemModel& model,
                                                    int samples, std::uint64_t seed) {
    const std::size_t n = model.state_dim;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    CompiledPolynomial cv(v);
    Polynomial ev_poly = poly_expect(poly_compose(v, model.dynamics), model.noise);
    CompiledPolynomial cev(ev_poly);
    const double exit_value = (model.mode == Mode::ReachAvoid || model.exit == ExitPolicy::Unsafe) ? 1.0 : 0.0;

    SemialgebraicSet region = model.X.minus(model.U);
    if (model.mode == Mode::ReachAvoid && model.T) region = region.minus(*model.T);
    CompiledSet cX(model.X), cI(model.effective_init()), cU(model.U.intersect(model.X)), cR(region);

    Box outer = model.bounds;
    for (std::size_t i = 0; i < n; ++i) {
        double w = outer.high[i] - outer.low[i];
        outer.low[i] -= 0.5 * w;
        outer.high[i] += 0.5 * w;
    }

    std::vector<double> x(n);
    auto sample_in = [&](const Box& box, auto&& accept, auto&& violation) {
        double worst = 0.0;
        long got = 0;
        for (long tries = 0; got < samples && tries < 200L * samples; ++tries) {
            for (std::size_t i = 0; i < n; ++i) x[i] = box.low[i] + (box.high[i] - box.low[i]) * unit(rng);
            if (!accept(x.data())) continue;
            ++got;
            worst = std::max(worst, violation(x.data()));
        }
        return worst;
    };

    std::map<std::string, double> r;
    r["init"] = sample_in(model.init_bounds, [&](const double* p) { return cI.contains(p); },
                          [&](const double* p) { return cv(p, nullptr) - gamma; });
    r["nonneg"] = sample_in(model.bounds, [&](const double* p) { return cX.contains(p); },
                            [&](const double* p) { return -cv(p, nullptr); });
    r["unsafe"] = cU.empty() ? 0.0
                             : sample_in(model.bounds, [&](const double* p) { return cU.contains(p); },
                                         [&](const double* p) { return 1.0 - cv(p, nullptr); });
    r["decrease"] = sample_in(model.bounds, [&](const double* p) { return cR.contains(p); },
                              [&](const double* p) { return cev(p, nullptr) - cv(p, nullptr); });
    r["exit"] = sample_in(outer, [&](const double* p) { return !cX.contains(p); },
                          [&](const double* p) { return exit_value - cv(p, nullptr); });
    return r;
}

Certificate extract_and_verify(const SdpSolution& sol, const BuiltProgram& built, const SystemModel& model,
                               const SynthesisConfig& cfg) {
    if (sol.status != SdpStatus::Optimal && sol.status != SdpStatus::Inaccurate)
        throw SynthesisFailed("solver status " + to_string(sol.status) + ": " + sol.message);
    const std::size_t n = model.state_dim;
    Certificate cert;
    Polynomial vs = built.v.instantiate(sol.u);
    std::vector<Polynomial> back;
    for (std::size_t i = 0; i < n; ++i)
        back.push_back((Polynomial::state_var(n, 0, i) - Polynomial::constant(n, 0, built.center[i])) *
                       (1.0 / built.scale[i]));
    cert.v = poly_compose(vs, back);
    cert.gamma = std::max(0.0, sol.u.at(static_cast<std::size_t>(built.gamma_id)));
    cert.degree = cfg.degree;
    cert.solver_status = to_string(sol.status);
    cert.residuals = certificate_residuals(cert.v, cert.gamma, model, cfg.verify_samples, cfg.seed);
    double worst = 0.0;
    std::string which;
    for (const auto& [k, r] : cert.residuals)
        if (r > worst) {
            worst = r;
            which = k;
        }
    if (worst > cfg.verify_tol)
        throw VerificationFailed(fmt::format("certificate condition \"{}\" violated by {:.3e}", which, worst));
    cert.certified = true;
    return cert;
}

Certificate synthesize(const SystemModel& model, const SynthesisConfig& cfg, const SolverInterface& solver) {
    BuiltProgram built = build_program(model, cfg);
    SdpLowering low = sos_to_sdp(built.program, cfg.block_cap);
    SdpSolution sol = solver.solve(low.sdp);
    return extract_and_verify(sol, built, model, cfg);
}

nlohmann::json certificate_to_json(const Certificate& c) {
    return nlohmann::json{{"gamma", c.gamma},       {"v", poly_to_json(c.v)},
                          {"degree", c.degree},     {"residuals", c.residuals},
                          {"certified", c.certified}, {"solver_status", c.solver_status}};
}

Certificate certificate_from_json(const nlohmann::json& j, std::size_t nx) {
    try {
        Certificate c;
        c.gamma = j.at("gamma").get<double>();
        c.v = poly_from_json(j.at("v"), nx, 0);
        c.degree = j.value("degree", c.v.degree());
        if (j.contains("residuals")) c.residuals = j["residuals"].get<std::map<std::string, double>>();
        c.certified = j.value("certified", false);
        c.solver_status = j.value("solver_status", "");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("certificate: ") + e.what());
    }
}

void save_certificate(const Certificate& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << certificate_to_json(c).dump(1) << "\n";
}

Certificate load_certificate(const std::filesystem::path& path, std::size_t nx) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open certificate " + path.string());
    try {
        return certificate_from_json(nlohmann::json::parse(in), nx);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace obarrier
