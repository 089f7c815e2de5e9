#include "obarrier/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "obarrier/errors.hpp"

namespace obarrier {

using nlohmann::json;

bool Box::contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < low.size(); ++i)
        if (x[i] < low[i] || x[i] > high[i]) return false;
    return true;
}

void SystemModel::step(std::span<const double> x, std::span<const double> w, std::span<double> out) const {
    for (std::size_t i = 0; i < state_dim; ++i) out[i] = dynamics[i].eval(x, w);
}

namespace {

// Scan a cube of half-width r at `per_axis` points per axis. Returns the member
// hull (empty box if none) and whether any member touched the outer layer.
struct ScanResult {
    bool any = false;
    bool touches = false;
    std::vector<double> lo, hi;
};

ScanResult scan(const CompiledSet& cs, std::size_t n, const std::vector<double>& c, double r, int per_axis) {
    ScanResult res;
    res.lo.assign(n, INFINITY);
    res.hi.assign(n, -INFINITY);
    std::vector<int> idx(n, 0);
    std::vector<double> x(n);
    const double h = 2 * r / (per_axis - 1);
    while (true) {
        bool edge = false;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = c[i] - r + h * idx[i];
            if (idx[i] == 0 || idx[i] == per_axis - 1) edge = true;
        }
        if (cs.contains(x.data())) {
            res.any = true;
            if (edge) res.touches = true;
            for (std::size_t i = 0; i < n; ++i) {
                res.lo[i] = std::min(res.lo[i], x[i]);
                res.hi[i] = std::max(res.hi[i], x[i]);
            }
        }
        std::size_t k = 0;
        while (k < n && ++idx[k] == per_axis) idx[k++] = 0;
        if (k == n) break;
    }
    return res;
}

}  // namespace

Box derive_bounding_box(const SemialgebraicSet& s, double max_radius) {
    const std::size_t n = s.num_vars();
    const int per_axis = n <= 1 ? 4001 : n == 2 ? 401 : 61;
    CompiledSet cs(s);
    std::vector<double> c(n, 0.0);
    // grow until the set is found and enclosed
    double r = 1.0;
    ScanResult res;
    for (;; r *= 2) {
        if (r > max_radius) throw SchemaError("cannot bound set: empty or unbounded within scan radius");
        res = scan(cs, n, c, r, per_axis);
        if (res.any && !res.touches) break;
    }
    // refine around the hull found
    const double h = 2 * r / (per_axis - 1);
    double rr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        c[i] = 0.5 * (res.lo[i] + res.hi[i]);
        rr = std::max(rr, 0.5 * (res.hi[i] - res.lo[i]) + 2 * h);
    }
    ScanResult fine = scan(cs, n, c, rr, per_axis);
    if (fine.any && !fine.touches) res = fine;
    const double hf = fine.any && !fine.touches ? 2 * rr / (per_axis - 1) : h;
    Box b;
    for (std::size_t i = 0; i < n; ++i) {
        b.low.push_back(res.lo[i] - hf);
        b.high.push_back(res.hi[i] + hf);
    }
    return b;
}

namespace {

// Per-axis bounds from single-variable linear atoms, infinite where unconstrained.
// Empty when every disjunct is.
std::optional<Box> interval_hull(const SemialgebraicSet& s) {
    const std::size_t n = s.num_vars();
    std::optional<Box> hull;
    for (const auto& conj : s.disjuncts()) {
        std::vector<double> lo(n, -INFINITY), hi(n, INFINITY);
        for (const auto& c : conj) {
            double a = 0, b = 0;
            int axis = -1;
            bool linear = true;
            for (const auto& [e, coef] : c.poly.terms()) {
                int deg = 0, at = -1;
                for (std::size_t i = 0; i < e.size(); ++i)
                    if (e[i] != 0) deg += e[i], at = static_cast<int>(i);
                if (deg == 0)
                    a += coef;
                else if (deg == 1 && (axis < 0 || axis == at))
                    axis = at, b += coef;
                else
                    linear = false;
            }
            if (!linear || axis < 0 || b == 0) continue;
            const auto i = static_cast<std::size_t>(axis);
            if (b > 0)
                lo[i] = std::max(lo[i], -a / b);
            else
                hi[i] = std::min(hi[i], -a / b);
        }
        bool empty = false;
        for (std::size_t i = 0; i < n; ++i) empty = empty || lo[i] > hi[i];
        if (empty) continue;
        if (!hull) hull = Box{lo, hi};
        for (std::size_t i = 0; i < n; ++i) {
            hull->low[i] = std::min(hull->low[i], lo[i]);
            hull->high[i] = std::max(hull->high[i], hi[i]);
        }
    }
    return hull;
}

}  // namespace

std::optional<Box> linear_box_hull(const SemialgebraicSet& s) {
    auto h = interval_hull(s);
    if (h)
        for (std::size_t i = 0; i < h->dims(); ++i)
            if (!std::isfinite(h->low[i]) || !std::isfinite(h->high[i])) return std::nullopt;
    return h;
}

bool hulls_separated(const SemialgebraicSet& a, const SemialgebraicSet& b) {
    const auto ha = interval_hull(a), hb = interval_hull(b);
    if (!ha || !hb) return true;  // an empty side
    for (std::size_t i = 0; i < ha->dims(); ++i)
        if (ha->high[i] < hb->low[i] || hb->high[i] < ha->low[i]) return true;
    return false;
}

void check_disjoint(const SemialgebraicSet& a, const Box& box, const SemialgebraicSet& u, const std::string& what,
                    std::size_t samples, std::uint64_t seed) {
    if (u.is_empty_syntactically() || a.is_empty_syntactically()) return;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n = a.num_vars();
    CompiledSet ca(a), cu(u);
    std::vector<double> x(n);
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t i = 0; i < n; ++i) x[i] = box.low[i] + (box.high[i] - box.low[i]) * unit(rng);
        if (ca.contains(x.data()) && cu.contains(x.data())) {
            std::string pt;
            for (double v : x) pt += (pt.empty() ? "" : ", ") + std::to_string(v);
            throw WellPosednessError(what + " intersects U at (" + pt + ")");
        }
    }
}

Polynomial poly_from_json(const json& j, std::size_t nx, std::size_t nw) {
    if (!j.is_object() || !j.contains("terms") || !j["terms"].is_array())
        throw SchemaError("poly must be an object with a \"terms\" array");
    Polynomial p(nx, nw);
    for (const auto& t : j["terms"]) {
        if (!t.contains("c") || !t["c"].is_number()) throw SchemaError("poly term needs numeric \"c\"");
        Exponents e(nx + nw, 0);
        auto read = [&](const char* key, std::size_t offset, std::size_t count) {
            if (!t.contains(key)) return;
            const auto& a = t[key];
            if (!a.is_array()) throw SchemaError(std::string("poly term field \"") + key + "\" must be an array");
            if (a.size() != count && !(a.empty()))
                throw SchemaError(std::string("poly term \"") + key + "\" has length " + std::to_string(a.size()) +
                                  ", expected " + std::to_string(count));
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (!a[i].is_number_integer() || a[i].get<int>() < 0)
                    throw SchemaError("exponents must be nonnegative integers");
                e[offset + i] = a[i].get<int>();
            }
        };
        read("x", 0, nx);
        read("w", nx, nw);
        p.add_term(e, t["c"].get<double>());
    }
    return p;
}

json poly_to_json(const Polynomial& p) {
    const std::size_t nx = p.num_state_vars();
    json terms = json::array();
    for (const auto& [e, c] : p.terms()) {
        json t{{"c", c}, {"x", std::vector<int>(e.begin(), e.begin() + static_cast<long>(nx))}};
        if (p.num_noise_vars() > 0) t["w"] = std::vector<int>(e.begin() + static_cast<long>(nx), e.end());
        terms.push_back(std::move(t));
    }
    return json{{"terms", terms}};
}

SemialgebraicSet set_from_json(const json& j, std::size_t nx) {
    if (!j.is_object()) throw SchemaError("set must be an object");
    if (j.contains("box")) {
        auto lo = j["box"].at("low").get<std::vector<double>>();
        auto hi = j["box"].at("high").get<std::vector<double>>();
        if (lo.size() != nx || hi.size() != nx) throw SchemaError("box dimension mismatch");
        return SemialgebraicSet::box(lo, hi);
    }
    if (j.contains("ball")) {
        auto c = j["ball"].at("center").get<std::vector<double>>();
        if (c.size() != nx) throw SchemaError("ball dimension mismatch");
        return SemialgebraicSet::ball(c, j["ball"].at("radius").get<double>());
    }
    if (!j.contains("disjuncts") || !j["disjuncts"].is_array()) throw SchemaError("set needs a \"disjuncts\" array");
    std::vector<Conjunction> ds;
    for (const auto& d : j["disjuncts"]) {
        if (!d.is_array()) throw SchemaError("each disjunct must be an array of constraints");
        Conjunction conj;
        for (const auto& c : d) {
            if (!c.is_object() || !c.contains("poly")) throw SchemaError("constraint needs \"poly\"");
            std::string rel = c.value("rel", "ge");
            if (rel != "ge" && rel != "gt") throw SchemaError("constraint rel must be \"ge\" or \"gt\"");
            conj.push_back({poly_from_json(c["poly"], nx, 0), rel == "gt" ? Relation::Gt : Relation::Ge});
        }
        ds.push_back(std::move(conj));
    }
    return SemialgebraicSet(nx, std::move(ds));
}

json set_to_json(const SemialgebraicSet& s) {
    json ds = json::array();
    for (const auto& conj : s.disjuncts()) {
        json d = json::array();
        for (const auto& c : conj) d.push_back({{"poly", poly_to_json(c.poly)}, {"rel", c.rel == Relation::Gt ? "gt" : "ge"}});
        ds.push_back(std::move(d));
    }
    return json{{"disjuncts", ds}};
}

namespace {

NoiseDistribution dist_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "uniform_symmetric") return UniformSymmetric{};
    if (kind == "atoms") {
        DiscreteAtoms d;
        for (const auto& a : j.at("atoms")) {
            if (!a.is_array() || a.size() != 2) throw SchemaError("atom must be [value, weight]");
            d.atoms.emplace_back(a[0].get<double>(), a[1].get<double>());
        }
        return d;
    }
    throw SchemaError("unknown noise kind \"" + kind + "\"");
}

NoiseSpec noise_from_json(const json& j, std::size_t nw) {
    std::vector<NoiseDistribution> dims;
    if (j.is_array()) {
        if (j.size() != nw) throw SchemaError("noise list length differs from noise_dim");
        for (const auto& d : j) dims.push_back(dist_from_json(d));
    } else if (j.is_object() && j.value("kind", "") == "atoms" && j.contains("atoms") && !j["atoms"].empty() &&
               j["atoms"][0].is_array() && !j["atoms"][0].empty() && j["atoms"][0][0].is_array()) {
        // per-dimension atom lists
        if (j["atoms"].size() != nw) throw SchemaError("atoms list length differs from noise_dim");
        for (const auto& per : j["atoms"]) dims.push_back(dist_from_json(json{{"kind", "atoms"}, {"atoms", per}}));
    } else {
        dims.assign(nw, dist_from_json(j));
    }
    return NoiseSpec(std::move(dims));
}

json noise_to_json(const NoiseSpec& n) {
    json out = json::array();
    for (std::size_t j = 0; j < n.dims(); ++j) {
        if (std::holds_alternative<UniformSymmetric>(n.dim(j))) {
            out.push_back({{"kind", "uniform_symmetric"}});
        } else {
            json atoms = json::array();
            for (const auto& [v, w] : std::get<DiscreteAtoms>(n.dim(j)).atoms) atoms.push_back({v, w});
            out.push_back({{"kind", "atoms"}, {"atoms", atoms}});
        }
    }
    return out;
}

// init_bounds may be degenerate (a point initial set); state bounds may not
Box box_from_json(const json& j, std::size_t n, bool allow_flat = false) {
    Box b{j.at("low").get<std::vector<double>>(), j.at("high").get<std::vector<double>>()};
    if (b.low.size() != n || b.high.size() != n) throw SchemaError("bounds dimension mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (!(b.low[i] < b.high[i] || (allow_flat && b.low[i] == b.high[i])))
            throw SchemaError("bounds need low < high on every axis");
    return b;
}

// f(x, u, w) with u = pi(x): dynamics given over n + m state slots.
std::vector<Polynomial> compose_policy(const std::vector<Polynomial>& f, const std::vector<Polynomial>& pi,
                                       std::size_t n, std::size_t nw) {
    const std::size_t m = pi.size();
    std::vector<Polynomial> inner;
    for (std::size_t i = 0; i < n; ++i) inner.push_back(Polynomial::state_var(n, nw, i));
    for (const auto& p : pi) inner.push_back(p.with_noise_vars(nw));
    for (std::size_t j = 0; j < nw; ++j) inner.push_back(Polynomial::noise_var(n, nw, j));
    std::vector<Polynomial> out;
    for (const auto& fi : f) {
        // view noise variables of fi as trailing "state" slots so the outer is noise free
        Polynomial outer(n + m + nw, 0);
        for (const auto& [e, c] : fi.terms()) outer.add_term(e, c);
        out.push_back(poly_compose(outer, inner));
    }
    return out;
}

}  // namespace

SystemModel model_from_json(const json& j) {
    try {
        SystemModel m;
        m.name = j.value("name", "");
        m.state_dim = j.at("state_dim").get<std::size_t>();
        const std::size_t n = m.state_dim;
        const std::size_t nw = j.value("noise_dim", std::size_t{0});
        if (n == 0) throw SchemaError("state_dim must be positive");
        std::string mode = j.value("mode", "safety");
        if (mode == "safety")
            m.mode = Mode::Safety;
        else if (mode == "reach-avoid" || mode == "reach_avoid")
            m.mode = Mode::ReachAvoid;
        else
            throw SchemaError("mode must be \"safety\" or \"reach-avoid\"");
        m.asserts_absorption = j.value("asserts_absorption", false);

        m.noise = nw > 0 ? noise_from_json(j.at("noise"), nw) : NoiseSpec{};

        const auto& dyn = j.at("dynamics");
        if (!dyn.is_array() || dyn.size() != n) throw SchemaError("dynamics must list state_dim polynomials");
        std::vector<Polynomial> f;
        if (j.contains("policy")) {
            const auto& pj = j["policy"];
            if (!pj.is_array()) throw SchemaError("policy must be an array of polynomials");
            std::vector<Polynomial> pi;
            for (const auto& p : pj) pi.push_back(poly_from_json(p, n, 0));
            for (const auto& d : dyn) f.push_back(poly_from_json(d, n + pi.size(), nw));
            m.dynamics = compose_policy(f, pi, n, nw);
        } else {
            for (const auto& d : dyn) m.dynamics.push_back(poly_from_json(d, n, nw));
        }

        m.X = set_from_json(j.at("X"), n);
        m.I = set_from_json(j.at("I"), n);
        m.U = j.contains("U") ? set_from_json(j["U"], n) : SemialgebraicSet::empty(n);
        if (j.contains("T") && !j["T"].is_null()) m.T = set_from_json(j["T"], n);
        if (m.mode == Mode::ReachAvoid && !m.T) throw SchemaError("reach-avoid mode requires a target set T");

        std::string exit = j.value("exit", "unsafe");
        if (exit == "unsafe")
            m.exit = ExitPolicy::Unsafe;
        else if (exit == "safe")
            m.exit = ExitPolicy::Safe;
        else
            throw SchemaError("exit must be \"unsafe\" or \"safe\"");
        if (m.mode == Mode::ReachAvoid && m.exit == ExitPolicy::Safe)
            throw SchemaError("exit \"safe\" is not meaningful in reach-avoid mode: leaving X never reaches T");

        m.bounds = j.contains("bounds") ? box_from_json(j["bounds"], n) : derive_bounding_box(m.X);
        m.init_bounds = j.contains("init_bounds") ? box_from_json(j["init_bounds"], n, true)
                                                  : derive_bounding_box(m.effective_init());

        check_disjoint(m.effective_init(), m.init_bounds, m.U, "initial set");
        if (m.T) check_disjoint(*m.T, m.bounds, m.U, "target set");
        return m;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model schema: ") + e.what());
    }
}

json model_to_json(const SystemModel& m) {
    json dyn = json::array();
    for (const auto& p : m.dynamics) dyn.push_back(poly_to_json(p));
    json j{{"name", m.name},
           {"state_dim", m.state_dim},
           {"noise_dim", m.noise_dim()},
           {"mode", m.mode == Mode::Safety ? "safety" : "reach-avoid"},
           {"asserts_absorption", m.asserts_absorption},
           {"exit", m.exit == ExitPolicy::Unsafe ? "unsafe" : "safe"},
           {"dynamics", dyn},
           {"noise", noise_to_json(m.noise)},
           {"X", set_to_json(m.X)},
           {"I", set_to_json(m.I)},
           {"U", set_to_json(m.U)},
           {"bounds", {{"low", m.bounds.low}, {"high", m.bounds.high}}},
           {"init_bounds", {{"low", m.init_bounds.low}, {"high", m.init_bounds.high}}}};
    if (m.T) j["T"] = set_to_json(*m.T);
    return j;
}

SystemModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    SystemModel m = model_from_json(j);
    if (m.name.empty()) m.name = path.stem().string();
    return m;
}

}  // namespace obarrier
