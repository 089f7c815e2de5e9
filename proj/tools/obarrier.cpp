#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "obarrier/mc.hpp"
#include "obarrier/predictor.hpp"
#include "obarrier/validate.hpp"

using namespace obarrier;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kSynthesis = 2, kVanishing = 3, kMalformed = 4, kViolation = 5 };

// offline column of the published table
const std::map<std::string, double> kPublishedOffline{
    {"arch", 0.813},   {"descent", 0.704},  {"osc", 0.436},      {"vanderpol1", 0.343}, {"vanderpol2", 0.158},
    {"liederivative", 0.246}, {"equil", 0.357}, {"lyapunov", 0.226}, {"lotka", 0.504}};
const std::vector<std::string> kBenchmarks{"arch",          "descent", "osc",      "vanderpol1", "vanderpol2",
                                           "liederivative", "equil",   "lyapunov", "lotka"};

struct RunConfig {
    std::string model;
    int grid_res = 0;
    int quad_order = 8;
    int degree = 4;
    int mult_degree = 0;
    int horizon = 0;
    long long samples = 50000;
    double confidence = 0.95;
    std::uint64_t seed = 1;
    std::string obs, cert, out, log;
    bool fallback_vi = false;
    bool flip_sign = false;  // hidden test hook

    PredictorConfig predictor() const {
        PredictorConfig c;
        c.grid_res = grid_res;
        c.quad_order = quad_order;
        c.synth.degree = degree;
        c.synth.mult_degree = mult_degree;
        c.synth.seed = seed;
        c.synth.flip_sign = flip_sign;
        if (flip_sign) c.synth.verify_tol = 1e9;
        c.fallback_vi = fallback_vi;
        c.seed = seed;
        return c;
    }
};

void add_common(CLI::App* app, RunConfig& c, bool model_required = true) {
    auto* m = app->add_option("--model,model", c.model, "model JSON file");
    if (model_required) m->required();
    app->add_option("--grid-res", c.grid_res, "grid nodes per axis (0: 801/201/81 by dimension)")->check(CLI::NonNegativeNumber);
    app->add_option("--quad-order", c.quad_order, "Gauss-Legendre points per noise dimension")->check(CLI::PositiveNumber);
    app->add_option("--degree", c.degree, "certificate template degree")->check(CLI::PositiveNumber);
    app->add_option("--mult-degree", c.mult_degree, "SOS multiplier degree (0: automatic)")->check(CLI::NonNegativeNumber);
    app->add_option("--horizon", c.horizon, "Monte-Carlo horizon H (0: model default)")->check(CLI::NonNegativeNumber);
    app->add_option("--samples", c.samples, "Monte-Carlo sample count N")->check(CLI::PositiveNumber);
    app->add_option("--confidence", c.confidence, "confidence level")->check(CLI::Range(0.5, 0.999999));
    app->add_option("--seed", c.seed, "random seed");
    app->add_flag("--fallback-vi", c.fallback_vi, "use a value-iteration tail when synthesis fails");
    app->add_flag("--flip-sign", c.flip_sign)->group("");  // mis-signed encoding, verification off
}

std::unique_ptr<std::ostream> open_out(const std::string& path) {
    if (path.empty() || path == "-") return nullptr;
    auto f = std::make_unique<std::ofstream>(path);
    if (!*f) throw Error("cannot write " + path);
    return f;
}

PredictionSession make_session(const RunConfig& c, const SystemModel& m) {
    if (!c.cert.empty()) return PredictionSession::from_certificate(m, c.predictor(), load_certificate(c.cert, m.state_dim));
    auto solver = solver_from_env();
    return PredictionSession::init_offline(m, c.predictor(), solver.get());
}

void print_warnings(const PredictionSession& s) {
    for (const auto& w : s.warnings()) fmt::print(stderr, "warning: {}\n", w);
}

int cmd_synthesize(const RunConfig& c) {
    const SystemModel m = load_model(c.model);
    auto solver = solver_from_env();
    if (!solver) {
        fmt::print(stderr, "synthesis failed: OBARRIER_SOLVER=none\n");
        return kSynthesis;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Certificate cert;
    try {
        cert = synthesize(m, c.predictor().synth, *solver);
    } catch (const SynthesisFailed& e) {
        fmt::print(stderr, "synthesis failed: {}\n", e.what());
        return kSynthesis;
    } catch (const VerificationFailed& e) {
        fmt::print(stderr, "synthesis failed: {}\n", e.what());
        return kSynthesis;
    } catch (const BasisTooLarge& e) {
        fmt::print(stderr, "synthesis failed: {}\n", e.what());
        return kSynthesis;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string out = c.out.empty() ? m.name + ".cert.json" : c.out;
    save_certificate(cert, out);
    fmt::print("model {}\ngamma {:.6f}\noffline bound {:.6f}\ntime (off.) {:.2f}s\ncertificate {}\n", m.name, cert.gamma,
               cert.offline_bound(), secs, out);
    return kOk;
}

int stream(const RunConfig& c, std::istream& in, std::ostream& out, bool flush) {
    const SystemModel m = load_model(c.model);
    PredictionSession s = [&] {
        try {
            return make_session(c, m);
        } catch (const SynthesisFailed& e) {
            fmt::print(stderr, "synthesis failed: {}\n", e.what());
            std::exit(kSynthesis);
        }
    }();
    print_warnings(s);
    auto log = open_out(c.log);
    StreamOptions opt;
    opt.flush = flush;
    opt.log = log.get();
    opt.model_path = c.model;
    out << report_to_json(s.last_report()).dump() << '\n';
    if (flush) out.flush();
    try {
        run_stream(s, in, out, opt);
    } catch (const MalformedInput& e) {
        out.flush();
        fmt::print(stderr, "malformed input: {}\n", e.what());
        return kMalformed;
    } catch (const VanishingObservationProbability& e) {
        out.flush();
        fmt::print(stderr, "{}\n", e.what());
        return kVanishing;
    }
    return kOk;
}

int cmd_predict(const RunConfig& c) {
    std::ifstream in(c.obs);
    if (!in) throw Error("cannot read " + c.obs);
    auto f = open_out(c.out);
    return stream(c, in, f ? *f : std::cout, false);
}

int cmd_monitor(const RunConfig& c) { return stream(c, std::cin, std::cout, true); }

std::vector<ObservationEvent> read_events(const std::string& path, std::size_t nx) {
    std::vector<ObservationEvent> ev;
    if (path.empty()) return ev;
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    long long n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            ev.push_back(event_from_json(json::parse(line), nx));
        } catch (const json::exception& e) {
            throw MalformedInput(e.what(), n);
        } catch (const SchemaError& e) {
            throw MalformedInput(e.what(), n);
        }
    }
    return ev;
}

json interval_json(const IntervalEstimate& e) {
    return json{{"point", e.point}, {"ci", {e.lower, e.upper}}, {"n", e.n}, {"successes", e.successes},
                {"confidence", e.confidence}};
}

int cmd_simulate(const RunConfig& c, int trajectories) {
    const SystemModel m = load_model(c.model);
    const int H = c.horizon > 0 ? c.horizon : default_horizon(m);
    McOptions o;
    o.seed = c.seed;
    o.confidence = c.confidence;
    json j{{"model", m.name}, {"horizon", H}, {"seed", c.seed}};
    const auto obs = read_events(c.obs, m.state_dim);
    if (obs.empty()) {
        const auto s = estimate_safety(m, H, c.samples, o);
        j["estimate"] = interval_json(s.overall);
        j["min_start"] = s.min_start;
    } else {
        try {
            const auto r = estimate_conditional(m, obs, H, c.samples, 40 * c.samples, o);
            j["estimate"] = interval_json(r.estimate);
            j["attempts"] = r.attempts;
            j["acceptance_rate"] = r.acceptance_rate;
        } catch (const TooFewAccepted& e) {
            fmt::print(stderr, "{}\n", e.what());
            return kVanishing;
        }
    }
    if (trajectories > 0) {
        Simulator sim(m);
        json runs = json::array();
        for (int k = 0; k < trajectories; ++k) {
            TrajectoryRng rng(c.seed, static_cast<std::uint64_t>(k));
            const auto x0 = sim.sample_initial(rng);
            const auto r = sim.run(x0, H, rng);
            runs.push_back({{"x0", x0}, {"outcome", to_string(r.outcome)}, {"step", r.step}});
        }
        j["runs"] = runs;
    }
    auto f = open_out(c.out);
    (f ? *f : std::cout) << j.dump(1) << '\n';
    return kOk;
}

int cmd_validate(const RunConfig& c, const ValidationOptions& base) {
    const SystemModel m = load_model(c.model);
    PredictionSession s = [&] {
        try {
            return make_session(c, m);
        } catch (const SynthesisFailed& e) {
            fmt::print(stderr, "synthesis failed: {}\n", e.what());
            std::exit(kSynthesis);
        }
    }();
    print_warnings(s);
    ValidationOptions opt = base;
    opt.horizon = c.horizon;
    opt.samples = c.samples;
    opt.confidence = c.confidence;
    opt.seed = c.seed;
    const ValidationResult v = validate_session(s, opt);
    auto f = open_out(c.out);
    (f ? *f : std::cout) << validation_to_json(v).dump(1) << '\n';
    fmt::print(stderr, "{}: {} records, {} violated, {} inconclusive\n", m.name, v.records.size(), v.violations(),
               v.inconclusive());
    return v.violations() > 0 ? kViolation : kOk;
}

// boundary of a set as crossing points along grid edges, refined by bisection
std::vector<std::vector<double>> boundary_points(const SemialgebraicSet& s, const Grid& g) {
    std::vector<std::vector<double>> pts;
    if (s.is_empty_syntactically()) return pts;
    const CompiledSet cs(s);
    const std::size_t n = g.dims();
    std::vector<double> a(n), b(n), mid(n);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, a.data());
        const bool ia = cs.contains(a.data());
        for (std::size_t d = 0; d < n; ++d) {
            if ((i / g.stride(d)) % static_cast<std::size_t>(g.counts[d]) + 1 >= static_cast<std::size_t>(g.counts[d])) continue;
            g.node(i + g.stride(d), b.data());
            if (cs.contains(b.data()) == ia) continue;
            std::vector<double> lo = a, hi = b;
            for (int it = 0; it < 30; ++it) {
                for (std::size_t k = 0; k < n; ++k) mid[k] = 0.5 * (lo[k] + hi[k]);
                (cs.contains(mid.data()) == ia ? lo : hi) = mid;
            }
            pts.push_back(lo);
        }
    }
    return pts;
}

int cmd_plot_data(const RunConfig& c, int trajectories) {
    const SystemModel m = load_model(c.model);
    const int H = c.horizon > 0 ? c.horizon : 100;
    auto f = open_out(c.out);
    std::ostream& out = f ? *f : std::cout;
    const std::size_t n = m.state_dim;
    // one block per trajectory or boundary, each introduced by a comment line
    out << "step";
    for (std::size_t k = 0; k < n; ++k) out << ",x" << k + 1;
    out << '\n';
    auto row = [&](int step, const double* x) {
        out << step;
        for (std::size_t k = 0; k < n; ++k) out << ',' << fmt::format("{:.9g}", x[k]);
        out << '\n';
    };
    Simulator sim(m);
    std::vector<double> trace;
    for (int k = 0; k < trajectories; ++k) {
        TrajectoryRng rng(c.seed, static_cast<std::uint64_t>(k));
        const auto x0 = sim.sample_initial(rng);
        trace.clear();
        sim.run(x0, H, rng, {}, 0, &trace);
        out << "# trajectory " << k << '\n';
        for (std::size_t s = 0; s * n < trace.size(); ++s) row(static_cast<int>(s), &trace[s * n]);
    }
    // sampling box: X widened to cover I
    std::vector<double> lo = m.bounds.low, hi = m.bounds.high;
    for (std::size_t k = 0; k < n; ++k) {
        lo[k] = std::min(lo[k], m.init_bounds.low[k]);
        hi[k] = std::max(hi[k], m.init_bounds.high[k]);
    }
    const int per = n == 1 ? 2001 : n == 2 ? 201 : 41;
    const Grid g(lo, hi, std::vector<int>(n, per));
    const std::pair<const char*, const SemialgebraicSet*> sets[] = {
        {"U", &m.U}, {"I", &m.I}, {"T", m.T ? &*m.T : nullptr}};
    for (const auto& [name, s] : sets) {
        if (!s) continue;
        out << "# boundary " << name << '\n';
        for (const auto& p : boundary_points(*s, g)) row(-1, p.data());
    }
    return kOk;
}

struct BenchRow {
    json deterministic;
    std::string text;
};

BenchRow bench_row(const RunConfig& base, const std::string& path, std::uint64_t row_seed) {
    RunConfig c = base;
    c.model = path;
    c.seed = row_seed;
    json j{{"seed", row_seed}};
    std::string text;
    try {
        const SystemModel m = load_model(path);
        j["model"] = m.name;
        const PredictionSession offline = make_session(c, m);
        const auto& r0 = offline.last_report();
        j["offline"] = report_to_json(r0, false);
        j["warnings"] = offline.warnings();
        const auto ref = kPublishedOffline.find(m.name);
        if (ref != kPublishedOffline.end()) {
            j["published_offline"] = ref->second;
            j["published_verdict"] = r0.bound && *r0.bound >= ref->second - 0.15 ? "ok" : "below";
        }
        text = fmt::format("{:<14} {:>8.2f}s {:>7.3f}", m.name, r0.elapsed_offline_ms / 1e3, r0.bound.value_or(NAN));
        json seqs = json::array();
        for (int len = 2; len <= 5; ++len) {
            ObservationGenOptions g;
            g.length = len;
            g.seed = row_seed * 100 + static_cast<std::uint64_t>(len);
            const UsableSequence u = draw_usable_sequence(offline, g);
            json events = json::array(), reports = json::array();
            for (const auto& e : u.events) events.push_back(event_to_json(e));
            double worst_ms = 0;
            for (const auto& r : u.reports) {
                worst_ms = std::max(worst_ms, r.elapsed_online_ms);
                reports.push_back(report_to_json(r, false));
            }
            const bool ok = u.reports.size() == u.events.size();
            if (!ok) reports.push_back({{"error", "q = 0 at grid resolution on every draw"}});
            const PredictionReport last = ok ? u.reports.back() : PredictionReport{};
            seqs.push_back({{"length", len},
                            {"half_width", u.half_width},
                            {"redraws", u.redraws},
                            {"events", events},
                            {"reports", reports}});
            text += ok ? fmt::format(" | {:>7.2f}s {:>7.3f}", worst_ms / 1e3, last.bound.value_or(NAN))
                       : fmt::format(" | {:>17}", "q = 0");
        }
        j["sequences"] = seqs;
    } catch (const std::exception& e) {
        j["error"] = e.what();
        text = fmt::format("{:<14} failed: {}", path, e.what());
    }
    return {j, text};
}

int cmd_bench(const RunConfig& c, const std::string& models_dir, const std::vector<std::string>& only) {
    const auto& names = only.empty() ? kBenchmarks : only;
    json rows = json::array();
    fmt::print("{:<14} {:>9} {:>7} | {:>17} | {:>17} | {:>17} | {:>17}\n", "benchmark", "off.", "prob.", "2 obs (on./prob.)",
               "3 obs", "4 obs", "5 obs");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string path = models_dir + "/" + names[i] + ".json";
        auto row = bench_row(c, path, c.seed * 1000 + i);
        fmt::print("{}\n", row.text);
        std::cout.flush();
        rows.push_back(row.deterministic);
    }
    const json out{{"config", config_to_json(c.predictor())}, {"rows", rows}};
    if (auto f = open_out(c.out)) *f << out.dump(1) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Observation-conditioned safety and reach-avoid bounds for polynomial stochastic systems"};
    app.require_subcommand(1);
    RunConfig c;

    auto* syn = app.add_subcommand("synthesize", "offline SOS synthesis, writes a certificate");
    add_common(syn, c);
    syn->add_option("--out", c.out, "certificate path (default <model>.cert.json)");

    auto* pre = app.add_subcommand("predict", "replay an observation file, one report per event");
    add_common(pre, c);
    pre->add_option("--obs", c.obs, "observation events, JSON lines")->required();
    pre->add_option("--cert", c.cert, "stored certificate (otherwise synthesize)");
    pre->add_option("--out", c.out, "reports file (default stdout)");
    pre->add_option("--log", c.log, "session log");

    auto* mon = app.add_subcommand("monitor", "read events from stdin, write reports to stdout");
    add_common(mon, c);
    mon->add_option("--cert", c.cert, "stored certificate (otherwise synthesize)");
    mon->add_option("--log", c.log, "session log");

    int trajectories = 0;
    auto* sim = app.add_subcommand("simulate", "Monte-Carlo estimate, optionally conditioned on --obs");
    add_common(sim, c);
    sim->add_option("--obs", c.obs, "condition on these events");
    sim->add_option("--trajectories", trajectories, "also list this many individual runs");
    sim->add_option("--out", c.out, "output file (default stdout)");

    ValidationOptions vopt;
    auto* val = app.add_subcommand("validate", "check every emitted bound against Monte-Carlo");
    add_common(val, c);
    val->add_option("--cert", c.cert, "stored certificate (otherwise synthesize)");
    val->add_option("--sequences", vopt.sequences, "generated observation sequences")->check(CLI::NonNegativeNumber);
    val->add_option("--max-attempts", vopt.max_attempts, "rejection-sampling budget per estimate");
    val->add_flag("!--every-prefix,--last-only", vopt.every_prefix, "check only the last report of each sequence");
    val->add_option("--out", c.out, "validation JSON (default stdout)");

    int plot_k = 50;
    auto* plot = app.add_subcommand("plot-data", "CSV of trajectories and set boundaries");
    add_common(plot, c);
    plot->add_option("--trajectories,-k", plot_k, "number of trajectories")->check(CLI::NonNegativeNumber);
    plot->add_option("--out", c.out, "CSV file (default stdout)");

    std::string models_dir = OBARRIER_MODELS_DIR;
    std::vector<std::string> only;
    auto* bench = app.add_subcommand("bench", "offline and online bounds for the nine benchmarks");
    add_common(bench, c, false);
    bench->add_option("--models-dir", models_dir, "directory holding <name>.json");
    bench->add_option("--only", only, "subset of benchmark names");
    bench->add_option("--out", c.out, "JSON without wall-clock fields");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;  // CLI11 has its own code range
    }

    try {
        if (*syn) return cmd_synthesize(c);
        if (*pre) return cmd_predict(c);
        if (*mon) return cmd_monitor(c);
        if (*sim) return cmd_simulate(c, trajectories);
        if (*val) return cmd_validate(c, vopt);
        if (*plot) return cmd_plot_data(c, plot_k);
        if (*bench) return cmd_bench(c, models_dir, only);
    } catch (const MalformedInput& e) {
        fmt::print(stderr, "malformed input: {}\n", e.what());
        return kMalformed;
    } catch (const ParseError& e) {
        fmt::print(stderr, "malformed input: {}\n", e.what());
        return kMalformed;
    } catch (const SchemaError& e) {
        fmt::print(stderr, "malformed input: {}\n", e.what());
        return kMalformed;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    }
    return kUsage;
}
