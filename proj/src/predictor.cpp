#include "obarrier/predictor.hpp"

#include <chrono>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "obarrier/mc.hpp"

namespace obarrier {

using json = nlohmann::json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

json config_to_json(const PredictorConfig& c) {
    return json{{"grid_res", c.grid_res},
                {"quad_order", c.quad_order},
                {"degree", c.synth.degree},
                {"mult_degree", c.synth.mult_degree},
                {"fallback_vi", c.fallback_vi},
                {"vi_eps", c.vi_eps},
                {"seed", c.seed}};
}

std::optional<double> conditional_bound(double p, double q) {
    if (!(q > 0)) return std::nullopt;
    return std::max(0.0, 1.0 - p / q);
}

json report_to_json(const PredictionReport& r, bool with_times) {
    json j{{"k", r.k}, {"time", r.time}, {"q", r.q}, {"p", r.p}, {"certified", r.certified}};
    j["bound"] = r.bound ? json(*r.bound) : json(nullptr);
    if (with_times) {
        j["elapsed_offline_ms"] = r.elapsed_offline_ms;
        j["elapsed_online_ms"] = r.elapsed_online_ms;
    }
    return j;
}

PredictionSession::PredictionSession(const SystemModel& m, const PredictorConfig& cfg) : cfg_(cfg) {
    if (m.mode == Mode::ReachAvoid && !m.asserts_absorption)
        throw WellPosednessError("reach-avoid prediction needs \"asserts_absorption\": true");
    ctx_ = std::make_shared<BackwardContext>(m, Grid::for_model(m, cfg.grid_res),
                                             QuadratureRule::for_noise(m.noise, cfg.quad_order));
    if (m.mode == Mode::ReachAvoid && cfg.absorption_samples > 0) {
        McOptions o;
        o.seed = cfg.seed;
        const double f = absorption_check(m, cfg.absorption_horizon, cfg.absorption_samples, o);
        if (f < 0.99)
            warnings_.push_back("only " + std::to_string(f) + " of sampled runs reach U or T within " +
                                std::to_string(cfg.absorption_horizon) + " steps");
    }
}

void PredictionSession::finish_offline(double offline_ms) {
    const auto& in_i = ctx_->in_init();
    const Grid& g = *ctx_->grid();
    double p = -1;
    std::vector<double> x(g.dims());
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!in_i[i]) continue;
        g.node(i, x.data());
        p = std::max(p, tail_(x.data()));
    }
    if (p < 0) throw NoInitialNode("no grid node lies in the initial set; refine the grid");
    last_ = PredictionReport{};
    last_.q = 1.0;
    last_.p = p;
    last_.bound = conditional_bound(p, 1.0);
    last_.certified = tail_.certified;
    last_.elapsed_offline_ms = offline_ms;
}

PredictionSession PredictionSession::init_offline(const SystemModel& m, const PredictorConfig& cfg,
                                                  const SolverInterface* solver) {
    const auto t0 = std::chrono::steady_clock::now();
    PredictionSession s(m, cfg);
    std::string why;
    if (solver) {
        try {
            const Certificate c = synthesize(m, cfg.synth, *solver);
            s.tail_ = Tail::from_poly(c.v, c.certified);
        } catch (const SynthesisFailed& e) {
            why = e.what();
        } catch (const VerificationFailed& e) {
            why = e.what();
        } catch (const BasisTooLarge& e) {
            why = e.what();
        }
    } else {
        why = "no SDP solver configured";
    }
    if (!s.tail_.poly) {
        if (!cfg.fallback_vi) throw SynthesisFailed(why);
        s.warnings_.push_back("using the value-iteration tail (not certified): " + why);
        try {
            s.tail_ = Tail::from_grid(value_iteration_v(*s.ctx_, cfg.vi_eps, cfg.vi_max_iters).v);
        } catch (const NotConverged& e) {
            s.warnings_.push_back(e.what());
            s.tail_ = Tail::from_grid(e.last().v);
        }
    }
    s.finish_offline(ms_since(t0));
    return s;
}

PredictionSession PredictionSession::from_certificate(const SystemModel& m, const PredictorConfig& cfg,
                                                      const Certificate& c) {
    const auto t0 = std::chrono::steady_clock::now();
    if (c.v.num_state_vars() != m.state_dim) throw DimensionMismatch("certificate dimension differs from model");
    PredictionSession s(m, cfg);
    s.tail_ = Tail::from_poly(c.v, c.certified);
    s.finish_offline(ms_since(t0));
    return s;
}

PredictionReport PredictionSession::on_observation(const ObservationEvent& e) {
    const auto t0 = std::chrono::steady_clock::now();
    const int last_time = log_.empty() ? 0 : log_.back().time;
    if (e.time <= last_time)
        throw InvalidObservation("observation time " + std::to_string(e.time) + " does not follow " +
                                 std::to_string(last_time));
    validate_observations(model(), std::span<const ObservationEvent>(&e, 1));

    std::vector<ObservationEvent> cand = log_;
    cand.push_back(e);
    const ObfResult obf = get_obf(*ctx_, cand);
    if (!(obf.q > 0))
        throw VanishingObservationProbability("observation at t=" + std::to_string(e.time) +
                                              " has probability 0 at grid resolution; the bound is undefined");
    const OsbfResult osbf =
        model().mode == Mode::ReachAvoid ? get_orbf(*ctx_, cand, tail_) : get_osbf(*ctx_, cand, tail_);
    log_ = std::move(cand);

    PredictionReport r;
    r.k = static_cast<int>(log_.size());
    r.time = e.time;
    r.q = obf.q;
    r.p = osbf.p;
    r.bound = conditional_bound(r.p, r.q);
    r.certified = tail_.certified;
    r.elapsed_offline_ms = last_.elapsed_offline_ms;
    r.elapsed_online_ms = ms_since(t0);
    last_ = r;
    return r;
}

ObservationEvent event_from_json(const json& j, std::size_t nx) {
    if (!j.is_object()) throw SchemaError("event must be an object");
    if (!j.contains("time") || !j["time"].is_number_integer()) throw SchemaError("event needs an integer \"time\"");
    ObservationEvent e;
    e.time = j["time"].get<int>();
    try {
        if (j.contains("box") || j.contains("ball")) {
            json sugar = json::object();
            if (j.contains("box")) sugar["box"] = j["box"];
            if (j.contains("ball")) sugar["ball"] = j["ball"];
            e.region = set_from_json(sugar, nx);
        } else if (j.contains("region")) {
            e.region = set_from_json(j["region"], nx);
        } else {
            throw SchemaError("event needs \"region\", \"box\" or \"ball\"");
        }
    } catch (const json::exception& err) {
        throw SchemaError(std::string("event region: ") + err.what());
    }
    return e;
}

json event_to_json(const ObservationEvent& e) { return json{{"time", e.time}, {"region", set_to_json(e.region)}}; }

PredictionReport run_stream(PredictionSession& s, std::istream& in, std::ostream& out, const StreamOptions& opt) {
    if (opt.log) {
        *opt.log << json{{"model", opt.model_path}, {"config", config_to_json(s.config())},
                         {"offline", report_to_json(s.last_report(), opt.with_times)}}
                        .dump()
                 << '\n';
    }
    std::string line;
    long long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ObservationEvent e;
        try {
            e = event_from_json(json::parse(line), s.model().state_dim);
        } catch (const json::exception& err) {
            throw MalformedInput(std::string("not valid JSON: ") + err.what(), lineno);
        } catch (const SchemaError& err) {
            throw MalformedInput(err.what(), lineno);
        } catch (const DimensionMismatch& err) {
            throw MalformedInput(err.what(), lineno);
        }
        PredictionReport r;
        try {
            r = s.on_observation(e);
        } catch (const InvalidObservation& err) {
            throw MalformedInput(err.what(), lineno);
        }
        out << report_to_json(r, opt.with_times).dump() << '\n';
        if (opt.flush) out.flush();
        if (opt.log) {
            *opt.log << json{{"event", event_to_json(e)}, {"report", report_to_json(r, opt.with_times)}}.dump() << '\n';
            if (opt.flush) opt.log->flush();
        }
    }
    return s.last_report();
}

}  // namespace obarrier
