#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "obarrier/mc.hpp"
#include "obarrier/predictor.hpp"
#include "oracles.hpp"

using namespace obarrier;
using json = nlohmann::json;

namespace {

std::string model_path(const char* name) { return std::string(OBARRIER_MODELS_DIR) + "/" + name + ".json"; }

SemialgebraicSet interval(double lo, double hi) {
    std::vector<double> l{lo}, h{hi};
    return SemialgebraicSet::box(l, h);
}

PredictorConfig lattice_config() {
    PredictorConfig c;
    c.grid_res = 7;
    return c;
}

Certificate ruin_certificate() {
    Certificate c;
    c.v = (Polynomial::state_var(1, 0, 0) + Polynomial::constant(1, 0, 1.5)) * 0.4;
    c.gamma = 0.6;
    c.certified = false;  // exact on the lattice only
    return c;
}

}  // namespace

TEST_CASE("bound arithmetic") {
    CHECK(*conditional_bound(0.2, 0.8) == doctest::Approx(0.75));
    CHECK(*conditional_bound(0.9, 0.5) == 0.0);
    CHECK(!conditional_bound(0.1, 0.0));
}

TEST_CASE("lattice walk: offline and one observation against enumeration") {
    SystemModel m = load_model(model_path("lattice_walk"));
    auto s = PredictionSession::from_certificate(m, lattice_config(), ruin_certificate());
    CHECK(s.last_report().k == 0);
    CHECK(*s.last_report().bound == doctest::Approx(0.4).epsilon(1e-12));

    const auto truth = oracle::lattice_enumerate(0, {{3, -0.6, 0.1}});
    auto r = s.on_observation({3, interval(-0.6, 0.1)});
    CHECK(r.k == 1);
    CHECK(std::abs(*r.bound - (1 - truth.p / truth.q)) < 1e-6);
    CHECK(std::abs(r.q - truth.q) < 1e-9);
}

TEST_CASE("unreachable observation") {
    SystemModel m = load_model(model_path("lattice_walk"));
    auto s = PredictionSession::from_certificate(m, lattice_config(), ruin_certificate());
    CHECK_THROWS_AS(s.on_observation({1, interval(0.9, 1.1)}), Error);  // meets U
    CHECK_THROWS_AS(s.on_observation({1, interval(-1.1, -0.9)}), VanishingObservationProbability);
    CHECK(s.log().empty());
    CHECK_THROWS_AS(s.on_observation({0, interval(-1, 0.5)}), InvalidObservation);
}

TEST_CASE("reach-avoid needs the absorption assertion") {
    SystemModel m = load_model(model_path("descent"));
    m.asserts_absorption = false;
    CHECK_THROWS_AS(PredictionSession::init_offline(m, PredictorConfig{}, nullptr), WellPosednessError);
}

TEST_CASE("vacuous safety gives bound 1") {
    SystemModel m = load_model(model_path("vanderpol1"));
    m.U = SemialgebraicSet::empty(2);
    m.exit = ExitPolicy::Safe;
    PredictorConfig cfg;
    cfg.grid_res = 41;
    IpmSolver solver;
    auto s = PredictionSession::init_offline(m, cfg, &solver);
    CHECK(*s.last_report().bound > 1 - 1e-6);
    CHECK(s.last_report().certified);
}

TEST_CASE("value-iteration fallback is flagged") {
    SystemModel m = load_model(model_path("vanderpol1"));
    PredictorConfig cfg;
    cfg.grid_res = 41;
    cfg.vi_eps = 1e-4;
    auto s = PredictionSession::init_offline(m, cfg, nullptr);
    CHECK(!s.last_report().certified);
    CHECK(!s.warnings().empty());
    cfg.fallback_vi = false;
    CHECK_THROWS_AS(PredictionSession::init_offline(m, cfg, nullptr), SynthesisFailed);
}

TEST_CASE("vanderpol-1 offline bound") {
    SystemModel m = load_model(model_path("vanderpol1"));
    IpmSolver solver;
    auto s = PredictionSession::init_offline(m, PredictorConfig{}, &solver);
    CHECK(s.last_report().certified);
    CHECK(*s.last_report().bound >= 0.343 - 0.15);
}

TEST_CASE("sessions are stateless across replays and deterministic") {
    SystemModel m = load_model(model_path("osc"));
    PredictorConfig cfg;
    cfg.grid_res = 61;
    IpmSolver solver;
    ObservationGenOptions o;
    o.length = 3;
    o.seed = 5;
    const auto obs = generate_observations(m, o);
    auto a = PredictionSession::init_offline(m, cfg, &solver);
    std::vector<PredictionReport> ra;
    for (const auto& e : obs) ra.push_back(a.on_observation(e));
    for (std::size_t k = 1; k <= obs.size(); ++k) {
        auto b = PredictionSession::init_offline(m, cfg, &solver);
        PredictionReport last;
        for (std::size_t i = 0; i < k; ++i) last = b.on_observation(obs[i]);
        CHECK(last.q == ra[k - 1].q);
        CHECK(last.p == ra[k - 1].p);
        CHECK(report_to_json(last, false) == report_to_json(ra[k - 1], false));
    }
}

TEST_CASE("run_stream") {
    SystemModel m = load_model(model_path("lattice_walk"));
    auto fresh = [&] { return PredictionSession::from_certificate(m, lattice_config(), ruin_certificate()); };

    SUBCASE("empty stream") {
        auto s = fresh();
        std::istringstream in("\n  \n");
        std::ostringstream out;
        auto r = run_stream(s, in, out);
        CHECK(out.str().empty());
        CHECK(r.k == 0);
        CHECK(*r.bound == doctest::Approx(0.4));
    }
    SUBCASE("box and ball shorthands, one report per event, session log") {
        auto s = fresh();
        std::istringstream in(R"({"time": 1, "box": {"low": [-1], "high": [0.6]}}
{"time": 3, "ball": {"center": [0], "radius": 0.6}}
{"time": 4, "region": {"disjuncts": [[{"poly": {"terms": [{"c": 0.6, "x": [0]}, {"c": -1, "x": [1]}]}, "rel": "ge"}]]}}
)");
        std::ostringstream out, log;
        StreamOptions opt;
        opt.log = &log;
        opt.model_path = "lattice_walk.json";
        auto r = run_stream(s, in, out, opt);
        CHECK(r.k == 3);
        std::istringstream lines(out.str());
        std::string line;
        int n = 0;
        while (std::getline(lines, line)) {
            auto j = json::parse(line);
            CHECK(j["k"] == ++n);
            CHECK(j.contains("elapsed_online_ms"));
        }
        CHECK(n == 3);
        std::istringstream loglines(log.str());
        int nlog = 0;
        while (std::getline(loglines, line)) ++nlog;
        CHECK(nlog == 4);
    }
    SUBCASE("decreasing times abort at the offending line") {
        auto s = fresh();
        std::istringstream in("{\"time\": 3, \"box\": {\"low\": [-1], \"high\": [0.6]}}\n"
                              "{\"time\": 2, \"box\": {\"low\": [-1], \"high\": [0.6]}}\n");
        std::ostringstream out;
        try {
            run_stream(s, in, out);
            FAIL("expected MalformedInput");
        } catch (const MalformedInput& e) {
            CHECK(e.line() == 2);
        }
        CHECK(!out.str().empty());  // the first report was written
    }
    SUBCASE("garbage") {
        auto s = fresh();
        std::istringstream in("hello\n");
        std::ostringstream out;
        CHECK_THROWS_AS(run_stream(s, in, out), MalformedInput);
        std::istringstream in2("{\"time\": 2}\n");
        CHECK_THROWS_AS(run_stream(s, in2, out), MalformedInput);
        std::istringstream in3("{\"time\": 2, \"box\": {\"low\": [-1, 0], \"high\": [0.6, 1]}}\n");
        CHECK_THROWS_AS(run_stream(s, in3, out), MalformedInput);
    }
}
