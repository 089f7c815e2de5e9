#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "obarrier/grid.hpp"
#include "obarrier/model.hpp"
#include "obarrier/sdp.hpp"
#include "obarrier/sos.hpp"

namespace obarrier {

struct PredictorConfig {
    int grid_res = 0;  // 0: per-dimension default
    int quad_order = 8;
    SynthesisConfig synth;
    bool fallback_vi = true;  // value-iteration tail when synthesis is unavailable or fails
    double vi_eps = 1e-6;
    int vi_max_iters = 5000;
    int absorption_horizon = 500;
    long long absorption_samples = 2000;
    std::uint64_t seed = 1;
};

nlohmann::json config_to_json(const PredictorConfig& c);

struct PredictionReport {
    int k = 0;
    int time = 0;  // time of the last observation
    double q = 1.0;
    double p = 0.0;
    std::optional<double> bound;  // absent when q = 0
    bool certified = false;
    double elapsed_offline_ms = 0;
    double elapsed_online_ms = 0;
};

/// with_times = false drops the two wall-clock fields (deterministic output).
nlohmann::json report_to_json(const PredictionReport& r, bool with_times = true);

/// max(0, 1 - p/q); nullopt for q = 0.
std::optional<double> conditional_bound(double p, double q);

class PredictionSession {
public:
    /// Offline phase: synthesizes the tail with the solver (may be null) or
    /// falls back to value iteration when the config allows it.
    static PredictionSession init_offline(const SystemModel& m, const PredictorConfig& cfg,
                                          const SolverInterface* solver);
    /// Offline phase from a stored certificate.
    static PredictionSession from_certificate(const SystemModel& m, const PredictorConfig& cfg, const Certificate& c);

    /// Appends the event and recomputes q and p over the whole log.
    /// Throws VanishingObservationProbability when q = 0 (the event is not kept).
    PredictionReport on_observation(const ObservationEvent& e);

    const SystemModel& model() const { return ctx_->model(); }
    const BackwardContext& context() const { return *ctx_; }
    const Tail& tail() const { return tail_; }
    const std::vector<ObservationEvent>& log() const { return log_; }
    const PredictionReport& last_report() const { return last_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const PredictorConfig& config() const { return cfg_; }

private:
    PredictionSession(const SystemModel& m, const PredictorConfig& cfg);
    void finish_offline(double offline_ms);

    PredictorConfig cfg_;
    std::shared_ptr<BackwardContext> ctx_;
    Tail tail_;
    std::vector<ObservationEvent> log_;
    PredictionReport last_;
    std::vector<std::string> warnings_;
};

/// {"time": t, "region": set} or the box/ball shorthands.
ObservationEvent event_from_json(const nlohmann::json& j, std::size_t nx);
nlohmann::json event_to_json(const ObservationEvent& e);

struct StreamOptions {
    bool with_times = true;
    bool flush = true;
    std::ostream* log = nullptr;  // session log, one JSON object per line
    std::string model_path;
};

/// Reads one event per line, writes one report per event. Malformed lines
/// throw MalformedInput with the line number; reports already written stay.
PredictionReport run_stream(PredictionSession& s, std::istream& in, std::ostream& out, const StreamOptions& opt = {});

}  // namespace obarrier
