#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "obarrier/mc.hpp"
#include "obarrier/predictor.hpp"

namespace obarrier {

struct ValidationOptions {
    int sequences = 20;
    std::vector<int> lengths{2, 3, 4, 5};  // cycled over the sequences
    double half_width = 0.1;
    int max_gap = 3;
    int horizon = 0;  // 0: 200 for 2-D safety models, 500 otherwise
    long long samples = 50000;          // accepted runs per estimate
    long long max_attempts = 2000000;   // rejection-sampling budget per estimate
    double confidence = 0.95;
    std::uint64_t seed = 1;
    bool every_prefix = true;  // check the report after every event, not just the last
    int regenerate_limit = 20;  // draws per sequence, see draw_usable_sequence
};

int default_horizon(const SystemModel& m);

struct UsableSequence {
    std::vector<ObservationEvent> events;
    std::vector<PredictionReport> reports;  // one per event; fewer when every draw failed
    int redraws = 0;
    double half_width = 0;
};

/// Draws observation sequences until every prefix has q > 0 on the session's
/// grid. The box half-width doubles after every 5 failed draws.
UsableSequence draw_usable_sequence(const PredictionSession& s, ObservationGenOptions g, int max_draws = 20);

struct ValidationRecord {
    int sequence = -1;  // -1: the offline (k = 0) report
    int k = 0;
    std::optional<double> bound;
    double mc_point = 0, mc_lower = 0, mc_upper = 1;
    long long accepted = 0;
    std::string verdict;  // valid, violated, inconclusive
    std::string note;
};

struct ValidationResult {
    std::string model;
    std::vector<ValidationRecord> records;
    std::vector<std::vector<ObservationEvent>> sequences;
    long long regenerated = 0;  // draws discarded for q = 0
    long long violations() const;
    long long inconclusive() const;
};

/// Replays generated observation sequences through fresh copies of the
/// session and compares every bound with a rejection-sampling estimate.
ValidationResult validate_session(const PredictionSession& offline, const ValidationOptions& opt);

nlohmann::json record_to_json(const ValidationRecord& r);
nlohmann::json validation_to_json(const ValidationResult& v);

}  // namespace obarrier
