#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "obarrier/grid.hpp"
#include "obarrier/model.hpp"

namespace obarrier {

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

/// Uniform [0,1) stream for one trajectory: key = run seed, counter = (index, draw).
class TrajectoryRng {
public:
    TrajectoryRng(std::uint64_t seed, std::uint64_t index) : seed_(seed), index_(index) {}
    double uniform();

private:
    std::uint64_t seed_, index_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int used_ = 4;
};

enum class Outcome { Safe, HitU, HitT, LeftX };
const char* to_string(Outcome o);

struct SimResult {
    Outcome outcome = Outcome::Safe;
    int step = 0;          // first-hit step, or the horizon when Safe
    bool matched = true;   // every observation region contained the state in time
};

struct CompiledObservation {
    int time;
    CompiledSet region;
};
std::vector<CompiledObservation> compile_observations(std::span<const ObservationEvent> obs);

/// Membership tests and dynamics compiled once per model.
class Simulator {
public:
    explicit Simulator(const SystemModel& m);
    const SystemModel& model() const { return *m_; }

    /// First-hit simulation from x0 over at most H steps. Observations are
    /// checked at their times; a miss stops the run with matched = false.
    /// The target only counts from target_from on (reach-avoid).
    SimResult run(std::span<const double> x0, int H, TrajectoryRng& rng, std::span<const CompiledObservation> obs = {},
                  int target_from = 0, std::vector<double>* trace = nullptr) const;

    /// Uniform in the initial box, rejected into I intersect X.
    std::vector<double> sample_initial(TrajectoryRng& rng) const;

    /// Success of the model's property: safety, or reaching T first.
    bool success(const SimResult& r) const;

private:
    std::shared_ptr<const SystemModel> m_;
    std::vector<CompiledPolynomial> dyn_;
    CompiledSet x_, u_, t_, init_;
};

/// Plain simulate: starts at x0, target active from step 0.
SimResult simulate(const SystemModel& m, std::span<const double> x0, int H, std::uint64_t seed,
                   std::uint64_t index = 0);

struct IntervalEstimate {
    double point = 0, lower = 0, upper = 1;
    long long n = 0, successes = 0;
    double confidence = 0.95;

    double half_width() const { return 0.5 * (upper - lower); }
};

/// Exact binomial interval.
IntervalEstimate clopper_pearson(long long successes, long long n, double confidence = 0.95);

struct SafetyEstimate {
    IntervalEstimate overall;
    std::vector<IntervalEstimate> per_start;  // stratified starts
    double min_start = 1.0;                   // smallest per-start point estimate
};

struct McOptions {
    std::uint64_t seed = 1;
    double confidence = 0.95;
    bool parallel = true;
};

/// Fraction of N trajectories from I satisfying the model's property through H.
SafetyEstimate estimate_safety(const SystemModel& m, int H, long long N, const McOptions& opt = {});

struct ConditionalEstimate {
    IntervalEstimate estimate;
    long long attempts = 0;
    double acceptance_rate = 0;
};

/// Rejection sampling: keeps runs that match every observation while avoiding
/// U (and staying in X) up to the last observation, stops after N accepted or
/// max_attempts. Throws TooFewAccepted below 100 accepted runs.
ConditionalEstimate estimate_conditional(const SystemModel& m, std::span<const ObservationEvent> obs, int H,
                                         long long N, long long max_attempts, const McOptions& opt = {});

/// Fraction of runs from I that reach U, T or leave X within H steps.
double absorption_check(const SystemModel& m, int H, long long N, const McOptions& opt = {});

struct ObservationGenOptions {
    int length = 2;
    double half_width = 0.1;
    int max_gap = 3;  // times advance by 1..max_gap
    std::uint64_t seed = 1;
};

/// Boxes centred on the states of a simulated run that stays in X minus U
/// (and outside T) up to the last chosen time, clipped to X and away from U/T.
std::vector<ObservationEvent> generate_observations(const SystemModel& m, const ObservationGenOptions& opt);

}  // namespace obarrier
