#include "obarrier/mc.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/beta.hpp>

namespace obarrier {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    constexpr std::uint64_t M0 = 0xD2511F53, M1 = 0xCD9E8D57;
    constexpr std::uint32_t W0 = 0x9E3779B9, W1 = 0xBB67AE85;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k[0] += W0;
            k[1] += W1;
        }
        const std::uint64_t p0 = M0 * c[0], p1 = M1 * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
    return c;
}

double TrajectoryRng::uniform() {
    if (used_ >= 4) {
        buf_ = philox4x32({static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32),
                           static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32)},
                          {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
        ++block_;
        used_ = 0;
    }
    const std::uint64_t a = buf_[used_] >> 5, b = buf_[used_ + 1] >> 6;
    used_ += 2;
    return static_cast<double>(a * 67108864ull + b) * 0x1.0p-53;
}

const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::Safe: return "safe";
        case Outcome::HitU: return "hit-U";
        case Outcome::HitT: return "hit-T";
        case Outcome::LeftX: return "left-X";
    }
    return "?";
}

std::vector<CompiledObservation> compile_observations(std::span<const ObservationEvent> obs) {
    std::vector<CompiledObservation> out;
    for (const auto& e : obs) out.push_back({e.time, CompiledSet(e.region)});
    return out;
}

Simulator::Simulator(const SystemModel& m)
    : m_(std::make_shared<SystemModel>(m)), x_(m.X), u_(m.U), init_(m.effective_init()) {
    for (const auto& p : m.dynamics) dyn_.emplace_back(p);
    if (m.mode == Mode::ReachAvoid && m.T) t_ = CompiledSet(*m.T);
}

SimResult Simulator::run(std::span<const double> x0, int H, TrajectoryRng& rng,
                         std::span<const CompiledObservation> obs, int target_from,
                         std::vector<double>* trace) const {
    const std::size_t n = m_->state_dim, nw = m_->noise_dim();
    std::vector<double> x(x0.begin(), x0.end()), y(n), w(nw);
    std::size_t j = 0;
    SimResult r;
    for (int t = 0;; ++t) {
        if (trace) trace->insert(trace->end(), x.begin(), x.end());
        r.step = t;
        if (!x_.contains(x.data())) {
            r.outcome = Outcome::LeftX;
            return r;
        }
        if (u_.contains(x.data())) {
            r.outcome = Outcome::HitU;
            return r;
        }
        if (t >= target_from && !t_.empty() && t_.contains(x.data())) {
            r.outcome = Outcome::HitT;
            return r;
        }
        if (j < obs.size() && obs[j].time == t) {
            if (!obs[j].region.contains(x.data())) {
                r.matched = false;
                return r;
            }
            ++j;
        }
        if (t >= H) return r;
        for (std::size_t k = 0; k < nw; ++k) w[k] = m_->noise.sample(k, rng.uniform());
        for (std::size_t i = 0; i < n; ++i) y[i] = dyn_[i](x.data(), w.data());
        x.swap(y);
    }
}

std::vector<double> Simulator::sample_initial(TrajectoryRng& rng) const {
    const Box& b = m_->init_bounds;
    std::vector<double> x(b.dims());
    for (int attempt = 0; attempt < 1000000; ++attempt) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = b.low[i] + (b.high[i] - b.low[i]) * rng.uniform();
        if (init_.contains(x.data())) return x;
    }
    throw NoInitialNode("could not sample a point of I within X");
}

bool Simulator::success(const SimResult& r) const {
    if (m_->mode == Mode::ReachAvoid) return r.outcome == Outcome::HitT;
    return r.outcome == Outcome::Safe || (r.outcome == Outcome::LeftX && m_->exit == ExitPolicy::Safe);
}

SimResult simulate(const SystemModel& m, std::span<const double> x0, int H, std::uint64_t seed, std::uint64_t index) {
    Simulator sim(m);
    TrajectoryRng rng(seed, index);
    return sim.run(x0, H, rng);
}

IntervalEstimate clopper_pearson(long long k, long long n, double confidence) {
    if (n <= 0) throw SchemaError("interval needs at least one sample");
    if (k < 0 || k > n) throw SchemaError("successes out of range");
    const double alpha = 1.0 - confidence;
    IntervalEstimate e;
    e.n = n;
    e.successes = k;
    e.confidence = confidence;
    e.point = static_cast<double>(k) / static_cast<double>(n);
    const auto kd = static_cast<double>(k), nd = static_cast<double>(n);
    e.lower = k == 0 ? 0.0 : boost::math::ibeta_inv(kd, nd - kd + 1, alpha / 2);
    e.upper = k == n ? 1.0 : boost::math::ibeta_inv(kd + 1, nd - kd, 1 - alpha / 2);
    return e;
}

namespace {

constexpr std::uint64_t kStartStream = 1ull << 48;

// successes among runs [first, first + count) started at x0 (or from I when x0 is empty)
long long count_successes(const Simulator& sim, std::span<const double> x0, int H, std::uint64_t seed,
                          std::uint64_t first, long long count, bool parallel) {
    long long ok = 0;
#pragma omp parallel for schedule(static) reduction(+ : ok) if (parallel)
    for (long long i = 0; i < count; ++i) {
        TrajectoryRng rng(seed, first + static_cast<std::uint64_t>(i));
        std::vector<double> start = x0.empty() ? sim.sample_initial(rng) : std::vector<double>(x0.begin(), x0.end());
        ok += sim.success(sim.run(start, H, rng));
    }
    return ok;
}

}  // namespace

SafetyEstimate estimate_safety(const SystemModel& m, int H, long long N, const McOptions& opt) {
    if (N < 1000) throw SchemaError("estimate_safety needs N >= 1000");
    Simulator sim(m);
    SafetyEstimate r;
    r.overall = clopper_pearson(count_successes(sim, {}, H, opt.seed, 0, N, opt.parallel), N, opt.confidence);
    const long long per = std::max(1LL, N / 10);
    for (std::uint64_t k = 0; k < 10; ++k) {
        TrajectoryRng srng(opt.seed, kStartStream + k);
        const auto x0 = sim.sample_initial(srng);
        const auto ok = count_successes(sim, x0, H, opt.seed, (k + 1) << 40, per, opt.parallel);
        r.per_start.push_back(clopper_pearson(ok, per, opt.confidence));
        r.min_start = std::min(r.min_start, r.per_start.back().point);
    }
    return r;
}

ConditionalEstimate estimate_conditional(const SystemModel& m, std::span<const ObservationEvent> obs, int H,
                                         long long N, long long max_attempts, const McOptions& opt) {
    if (obs.empty()) {
        auto s = estimate_safety(m, H, std::max(N, 1000LL), opt);
        return {s.overall, s.overall.n, 1.0};
    }
    const int tk = obs.back().time;
    if (tk >= H) throw InvalidObservation("observation times must lie before the horizon");
    Simulator sim(m);
    const auto cobs = compile_observations(obs);
    const int target_from = tk;

    constexpr long long chunk = 1 << 16;
    std::vector<std::int8_t> state(chunk);  // 0 rejected, 1 accepted success, 2 accepted failure
    long long accepted = 0, ok = 0, attempts = 0;
    for (long long first = 0; first < max_attempts && accepted < N; first += chunk) {
        const long long count = std::min(chunk, max_attempts - first);
#pragma omp parallel for schedule(static) if (opt.parallel)
        for (long long i = 0; i < count; ++i) {
            TrajectoryRng rng(opt.seed, static_cast<std::uint64_t>(first + i));
            const auto x0 = sim.sample_initial(rng);
            const SimResult r = sim.run(x0, H, rng, cobs, target_from);
            const bool kept = r.matched && (r.outcome == Outcome::Safe || r.step > tk);
            state[i] = !kept ? 0 : sim.success(r) ? 1 : 2;
        }
        // fixed-order reduction so the stopping point does not depend on the schedule
        for (long long i = 0; i < count && accepted < N; ++i) {
            ++attempts;
            if (state[i] == 0) continue;
            ++accepted;
            ok += state[i] == 1;
        }
    }
    if (accepted < 100)
        throw TooFewAccepted("only " + std::to_string(accepted) + " of " + std::to_string(attempts) +
                                 " runs matched the observations",
                             accepted);
    ConditionalEstimate c;
    c.estimate = clopper_pearson(ok, accepted, opt.confidence);
    c.attempts = attempts;
    c.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(attempts);
    return c;
}

double absorption_check(const SystemModel& m, int H, long long N, const McOptions& opt) {
    if (m.mode != Mode::ReachAvoid) throw SchemaError("absorption check applies to reach-avoid models");
    Simulator sim(m);
    long long hit = 0;
#pragma omp parallel for schedule(static) reduction(+ : hit) if (opt.parallel)
    for (long long i = 0; i < N; ++i) {
        TrajectoryRng rng(opt.seed, static_cast<std::uint64_t>(i));
        const auto x0 = sim.sample_initial(rng);
        hit += sim.run(x0, H, rng).outcome != Outcome::Safe;
    }
    return static_cast<double>(hit) / static_cast<double>(N);
}

std::vector<ObservationEvent> generate_observations(const SystemModel& m, const ObservationGenOptions& opt) {
    if (opt.length < 1 || opt.max_gap < 1 || !(opt.half_width > 0)) throw SchemaError("bad observation options");
    Simulator sim(m);
    const std::size_t n = m.state_dim;
    SemialgebraicSet away = m.X.minus(m.U);
    if (m.mode == Mode::ReachAvoid && m.T) away = away.minus(*m.T);
    CompiledSet t_set = m.T ? CompiledSet(*m.T) : CompiledSet();

    for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
        TrajectoryRng rng(opt.seed, attempt);
        std::vector<int> times;
        int t = 0;
        for (int i = 0; i < opt.length; ++i) {
            t += 1 + std::min(opt.max_gap - 1, static_cast<int>(rng.uniform() * opt.max_gap));
            times.push_back(t);
        }
        const auto x0 = sim.sample_initial(rng);
        std::vector<double> trace;
        const SimResult r = sim.run(x0, t, rng, {}, t + 1, &trace);
        if (r.outcome != Outcome::Safe) continue;
        std::vector<ObservationEvent> out;
        bool usable = true;
        for (int ti : times) {
            const double* x = &trace[static_cast<std::size_t>(ti) * n];
            if (!t_set.empty() && t_set.contains(x)) usable = false;
            std::vector<double> lo(n), hi(n);
            for (std::size_t i = 0; i < n; ++i) {
                lo[i] = x[i] - opt.half_width;
                hi[i] = x[i] + opt.half_width;
            }
            out.push_back({ti, SemialgebraicSet::box(lo, hi).intersect(away)});
        }
        if (usable) return out;
    }
    throw Error("could not generate an observation sequence for " + m.name);
}

}  // namespace obarrier
