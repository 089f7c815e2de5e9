#include "obarrier/validate.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace obarrier {

using json = nlohmann::json;

int default_horizon(const SystemModel& m) { return m.mode == Mode::Safety && m.state_dim <= 2 ? 200 : 500; }

long long ValidationResult::violations() const {
    long long n = 0;
    for (const auto& r : records) n += r.verdict == "violated";
    return n;
}

long long ValidationResult::inconclusive() const {
    long long n = 0;
    for (const auto& r : records) n += r.verdict == "inconclusive";
    return n;
}

UsableSequence draw_usable_sequence(const PredictionSession& s, ObservationGenOptions g, int max_draws) {
    UsableSequence u;
    const std::uint64_t seed = g.seed;
    const double hw = g.half_width;
    for (int draw = 0; draw < max_draws; ++draw) {
        // q is a minimum over the initial set, so a small box around one
        // sampled state is often unreachable from elsewhere in I
        g.seed = seed + 7777ull * static_cast<std::uint64_t>(draw);
        g.half_width = hw * std::ldexp(1.0, draw / 5);
        u.events = generate_observations(s.model(), g);
        u.reports.clear();
        u.half_width = g.half_width;
        PredictionSession c = s;
        try {
            for (const auto& e : u.events) u.reports.push_back(c.on_observation(e));
            return u;
        } catch (const VanishingObservationProbability&) {
            ++u.redraws;
        }
    }
    return u;
}

namespace {

void judge(ValidationRecord& rec, const IntervalEstimate& e) {
    rec.mc_point = e.point;
    rec.mc_lower = e.lower;
    rec.mc_upper = e.upper;
    rec.accepted = e.n;
    if (!rec.bound) {
        rec.verdict = "inconclusive";
        rec.note = "bound undefined";
        return;
    }
    rec.verdict = *rec.bound <= e.point + e.half_width() ? "valid" : "violated";
}

}  // namespace

ValidationResult validate_session(const PredictionSession& offline, const ValidationOptions& opt) {
    const SystemModel& m = offline.model();
    const int H = opt.horizon > 0 ? opt.horizon : default_horizon(m);
    ValidationResult res;
    res.model = m.name;

    McOptions mc;
    mc.confidence = opt.confidence;

    // offline report against the worst of ten stratified starts
    {
        ValidationRecord rec;
        rec.bound = offline.last_report().bound;
        mc.seed = opt.seed;
        const SafetyEstimate s = estimate_safety(m, H, std::max(opt.samples, 10000LL), mc);
        std::size_t worst = 0;
        for (std::size_t i = 1; i < s.per_start.size(); ++i)
            if (s.per_start[i].point < s.per_start[worst].point) worst = i;
        judge(rec, s.per_start[worst]);
        rec.note = "worst of " + std::to_string(s.per_start.size()) + " starts";
        res.records.push_back(rec);
    }

    for (int seq = 0; seq < opt.sequences; ++seq) {
        ObservationGenOptions g;
        g.length = opt.lengths[static_cast<std::size_t>(seq) % opt.lengths.size()];
        g.half_width = opt.half_width;
        g.max_gap = opt.max_gap;

        g.seed = opt.seed * 1000003ull + static_cast<std::uint64_t>(seq);
        const UsableSequence u = draw_usable_sequence(offline, g, opt.regenerate_limit);
        res.regenerated += u.redraws;
        const auto& obs = u.events;
        const auto& reports = u.reports;
        res.sequences.push_back(obs);
        if (reports.size() < obs.size()) {
            ValidationRecord rec;
            rec.sequence = seq;
            rec.k = static_cast<int>(reports.size()) + 1;
            rec.verdict = "inconclusive";
            rec.note = "q = 0 at grid resolution";
            res.records.push_back(rec);
            continue;
        }

        for (std::size_t k = opt.every_prefix ? 1 : obs.size(); k <= obs.size(); ++k) {
            ValidationRecord rec;
            rec.sequence = seq;
            rec.k = static_cast<int>(k);
            rec.bound = reports[k - 1].bound;
            mc.seed = opt.seed * 7919ull + static_cast<std::uint64_t>(seq) * 64 + k;
            try {
                const auto c = estimate_conditional(m, std::span(obs).first(k), H, opt.samples, opt.max_attempts, mc);
                judge(rec, c.estimate);
            } catch (const TooFewAccepted& e) {
                rec.verdict = "inconclusive";
                rec.accepted = e.accepted();
                rec.note = "too few accepted runs";
            }
            res.records.push_back(rec);
        }
    }
    return res;
}

json record_to_json(const ValidationRecord& r) {
    json j{{"sequence", r.sequence}, {"k", r.k},           {"mc_point", r.mc_point},
           {"mc_ci", {r.mc_lower, r.mc_upper}}, {"accepted", r.accepted}, {"verdict", r.verdict}};
    j["bound"] = r.bound ? json(*r.bound) : json(nullptr);
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

json validation_to_json(const ValidationResult& v) {
    json recs = json::array(), seqs = json::array();
    for (const auto& r : v.records) recs.push_back(record_to_json(r));
    for (const auto& s : v.sequences) {
        json evs = json::array();
        for (const auto& e : s) evs.push_back(event_to_json(e));
        seqs.push_back(evs);
    }
    return json{{"model", v.model},
                {"records", recs},
                {"sequences", seqs},
                {"violations", v.violations()},
                {"regenerated", v.regenerated},
                {"inconclusive", v.inconclusive()}};
}

}  // namespace obarrier
