#include <cmath>
#include <random>

#include "doctest.h"
#include "obarrier/errors.hpp"
#include "obarrier/sdp.hpp"
#include "obarrier/sos.hpp"

#include <nlohmann/json.hpp>

using namespace obarrier;

namespace {

std::string model_path(const char* name) { return std::string(OBARRIER_MODELS_DIR) + "/" + name + ".json"; }

Polynomial x1() { return Polynomial::state_var(1, 0, 0); }
Polynomial c1(double c) { return Polynomial::constant(1, 0, c); }

bool accepted(SdpStatus s) { return s == SdpStatus::Optimal || s == SdpStatus::Inaccurate; }

// "p in SOS" with no decision variables
SosProgram single(const Polynomial& p) {
    SosProgram prog;
    prog.num_vars = p.num_state_vars();
    prog.constraints.push_back({AffinePoly::from(p), {}, "fixture"});
    return prog;
}

double max_coeff_diff(const Polynomial& a, const Polynomial& b) {
    double d = 0;
    const Polynomial diff = a - b;
    for (const auto& [e, c] : diff.terms()) d = std::max(d, std::abs(c));
    return d;
}

// Answers with a canned solution, for exercising the plumbing around the solver.
class CannedSolver final : public SolverInterface {
public:
    explicit CannedSolver(SdpSolution s) : s_(std::move(s)) {}
    std::string name() const override { return "canned"; }
    SdpSolution solve(const SdpProblem&) const override { return s_; }

private:
    SdpSolution s_;
};

}  // namespace

TEST_CASE("1 + x^2 is SOS, identity Gram is a witness") {
    auto low = sos_to_sdp(single(c1(1) + x1().pow(2)));
    REQUIRE(low.sdp.block_sizes == std::vector<int>{2});
    // the identity satisfies every coefficient equality
    CHECK(primal_residual(low.sdp, {Eigen::MatrixXd::Identity(2, 2)}, {}) == 0.0);
    auto sol = IpmSolver().solve(low.sdp);
    CHECK(accepted(sol.status));
    CHECK(max_coeff_diff(gram_polynomial(1, 1, sol.X[0]), c1(1) + x1().pow(2)) < 1e-8);
}

TEST_CASE("x is not SOS") {
    auto low = sos_to_sdp(single(x1()));
    auto sol = IpmSolver().solve(low.sdp);
    CHECK(sol.status == SdpStatus::Infeasible);
}

TEST_CASE("x^2 - 2x + 2 is SOS") {
    const Polynomial p = x1().pow(2) - 2.0 * x1() + c1(2);
    auto low = sos_to_sdp(single(p));
    Eigen::MatrixXd W(2, 2);
    W << 2, -1, -1, 1;  // (x-1)^2 + 1
    CHECK(primal_residual(low.sdp, {W}, {}) < 1e-15);
    auto sol = IpmSolver().solve(low.sdp);
    CHECK(accepted(sol.status));
    CHECK(sol.primal_residual < 1e-8);
    CHECK(max_coeff_diff(gram_polynomial(1, 1, sol.X[0]), p) < 1e-8);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.X[0]);
    CHECK(es.eigenvalues().minCoeff() > -1e-9);
}

TEST_CASE("random sum of squares round-trips through the Gram matrix") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 2;
        Polynomial p(n, 0);
        for (int k = 0; k < 3; ++k) {
            Polynomial h(n, 0);
            for (const auto& e : monomials_up_to(n, 2)) h.add_term(e, u(rng));
            p += h * h;
        }
        auto low = sos_to_sdp(single(p));
        auto sol = IpmSolver().solve(low.sdp);
        REQUIRE(accepted(sol.status));
        CHECK(max_coeff_diff(gram_polynomial(n, 2, sol.X[0]), p) < 1e-8);
    }
}

TEST_CASE("tiny SDP with a free variable") {
    // min u  s.t.  X11 - u = 0, X22 = 1, X12 = 1 (X PSD forces X11 >= 1)
    SdpProblem p;
    p.block_sizes = {2};
    p.num_free = 1;
    p.free_cost = {1.0};
    p.equalities.push_back({{{0, 0, 0, 1.0}}, {{0, -1.0}}, 0.0});
    p.equalities.push_back({{{0, 1, 1, 1.0}}, {}, 1.0});
    p.equalities.push_back({{{0, 1, 0, 1.0}}, {}, 2.0});  // off-diagonal counts twice
    auto sol = IpmSolver().solve(p);
    CHECK(accepted(sol.status));
    CHECK(sol.u[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("unbounded SDP") {
    // min -u  s.t.  X11 - u = 0 : X11 can grow without limit
    SdpProblem p;
    p.block_sizes = {1};
    p.num_free = 1;
    p.free_cost = {-1.0};
    p.equalities.push_back({{{0, 0, 0, 1.0}}, {{0, -1.0}}, 0.0});
    CHECK(IpmSolver().solve(p).status == SdpStatus::Unbounded);
}

TEST_CASE("putinar fan-out") {
    SosProgram prog;
    prog.num_vars = 1;
    const AffinePoly v = AffinePoly::from(x1().pow(2) + c1(1));
    std::vector<double> lo{-1}, hi{1}, lo2{2}, hi2{3};
    SemialgebraicSet one(1, {{{c1(1) - x1().pow(2), Relation::Ge}}});
    CHECK(putinar_encode(prog, v, one, 0, "single") == 1);
    REQUIRE(prog.constraints.size() == 1);
    CHECK(prog.constraints[0].products.size() == 1);
    CHECK(putinar_encode(prog, v, SemialgebraicSet::box(lo, hi).unite(SemialgebraicSet::box(lo2, hi2)), 0, "two") == 2);
    CHECK(prog.constraints.size() == 3);
    putinar_encode(prog, v, SemialgebraicSet::whole(1), 0, "whole");
    CHECK(prog.constraints.back().products.empty());
    CHECK(putinar_encode(prog, v, SemialgebraicSet::empty(1), 0, "none") == 0);
}

TEST_CASE("block cap") {
    auto prog = single(Polynomial::state_var(3, 0, 0).pow(10) + Polynomial::constant(3, 0, 1));
    CHECK_THROWS_AS(sos_to_sdp(prog, 20), BasisTooLarge);
}

TEST_CASE("each SOS constraint gets one block of the half-basis size") {
    SystemModel m = load_model(model_path("vanderpol1"));
    auto built = build_program(m, SynthesisConfig{});
    auto low = sos_to_sdp(built.program);
    REQUIRE(low.constraint_block.size() == built.program.constraints.size());
    for (std::size_t k = 0; k < low.constraint_block.size(); ++k) {
        const int size = low.sdp.block_sizes[low.constraint_block[k]];
        bool is_basis = false;
        for (int h = 0; h <= 10; ++h) is_basis |= size == (h + 1) * (h + 2) / 2;  // monomials of degree <= h in 2 vars
        CHECK(is_basis);
    }
}

TEST_CASE("vanderpol-1 synthesis verifies and detects a perturbed coefficient") {
    SystemModel m = load_model(model_path("vanderpol1"));
    SynthesisConfig cfg;
    auto built = build_program(m, cfg);
    auto sol = IpmSolver().solve(sos_to_sdp(built.program).sdp);
    auto cert = extract_and_verify(sol, built, m, cfg);
    CHECK(cert.certified);
    for (const auto& [k, r] : cert.residuals) CHECK(r <= 1e-6);
    CHECK(cert.offline_bound() > 0.343 - 0.15);

    SdpSolution bad = sol;
    bad.u[static_cast<std::size_t>(built.v.ids[0])] += 0.1;
    CHECK_THROWS_AS(extract_and_verify(bad, built, m, cfg), VerificationFailed);

    // scaled certificates still satisfy the homogeneous conditions
    auto res = certificate_residuals(cert.v * 1.5, cert.gamma * 1.5, m, 2000, 3);
    CHECK(res.at("init") <= 1e-6);
    CHECK(res.at("nonneg") <= 1e-6);
    CHECK(res.at("decrease") <= 1e-6);
    CHECK(res.at("unsafe") <= 1e-6);
}

TEST_CASE("vacuous safety gives gamma 0") {
    SystemModel m = load_model(model_path("vanderpol1"));
    m.U = SemialgebraicSet::empty(2);
    m.exit = ExitPolicy::Safe;
    auto cert = synthesize(m, SynthesisConfig{}, IpmSolver());
    CHECK(cert.gamma < 1e-6);
    CHECK(cert.offline_bound() > 1 - 1e-6);
}

TEST_CASE("reach-avoid with empty target builds the safety program") {
    SystemModel m = load_model(model_path("equil"));
    m.T = SemialgebraicSet::empty(2);
    auto ra = sos_to_sdp(build_ra_program(m, SynthesisConfig{}).program);
    SystemModel s = m;
    s.mode = Mode::Safety;
    s.T.reset();
    s.exit = ExitPolicy::Unsafe;
    auto sa = sos_to_sdp(build_safety_program(s, SynthesisConfig{}).program);
    CHECK(ra.sdp.block_sizes == sa.sdp.block_sizes);
    CHECK(ra.sdp.num_equalities() == sa.sdp.num_equalities());
}

TEST_CASE("solver failure surfaces as SynthesisFailed") {
    SystemModel m = load_model(model_path("vanderpol1"));
    SdpSolution failed;
    failed.status = SdpStatus::Failed;
    failed.message = "canned";
    CHECK_THROWS_AS(synthesize(m, SynthesisConfig{}, CannedSolver(failed)), SynthesisFailed);
    SdpSolution inf;
    inf.status = SdpStatus::Infeasible;
    CHECK_THROWS_AS(synthesize(m, SynthesisConfig{}, CannedSolver(inf)), SynthesisFailed);
}

TEST_CASE("mis-signed encoding does not verify") {
    SystemModel m = load_model(model_path("vanderpol1"));
    SynthesisConfig cfg;
    cfg.flip_sign = true;
    CHECK_THROWS_AS(synthesize(m, cfg, IpmSolver()), VerificationFailed);
    cfg.verify_tol = 1e9;
    auto cert = synthesize(m, cfg, IpmSolver());
    CHECK(cert.residuals.at("unsafe") > 1e-2);
}

TEST_CASE("certificate json round trip") {
    Certificate c;
    c.v = Polynomial::state_var(2, 0, 0).pow(2) * 0.5 + Polynomial::constant(2, 0, 0.25);
    c.gamma = 0.3;
    c.degree = 4;
    c.residuals = {{"init", 0.0}};
    c.certified = true;
    auto back = certificate_from_json(certificate_to_json(c), 2);
    CHECK(back.gamma == 0.3);
    CHECK(max_coeff_diff(back.v, c.v) == 0.0);
    CHECK(back.certified);
    CHECK_THROWS_AS(certificate_from_json(nlohmann::json::object(), 2), SchemaError);
}
