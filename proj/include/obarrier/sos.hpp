#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "obarrier/model.hpp"
#include "obarrier/polynomial.hpp"
#include "obarrier/sdp.hpp"
#include "obarrier/semialgebraic.hpp"

namespace obarrier {

/// c + sum_k a_k * id_k
struct LinExpr {
    double constant = 0.0;
    std::map<int, double> coeffs;

    LinExpr& operator+=(const LinExpr& o);
    LinExpr& operator*=(double s);
    bool is_zero() const;
};

/// Polynomial in the state variables whose coefficients are affine in the
/// decision ids.
class AffinePoly {
public:
    using TermMap = std::map<Exponents, LinExpr>;

    explicit AffinePoly(std::size_t nx = 0) : nx_(nx) {}
    static AffinePoly from(const Polynomial& p);  // constant coefficients, noise free

    std::size_t num_vars() const noexcept { return nx_; }
    const TermMap& terms() const noexcept { return terms_; }
    int degree() const;

    void add(const Exponents& e, const LinExpr& c);
    AffinePoly& operator+=(const AffinePoly& o);
    AffinePoly& operator-=(const AffinePoly& o);
    AffinePoly& operator*=(double s);
    friend AffinePoly operator+(AffinePoly a, const AffinePoly& b) { return a += b; }
    friend AffinePoly operator-(AffinePoly a, const AffinePoly& b) { return a -= b; }

    /// Fix the ids to values.
    Polynomial evaluate(const std::vector<double>& ids) const;

private:
    std::size_t nx_ = 0;
    TermMap terms_;
};

/// Polynomial template sum_k id_k * basis_k.
struct PolyTemplate {
    std::size_t num_vars = 0;
    std::vector<Exponents> basis;
    std::vector<int> ids;

    AffinePoly affine() const;
    Polynomial instantiate(const std::vector<double>& values) const;
};

/// SOS polynomial z(x)' S z(x), S PSD, z = monomials up to half_degree.
struct SosMultiplier {
    std::size_t num_vars = 0;
    int half_degree = 0;
};

/// base + sum_k sigma_k * h_k must be SOS.
struct SosConstraint {
    AffinePoly base;
    std::vector<std::pair<int, Polynomial>> products;  // (multiplier index, h)
    std::string group;
};

struct SosProgram {
    std::size_t num_vars = 0;
    int num_ids = 0;
    std::vector<std::string> id_names;
    LinExpr objective;  // minimized
    std::vector<SosMultiplier> multipliers;
    std::vector<SosConstraint> constraints;

    int new_id(std::string name);
    PolyTemplate new_template(int degree, const std::string& prefix);
};

/// Encodes "p >= 0 on S" per disjunct as p - sum_j sigma_j g_j in SOS. The
/// multiplier degree is mult_degree when positive, else the even part of
/// (constraint degree - deg g_j). flip_sign builds the "+" variant (test hook).
int putinar_encode(SosProgram& prog, const AffinePoly& p, const SemialgebraicSet& S, int mult_degree,
                   const std::string& group, bool flip_sign = false);

struct SynthesisConfig {
    int degree = 4;
    int mult_degree = 0;  // 0: automatic
    int block_cap = 300;
    int verify_samples = 10000;
    double verify_tol = 1e-6;
    bool rescale = true;      // map the X box to [-1,1]^n before building
    bool flip_sign = false;   // mis-signed Putinar encoding of the unsafe group, tests only
    std::uint64_t seed = 1;
};

/// Built program plus what is needed to read the certificate back.
struct BuiltProgram {
    SosProgram program;
    PolyTemplate v;
    int gamma_id = -1;
    std::vector<double> center, scale;  // x = center + scale * x~
    double exit_value = 1.0;
};

BuiltProgram build_safety_program(const SystemModel& model, const SynthesisConfig& cfg);
BuiltProgram build_ra_program(const SystemModel& model, const SynthesisConfig& cfg);
/// Dispatches on model.mode.
BuiltProgram build_program(const SystemModel& model, const SynthesisConfig& cfg);

struct SdpLowering {
    SdpProblem sdp;
    std::vector<int> constraint_block;  // per SOS constraint
    std::vector<int> multiplier_block;  // per multiplier
};

SdpLowering sos_to_sdp(const SosProgram& prog, int block_cap = 300);

/// Gram-matrix polynomial z' Q z.
Polynomial gram_polynomial(std::size_t nx, int half_degree, const Eigen::MatrixXd& Q);

struct Certificate {
    Polynomial v;
    double gamma = 1.0;
    int degree = 0;
    std::map<std::string, double> residuals;
    bool certified = false;
    std::string solver_status;

    double offline_bound() const { return std::max(0.0, 1.0 - gamma); }
};

/// Reads v and gamma from the solution and re-checks every program condition
/// at sampled points in original coordinates. Throws VerificationFailed when a
/// residual exceeds cfg.verify_tol.
Certificate extract_and_verify(const SdpSolution& sol, const BuiltProgram& built, const SystemModel& model,
                               const SynthesisConfig& cfg);

/// Sampled residuals of an arbitrary (v, gamma) against the model's program.
std::map<std::string, double> certificate_residuals(const Polynomial& v, double gamma, const SystemModel& model,
                                                    int samples, std::uint64_t seed);

/// build + lower + solve + verify. Throws SynthesisFailed on solver failure.
Certificate synthesize(const SystemModel& model, const SynthesisConfig& cfg, const SolverInterface& solver);

nlohmann::json certificate_to_json(const Certificate& c);
Certificate certificate_from_json(const nlohmann::json& j, std::size_t nx);
void save_certificate(const Certificate& c, const std::filesystem::path& path);
Certificate load_certificate(const std::filesystem::path& path, std::size_t nx);

}  // namespace obarrier
