#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace obarrier {

/// Entry of a symmetric coefficient matrix: A[row,col] = A[col,row] = value.
/// Only one triangle is listed.
struct SdpEntry {
    int block;
    int row;
    int col;
    double value;
};

struct SdpEquality {
    std::vector<SdpEntry> entries;               // <A_i, X>
    std::vector<std::pair<int, double>> free;    // F_i . u
    double rhs = 0.0;
};

/// min  c_f.u + sum_b <C_b, X_b>
/// s.t. <A_i, X> + F_i.u = b_i,  X_b PSD,  u free.
struct SdpProblem {
    std::vector<int> block_sizes;
    int num_free = 0;
    std::vector<SdpEquality> equalities;
    std::vector<double> free_cost;       // size num_free (empty means zero)
    std::vector<SdpEntry> block_cost;    // C, one triangle

    std::size_t num_equalities() const noexcept { return equalities.size(); }
};

enum class SdpStatus { Optimal, Infeasible, Unbounded, Inaccurate, Failed };

std::string to_string(SdpStatus s);

struct SdpSolution {
    SdpStatus status = SdpStatus::Failed;
    std::vector<Eigen::MatrixXd> X;
    std::vector<double> u;
    std::vector<double> y;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double primal_residual = 0.0;  // ||b - A(X) - F u||_inf
    double dual_residual = 0.0;
    int iterations = 0;
    std::string message;
};

class SolverInterface {
public:
    virtual ~SolverInterface() = default;
    virtual std::string name() const = 0;
    virtual SdpSolution solve(const SdpProblem& p) const = 0;
};

struct IpmOptions {
    double tol = 1e-8;
    int max_iters = 100;
    double step_fraction = 0.9;
    bool verbose = false;
};

/// Primal-dual interior point method, HKM search direction with Mehrotra
/// predictor-corrector, infeasible start. Free variables are eliminated from
/// the Schur complement system.
class IpmSolver final : public SolverInterface {
public:
    explicit IpmSolver(IpmOptions opt = {}) : opt_(opt) {}
    std::string name() const override { return "ipm"; }
    SdpSolution solve(const SdpProblem& p) const override;

private:
    IpmOptions opt_;
};

/// Solver selected by the OBARRIER_SOLVER environment variable ("ipm" by
/// default). Returns nullptr for "none".
std::unique_ptr<SolverInterface> solver_from_env();

/// Residual of a candidate solution: max_i |b_i - <A_i,X> - F_i.u|.
double primal_residual(const SdpProblem& p, const std::vector<Eigen::MatrixXd>& X, const std::vector<double>& u);

}  // namespace obarrier
