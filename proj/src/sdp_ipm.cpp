#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include <fmt/format.h>

#include "obarrier/errors.hpp"
#include "obarrier/sdp.hpp"

namespace obarrier {

std::string to_string(SdpStatus s) {
    switch (s) {
        case SdpStatus::Optimal: return "optimal";
        case SdpStatus::Infeasible: return "infeasible";
        case SdpStatus::Unbounded: return "unbounded";
        case SdpStatus::Inaccurate: return "inaccurate";
        case SdpStatus::Failed: return "failed";
    }
    return "unknown";
}

double primal_residual(const SdpProblem& p, const std::vector<Eigen::MatrixXd>& X, const std::vector<double>& u) {
    double worst = 0.0;
    for (const auto& eq : p.equalities) {
        double s = 0.0;
        for (const auto& e : eq.entries)
            s += (e.row == e.col ? 1.0 : 2.0) * e.value * X[static_cast<std::size_t>(e.block)](e.row, e.col);
        for (const auto& [k, c] : eq.free) s += c * u[static_cast<std::size_t>(k)];
        worst = std::max(worst, std::abs(eq.rhs - s));
    }
    return worst;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Triplet {
    int r, c;
    double v;
};

// Rows of the equality system restricted to one block, both triangles listed.
struct BlockRow {
    int row;    // global equality index
    int local;  // index inside the component
    std::vector<Triplet> t;
};

struct Component {
    std::vector<int> rows;
    std::vector<int> blocks;
};

struct Layout {
    int m = 0, nf = 0;
    std::vector<int> sizes;
    std::vector<std::vector<BlockRow>> by_block;
    std::vector<Component> comps;
    std::vector<int> comp_of_row, local_of_row;
    Mat F;  // m x nf
    Vec b, cf;
    std::vector<Mat> C;
    double total_dim = 0;
};

int find(std::vector<int>& p, int a) {
    while (p[a] != a) a = p[a] = p[p[a]];
    return a;
}

Layout make_layout(const SdpProblem& p) {
    Layout L;
    L.m = static_cast<int>(p.equalities.size());
    L.nf = p.num_free;
    L.sizes = p.block_sizes;
    const int nb = static_cast<int>(L.sizes.size());
    L.by_block.resize(nb);
    L.F = Mat::Zero(L.m, L.nf);
    L.b = Vec::Zero(L.m);
    L.cf = Vec::Zero(L.nf);
    for (int k = 0; k < static_cast<int>(p.free_cost.size()); ++k) L.cf[k] = p.free_cost[k];
    L.C.resize(nb);
    for (int bk = 0; bk < nb; ++bk) {
        L.C[bk] = Mat::Zero(L.sizes[bk], L.sizes[bk]);
        L.total_dim += L.sizes[bk];
    }
    for (const auto& e : p.block_cost) {
        L.C[e.block](e.row, e.col) += e.value;
        if (e.row != e.col) L.C[e.block](e.col, e.row) += e.value;
    }

    // union rows through shared blocks: parent array over rows + blocks
    std::vector<int> parent(L.m + nb);
    std::iota(parent.begin(), parent.end(), 0);
    for (int i = 0; i < L.m; ++i) {
        const auto& eq = p.equalities[i];
        L.b[i] = eq.rhs;
        for (const auto& [k, c] : eq.free) {
            if (k < 0 || k >= L.nf) throw Error("sdp: free variable index out of range");
            L.F(i, k) += c;
        }
        // group entries per block
        std::vector<std::vector<Triplet>> per(nb);
        for (const auto& e : eq.entries) {
            if (e.block < 0 || e.block >= nb || e.row < 0 || e.col < 0 || e.row >= L.sizes[e.block] ||
                e.col >= L.sizes[e.block])
                throw Error("sdp: entry out of range");
            per[e.block].push_back({e.row, e.col, e.value});
            if (e.row != e.col) per[e.block].push_back({e.col, e.row, e.value});
        }
        bool touched = false;
        for (int bk = 0; bk < nb; ++bk) {
            if (per[bk].empty()) continue;
            touched = true;
            L.by_block[bk].push_back({i, -1, std::move(per[bk])});
            int a = find(parent, i), c = find(parent, L.m + bk);
            if (a != c) parent[a] = c;
        }
        if (!touched) throw Error("sdp: equality " + std::to_string(i) + " touches no PSD block");
    }
    std::vector<int> comp_id(L.m + nb, -1);
    L.comp_of_row.assign(L.m, -1);
    L.local_of_row.assign(L.m, -1);
    for (int i = 0; i < L.m; ++i) {
        int r = find(parent, i);
        if (comp_id[r] < 0) {
            comp_id[r] = static_cast<int>(L.comps.size());
            L.comps.emplace_back();
        }
        auto& c = L.comps[comp_id[r]];
        L.comp_of_row[i] = comp_id[r];
        L.local_of_row[i] = static_cast<int>(c.rows.size());
        c.rows.push_back(i);
    }
    for (int bk = 0; bk < nb; ++bk) {
        if (L.by_block[bk].empty()) continue;
        L.comps[comp_id[find(parent, L.m + bk)]].blocks.push_back(bk);
        for (auto& br : L.by_block[bk]) br.local = L.local_of_row[br.row];
    }
    return L;
}

// A(K)_i = sum over blocks <A_ib, K_b>
Vec apply_A(const Layout& L, const std::vector<Mat>& K) {
    Vec out = Vec::Zero(L.m);
    for (std::size_t bk = 0; bk < L.by_block.size(); ++bk)
        for (const auto& br : L.by_block[bk]) {
            double s = 0.0;
            for (const auto& t : br.t) s += t.v * K[bk](t.r, t.c);
            out[br.row] += s;
        }
    return out;
}

std::vector<Mat> apply_At(const Layout& L, const Vec& y) {
    std::vector<Mat> out(L.sizes.size());
    for (std::size_t bk = 0; bk < L.sizes.size(); ++bk) {
        out[bk] = Mat::Zero(L.sizes[bk], L.sizes[bk]);
        for (const auto& br : L.by_block[bk]) {
            const double yi = y[br.row];
            if (yi == 0.0) continue;
            for (const auto& t : br.t) out[bk](t.r, t.c) += yi * t.v;
        }
    }
    return out;
}

double inner(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k].array() * b[k].array()).sum();
    return s;
}

double fro(const std::vector<Mat>& a) { return std::sqrt(inner(a, a)); }

Mat sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

// Largest alpha with X + alpha dX PSD (inf if unbounded).
double max_step(const Mat& X, const Mat& dX) {
    Eigen::LLT<Mat> llt(X);
    if (llt.info() != Eigen::Success) return 0.0;
    Mat Linv_dX = llt.matrixL().solve(dX);
    Mat S = llt.matrixL().solve(Linv_dX.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(S), Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff();
    return lmin < 0 ? -1.0 / lmin : INFINITY;
}

// Schur complement M (block diagonal over components) bordered by the free
// variable columns: [M F; F' 0], factored by LU with partial pivoting.
struct Schur {
    Mat K;
    Eigen::PartialPivLU<Mat> lu;
};

Schur build_schur(const Layout& L, const std::vector<Mat>& X, const std::vector<Mat>& W) {
    Schur s;
    const int m = L.m, nf = L.nf;
    s.K = Mat::Zero(m + nf, m + nf);
    for (const auto& comp : L.comps) {
        const int mc = static_cast<int>(comp.rows.size());
        Mat M = Mat::Zero(mc, mc);
        for (int bk : comp.blocks) {
            const auto& rows = L.by_block[bk];
            const Mat& Xb = X[bk];
            const Mat& Wb = W[bk];
            const int n = L.sizes[bk];
            const int nr = static_cast<int>(rows.size());
#pragma omp parallel for schedule(dynamic)
            for (int a = 0; a < nr; ++a) {
                const auto& ri = rows[a];
                // T = X A_i W
                Mat XA = Mat::Zero(n, n);
                for (const auto& t : ri.t) XA.col(t.c) += t.v * Xb.col(t.r);
                Mat T = XA * Wb;
                for (int c = 0; c < nr; ++c) {
                    const auto& rk = rows[c];
                    double v = 0.0;
                    for (const auto& t : rk.t) v += t.v * T(t.r, t.c);
                    M(ri.local, rk.local) += v;
                }
            }
        }
        M = sym(M);
        for (int r = 0; r < mc; ++r)
            for (int c = 0; c < mc; ++c) s.K(comp.rows[r], comp.rows[c]) = M(r, c);
    }
    s.K.topRightCorner(m, nf) = L.F;
    s.K.bottomLeftCorner(nf, m) = L.F.transpose();
    s.lu.compute(s.K);
    return s;
}

// Solve M dy + F du = h, F' dy = rf, with two refinement sweeps.
void solve_newton(const Layout& L, const Schur& s, const Vec& h, const Vec& rf, Vec& dy, Vec& du) {
    Vec rhs(L.m + L.nf);
    rhs << h, rf;
    Vec sol = s.lu.solve(rhs);
    for (int k = 0; k < 2; ++k) sol += s.lu.solve(rhs - s.K * sol);
    dy = sol.head(L.m);
    du = sol.tail(L.nf);
}

}  // namespace

SdpSolution IpmSolver::solve(const SdpProblem& prob) const {
    SdpSolution sol;
    Layout L;
    try {
        L = make_layout(prob);
    } catch (const Error& e) {
        sol.status = SdpStatus::Failed;
        sol.message = e.what();
        return sol;
    }
    const std::size_t nb = L.sizes.size();

    // starting point
    const double bnorm = L.b.norm();
    double xi = 10.0, eta = 10.0;
    {
        std::vector<double> anorm(L.m, 0.0);
        for (const auto& rows : L.by_block)
            for (const auto& br : rows)
                for (const auto& t : br.t) anorm[br.row] += t.v * t.v;
        double cmax = 0.0;
        for (const auto& c : L.C) cmax = std::max(cmax, c.norm());
        for (int i = 0; i < L.m; ++i) {
            double an = std::sqrt(anorm[i]);
            xi = std::max(xi, (1.0 + std::abs(L.b[i])) / (1.0 + an));
            eta = std::max(eta, an);
        }
        eta = std::max({eta, cmax, L.cf.lpNorm<Eigen::Infinity>()});
        for (int n : L.sizes) {
            xi = std::max(xi, std::sqrt(static_cast<double>(n)));
            eta = std::max(eta, std::sqrt(static_cast<double>(n)));
        }
    }
    std::vector<Mat> X(nb), Z(nb), W(nb);
    for (std::size_t k = 0; k < nb; ++k) {
        X[k] = xi * Mat::Identity(L.sizes[k], L.sizes[k]);
        Z[k] = eta * Mat::Identity(L.sizes[k], L.sizes[k]);
    }
    Vec y = Vec::Zero(L.m), u = Vec::Zero(L.nf);
    const double cnorm = fro(L.C) + L.cf.norm();

    auto finish = [&](SdpStatus st, int it, const std::string& msg) {
        sol.status = st;
        sol.iterations = it;
        sol.message = msg;
        sol.X = X;
        sol.u.assign(u.data(), u.data() + u.size());
        sol.y.assign(y.data(), y.data() + y.size());
        sol.primal_objective = inner(L.C, X) + L.cf.dot(u);
        sol.dual_objective = L.b.dot(y);
        sol.primal_residual = primal_residual(prob, X, sol.u);
        return sol;
    };

    double best_merit = INFINITY;
    struct Snapshot {
        double merit = INFINITY;
        std::vector<Mat> X, Z;
        Vec y, u;
        int it = 0;
    } best;
    double ap_prev = 0.0, ad_prev = 0.0;
    int stall = 0;
    bool lost_definiteness = false;
    for (int it = 0; it < opt_.max_iters; ++it) {
        for (std::size_t k = 0; k < nb; ++k) {
            Eigen::LLT<Mat> llt(Z[k]);
            if (llt.info() != Eigen::Success) {
                if (it == 0) return finish(SdpStatus::Failed, it, "dual slack lost definiteness");
                lost_definiteness = true;
                break;
            }
            W[k] = llt.solve(Mat::Identity(L.sizes[k], L.sizes[k]));
            W[k] = sym(W[k]);
        }
        if (lost_definiteness) break;
        Vec rp = L.b - apply_A(L, X) - L.F * u;
        std::vector<Mat> Aty = apply_At(L, y);
        std::vector<Mat> Rd(nb);
        for (std::size_t k = 0; k < nb; ++k) Rd[k] = L.C[k] - Aty[k] - Z[k];
        Vec rf = L.cf - L.F.transpose() * y;
        const double mu = inner(X, Z) / L.total_dim;
        const double pobj = inner(L.C, X) + L.cf.dot(u);
        const double dobj = L.b.dot(y);
        const double relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        const double pinf = rp.norm() / (1.0 + bnorm);
        const double dinf = (fro(Rd) + rf.norm()) / (1.0 + cnorm);
        sol.dual_residual = dinf;
        if (opt_.verbose)
            fmt::print(stderr, "ipm {:3d} pobj {:+.8e} dobj {:+.8e} gap {:.2e} pinf {:.2e} dinf {:.2e} mu {:.2e}\n", it,
                       pobj, dobj, relgap, pinf, dinf, mu);
        if (relgap < opt_.tol && pinf < opt_.tol && dinf < opt_.tol) return finish(SdpStatus::Optimal, it, "converged");

        // infeasibility certificates
        if (dobj > 0) {
            std::vector<Mat> ray(nb);
            for (std::size_t k = 0; k < nb; ++k) ray[k] = Aty[k] + Z[k];
            Vec fty = L.F.transpose() * y;
            if ((fro(ray) + fty.norm()) / dobj < opt_.tol * 10 && dobj > 1e3 * (1.0 + cnorm))
                return finish(SdpStatus::Infeasible, it, "dual ray found");
        }
        if (pobj < 0) {
            Vec ax = apply_A(L, X) + L.F * u;
            if (ax.norm() / -pobj < opt_.tol * 10 && -pobj > 1e3 * (1.0 + bnorm))
                return finish(SdpStatus::Unbounded, it, "primal ray found");
        }
        const double merit = std::max({relgap, pinf, dinf});
        if (merit < best.merit) {
            best = {merit, X, Z, y, u, it};
        }
        if (merit < best_merit * 0.999) {
            best_merit = merit;
            stall = 0;
        } else if (++stall > 8 || merit > 1e3 * best.merit) {
            break;
        }

        Schur schur = build_schur(L, X, W);
        if (!std::isfinite(schur.lu.rcond())) break;

        // X Rd W, reused by predictor and corrector
        std::vector<Mat> XRdW(nb);
        for (std::size_t k = 0; k < nb; ++k) XRdW[k] = X[k] * Rd[k] * W[k];

        auto direction = [&](const std::vector<Mat>& K, std::vector<Mat>& dX, Vec& dy, std::vector<Mat>& dZ, Vec& du) {
            std::vector<Mat> G(nb);
            for (std::size_t k = 0; k < nb; ++k) G[k] = K[k] - XRdW[k];
            Vec h = rp - apply_A(L, G);
            solve_newton(L, schur, h, rf, dy, du);
            std::vector<Mat> Atdy = apply_At(L, dy);
            dZ.resize(nb);
            dX.resize(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                dZ[k] = Rd[k] - Atdy[k];
                dX[k] = sym(K[k] - X[k] * dZ[k] * W[k]);
            }
        };
        auto steps = [&](const std::vector<Mat>& dX, const std::vector<Mat>& dZ, double& ap, double& ad) {
            ap = INFINITY;
            ad = INFINITY;
            for (std::size_t k = 0; k < nb; ++k) {
                ap = std::min(ap, max_step(X[k], dX[k]));
                ad = std::min(ad, max_step(Z[k], dZ[k]));
            }
        };

        // predictor
        std::vector<Mat> K(nb), dXa, dZa;
        Vec dya, dua;
        for (std::size_t k = 0; k < nb; ++k) K[k] = -X[k];
        direction(K, dXa, dya, dZa, dua);
        double ap, ad;
        steps(dXa, dZa, ap, ad);
        ap = std::min(1.0, ap);
        ad = std::min(1.0, ad);
        double mu_aff = 0.0;
        for (std::size_t k = 0; k < nb; ++k)
            mu_aff += ((X[k] + ap * dXa[k]).array() * (Z[k] + ad * dZa[k]).array()).sum();
        mu_aff /= L.total_dim;
        double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
        // keep centering while infeasibility dominates
        if (std::max(pinf, dinf) > 1e3 * relgap) sigma = std::max(sigma, 0.1);

        // corrector
        for (std::size_t k = 0; k < nb; ++k) {
            const int n = L.sizes[k];
            K[k] = (sigma * mu * Mat::Identity(n, n) - dXa[k] * dZa[k]) * W[k] - X[k];
        }
        std::vector<Mat> dX, dZ;
        Vec dy, du;
        direction(K, dX, dy, dZ, du);
        steps(dX, dZ, ap, ad);
        const double tau = std::min(0.99, opt_.step_fraction + 0.09 * std::min({1.0, ap_prev, ad_prev}));
        ap = std::min(1.0, tau * ap);
        ad = std::min(1.0, tau * ad);
        ap_prev = ap;
        ad_prev = ad;
        if (opt_.verbose) fmt::print(stderr, "    sigma {:.2e} ap {:.3f} ad {:.3f}\n", sigma, ap, ad);
        for (std::size_t k = 0; k < nb; ++k) {
            X[k] = sym(X[k] + ap * dX[k]);
            Z[k] = sym(Z[k] + ad * dZ[k]);
        }
        u += ap * du;
        y += ad * dy;
        if (!std::isfinite(u.sum() + y.sum())) return finish(SdpStatus::Failed, it, "non-finite iterate");
    }

    // out of iterations or stalled: fall back to the best iterate seen
    if (best.merit < INFINITY) {
        X = best.X;
        Z = best.Z;
        y = best.y;
        u = best.u;
    }
    Vec rp = L.b - apply_A(L, X) - L.F * u;
    const double pobj = inner(L.C, X) + L.cf.dot(u);
    const double dobj = L.b.dot(y);
    if (dobj > 1e6 * (1.0 + cnorm)) return finish(SdpStatus::Infeasible, opt_.max_iters, "dual objective diverged");
    const double pinf = rp.norm() / (1.0 + bnorm);
    const double relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    if (pinf < 1e-5 && relgap < 1e-4) return finish(SdpStatus::Inaccurate, best.it, "stalled near optimum");
    return finish(SdpStatus::Failed, opt_.max_iters, lost_definiteness ? "dual slack lost definiteness" : "no convergence");
}

std::unique_ptr<SolverInterface> solver_from_env() {
    const char* env = std::getenv("OBARRIER_SOLVER");
    std::string s = env ? env : "ipm";
    if (s == "ipm" || s.empty()) return std::make_unique<IpmSolver>();
    if (s == "none") return nullptr;
    throw Error("unknown OBARRIER_SOLVER value \"" + s + "\" (expected ipm or none)");
}

}  // namespace obarrier
