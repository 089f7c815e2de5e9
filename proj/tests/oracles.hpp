#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the grid engine.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// Lattice walk in half units: k = 2x, step k +- 1 with probability 1/2.
// X = {|k| <= 2}, U = {k >= 2} (x >= 0.75), leaving X is safe.
struct LatticeEvent {
    int time;
    double lo, hi;  // region [lo, hi] in state units
};

inline bool lattice_in_x(int k) { return k >= -2 && k <= 2; }
inline bool lattice_in_u(int k) { return k >= 2; }

// P(hit U before leaving X | start k): gambler's ruin between k=-3 (exit) and k=2.
inline double lattice_ruin(int k) {
    if (!lattice_in_x(k)) return 0.0;
    if (lattice_in_u(k)) return 1.0;
    return (k + 3) / 5.0;
}

struct LatticeTruth {
    double q;  // P(observations matched and U avoided up to t_k)
    double p;  // P(the above and U hit afterwards)
};

// Enumerates every noise outcome up to t_k + 1.
inline LatticeTruth lattice_enumerate(int k0, const std::vector<LatticeEvent>& obs) {
    const int tk = obs.back().time;
    LatticeTruth r{0, 0};
    const long paths = 1L << (tk + 1);
    for (long bits = 0; bits < paths; ++bits) {
        int k = k0;
        bool alive = true;
        for (int t = 0; t <= tk && alive; ++t) {
            const LatticeEvent* ev = nullptr;
            for (const auto& e : obs)
                if (e.time == t) ev = &e;
            const double x = k / 2.0;
            if (!lattice_in_x(k)) alive = false;
            else if (ev) alive = x >= ev->lo && x <= ev->hi;
            else alive = !lattice_in_u(k);
            k += (bits >> t & 1) ? 1 : -1;
        }
        if (!alive) continue;
        const double w = std::ldexp(1.0, -(tk + 1));
        r.q += w;
        r.p += w * lattice_ruin(k);
    }
    return r;
}

// Fine 1-D dynamic program for x' = x + a + b w, w ~ U[-1,1], on [lo, hi]
// with node spacing h. The expectation of the piecewise-linear interpolant is
// integrated exactly through cumulative trapezoid sums, so it shares no code
// path with Gauss-Legendre quadrature. status(x): 0 continue, 1 fail (value 1),
// 2 success (value 0). Outside [lo, hi] counts as fail.
inline std::vector<double> dp_1d(double lo, double hi, double h, double a, double b,
                                 const std::function<int(double)>& status, double eps, int max_iters) {
    const int n = static_cast<int>(std::lround((hi - lo) / h)) + 1;
    std::vector<double> v(n, 0.0), cum(n, 0.0), nv(n);
    auto xs = [&](int i) { return lo + i * h; };
    for (int i = 0; i < n; ++i) v[i] = status(xs(i)) == 1 ? 1.0 : 0.0;
    // integral of the interpolant from lo to y, with value 1 below lo and above hi
    auto prim = [&](double y) {
        if (y <= lo) return y - lo;  // value 1 outside
        if (y >= hi) return cum[n - 1] + (y - hi);
        const double s = (y - lo) / h;
        int i = std::min(static_cast<int>(s), n - 2);
        const double f = s - i;
        const double vy = v[i] + f * (v[i + 1] - v[i]);
        return cum[i] + 0.5 * f * h * (v[i] + vy);
    };
    for (int it = 0; it < max_iters; ++it) {
        for (int i = 1; i < n; ++i) cum[i] = cum[i - 1] + 0.5 * h * (v[i - 1] + v[i]);
        double resid = 0;
        for (int i = 0; i < n; ++i) {
            const int st = status(xs(i));
            double val;
            if (st == 1) val = 1.0;
            else if (st == 2) val = 0.0;
            else {
                const double y0 = xs(i) + a - b, y1 = xs(i) + a + b;
                val = (prim(y1) - prim(y0)) / (y1 - y0);
            }
            resid = std::max(resid, std::abs(val - v[i]));
            nv[i] = val;
        }
        v.swap(nv);
        if (resid < eps) break;
    }
    return v;
}

}  // namespace oracle
