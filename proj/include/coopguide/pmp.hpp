#pragma once

// First-order necessary conditions for the cooperative intercept problem:
// Hamiltonian, costate dynamics, the optimal turn-rate law, transversality,
// and an adaptive RK5(4) integrator for the combined state-costate system.

#include <algorithm>
#include <limits>
#include <ostream>
#include <vector>

#include "coopguide/common.hpp"
#include "coopguide/engagement.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Types
// ----------------------------------------------------------------

struct Costate {
    double p_x = 0.0;
    double p_y = 0.0;
    double p_theta = 0.0;
};

/// The 6N-dimensional integration vector: all pursuer states followed by
/// all costates.
struct ExtendedState {
    std::vector<PursuerState> states;
    std::vector<Costate> costates;

    int n() const { return static_cast<int>(states.size()); }

    std::vector<double> pack() const {
        std::vector<double> y(6 * states.size());
        const std::size_t m = states.size();
        for (std::size_t i = 0; i < m; ++i) {
            y[3 * i + 0] = states[i].x;
            y[3 * i + 1] = states[i].y;
            y[3 * i + 2] = states[i].theta;
            y[3 * m + 3 * i + 0] = costates[i].p_x;
            y[3 * m + 3 * i + 1] = costates[i].p_y;
            y[3 * m + 3 * i + 2] = costates[i].p_theta;
        }
        return y;
    }

    static ExtendedState unpack(const std::vector<double>& y) {
        if (y.size() % 6 != 0) throw DimensionMismatch("extended state length not 6N");
        const std::size_t m = y.size() / 6;
        ExtendedState e;
        e.states.resize(m);
        e.costates.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
            e.states[i] = {y[3 * i + 0], y[3 * i + 1], y[3 * i + 2]};
            e.costates[i] = {y[3 * m + 3 * i + 0], y[3 * m + 3 * i + 1], y[3 * m + 3 * i + 2]};
        }
        return e;
    }
};

/// Dense output of one integration: nodes at every accepted step.
struct Trajectory {
    std::vector<double> times;         // strictly increasing
    std::vector<ExtendedState> nodes;  // same length as times
    double kappa = 0.0;

    double t_front() const { return times.front(); }
    double t_back() const { return times.back(); }
};

// ----------------------------------------------------------------
// PMP relations
// ----------------------------------------------------------------

inline void check_kappa(double kappa) {
    if (!(kappa > 0.0 && kappa < 1.0)) throw InvalidKappa("kappa must lie in (0,1)");
}

/// u_i = p_theta_i / (1 - kappa), the stationarity condition of H in u_i.
inline double optimal_control(double p_theta, double kappa) {
    check_kappa(kappa);
    return p_theta / (1.0 - kappa);
}

/// Integrand of the cost: kappa + (1-kappa)/2 * sum u_i^2.
inline double running_cost(const std::vector<double>& u, double kappa) {
    check_kappa(kappa);
    double ss = 0.0;
    for (double ui : u) ss += ui * ui;
    return kappa + 0.5 * (1.0 - kappa) * ss;
}

/// Hamiltonian with the abnormal multiplier fixed at -1.
inline double hamiltonian(const ExtendedState& e, const std::vector<double>& u, double kappa) {
    if (u.size() != e.states.size())
        throw DimensionMismatch("command vector length does not match N");
    double h = 0.0;
    for (std::size_t i = 0; i < e.states.size(); ++i) {
        h += e.costates[i].p_x * std::cos(e.states[i].theta);
        h += e.costates[i].p_y * std::sin(e.states[i].theta);
        h += e.costates[i].p_theta * u[i];
    }
    return h - running_cost(u, kappa);
}

/// Hamiltonian evaluated at the optimal control of every pursuer.
inline double hamiltonian_optimal(const ExtendedState& e, double kappa) {
    std::vector<double> u(e.states.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = optimal_control(e.costates[i].p_theta, kappa);
    return hamiltonian(e, u, kappa);
}

/// Costate dynamics: p_x, p_y are constants of the motion.
inline void costate_rates(const PursuerState& s, const Costate& c,
                          double& dpx, double& dpy, double& dptheta) {
    dpx = 0.0;
    dpy = 0.0;
    dptheta = c.p_x * std::sin(s.theta) - c.p_y * std::cos(s.theta);
}

/// Sum of p_theta over pursuers; zero on the transversality manifold.
inline double transversality_residual(const ExtendedState& e) {
    double s = 0.0;
    for (const auto& c : e.costates) s += c.p_theta;
    return s;
}

namespace detail {

/// Right-hand side of the combined system on the packed representation,
/// with u_i eliminated through the optimal control law.
inline void extended_rhs(const std::vector<double>& y, double inv_one_minus_kappa,
                         std::vector<double>& dy) {
    const std::size_t m = y.size() / 6;
    dy.resize(y.size());
    for (std::size_t i = 0; i < m; ++i) {
        const double theta = y[3 * i + 2];
        const double px = y[3 * m + 3 * i + 0];
        const double py = y[3 * m + 3 * i + 1];
        const double ptheta = y[3 * m + 3 * i + 2];
        const double st = std::sin(theta), ct = std::cos(theta);
        dy[3 * i + 0] = ct;
        dy[3 * i + 1] = st;
        dy[3 * i + 2] = ptheta * inv_one_minus_kappa;
        dy[3 * m + 3 * i + 0] = 0.0;
        dy[3 * m + 3 * i + 1] = 0.0;
        dy[3 * m + 3 * i + 2] = px * st - py * ct;
    }
}

}  // namespace detail

/// Time derivative of the full extended state under the optimal control.
inline ExtendedState extended_rates(const ExtendedState& e, double kappa) {
    check_kappa(kappa);
    std::vector<double> y = e.pack(), dy;
    detail::extended_rhs(y, 1.0 / (1.0 - kappa), dy);
    return ExtendedState::unpack(dy);
}

// ----------------------------------------------------------------
// Integrator: embedded Dormand-Prince 5(4), adaptive, FSAL
// ----------------------------------------------------------------

namespace detail {

// Butcher tableau of DOPRI5.
inline constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
// 5th-order solution weights are the last row of kA; kE is b5 - b4.
inline constexpr double kE[7] = {71.0 / 57600,  0.0,           -71.0 / 16695, 71.0 / 1920,
                                 -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

}  // namespace detail

/// Integrates the parameterized system from t0 to t1 (backward when t1 < t0)
/// with local error per step bounded by tol (used as both absolute and
/// relative tolerance). The returned trajectory is ordered by ascending time
/// and contains a node at every accepted step, endpoints included.
inline Trajectory integrate(const ExtendedState& e0, double t0, double t1, double kappa,
                            double tol = 1e-10) {
    check_kappa(kappa);
    if (t0 == t1) throw Error("integrate requires t0 != t1");
    if (!(tol > 0.0)) throw Error("integrate requires tol > 0");

    const double inv1mk = 1.0 / (1.0 - kappa);
    const double dir = (t1 > t0) ? 1.0 : -1.0;
    const std::size_t dim = 6 * e0.states.size();

    std::vector<double> y = e0.pack(), ynew(dim), ytmp(dim), yerr(dim);
    std::vector<std::vector<double>> k(7, std::vector<double>(dim));

    Trajectory traj;
    traj.kappa = kappa;
    traj.times.push_back(t0);
    traj.nodes.push_back(e0);

    detail::extended_rhs(y, inv1mk, k[0]);

    // initial step from the scale of y and f
    double h;
    {
        double ny = 0.0, nf = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            ny = std::max(ny, std::abs(y[j]));
            nf = std::max(nf, std::abs(k[0][j]));
        }
        h = 0.01 * std::max(ny, 1.0) / std::max(nf, 1.0);
        h = dir * std::min({h, std::abs(t1 - t0), 0.5});
    }

    double t = t0;
    bool last = false;
    while (!last) {
        if (dir * (t + h - t1) >= 0.0) {
            h = t1 - t;
            last = true;
        }
        if (std::abs(h) < 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), 1.0))
            throw StepFailure("step size underflow at t=" + std::to_string(t));

        for (int s = 1; s < 7; ++s) {
            for (std::size_t j = 0; j < dim; ++j) {
                double acc = 0.0;
                for (int q = 0; q < s; ++q) acc += detail::kA[s][q] * k[q][j];
                ytmp[j] = y[j] + h * acc;
            }
            detail::extended_rhs(ytmp, inv1mk, k[s]);
        }
        // stage 7 state is the 5th-order solution (FSAL)
        for (std::size_t j = 0; j < dim; ++j) {
            ynew[j] = ytmp[j];
            double err = 0.0;
            for (int q = 0; q < 7; ++q) err += detail::kE[q] * k[q][j];
            yerr[j] = h * err;
        }

        double errnorm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double sc = tol + tol * std::max(std::abs(y[j]), std::abs(ynew[j]));
            const double e = yerr[j] / sc;
            errnorm += e * e;
        }
        errnorm = std::sqrt(errnorm / static_cast<double>(dim));

        if (errnorm <= 1.0) {
            t = last ? t1 : t + h;
            y.swap(ynew);
            k[0].swap(k[6]);  // FSAL
            traj.times.push_back(t);
            traj.nodes.push_back(ExtendedState::unpack(y));
        } else {
            last = false;
        }
        const double factor =
            std::clamp(0.9 * std::pow(std::max(errnorm, 1e-16), -0.2), 0.2, 5.0);
        h *= factor;
    }

    if (dir < 0.0) {
        std::reverse(traj.times.begin(), traj.times.end());
        std::reverse(traj.nodes.begin(), traj.nodes.end());
    }
    return traj;
}

/// Cubic Hermite interpolation of the trajectory at time t (t within range).
inline ExtendedState sample_state(const Trajectory& traj, double t) {
    const auto& ts = traj.times;
    if (ts.size() < 2 || t < ts.front() - 1e-12 || t > ts.back() + 1e-12)
        throw Error("sample time outside trajectory range");
    t = std::clamp(t, ts.front(), ts.back());
    auto it = std::upper_bound(ts.begin(), ts.end(), t);
    std::size_t hi = std::min<std::size_t>(std::distance(ts.begin(), it), ts.size() - 1);
    if (hi == 0) hi = 1;
    const std::size_t lo = hi - 1;
    const double h = ts[hi] - ts[lo];
    const double s = (t - ts[lo]) / h;

    const double inv1mk = 1.0 / (1.0 - traj.kappa);
    std::vector<double> y0 = traj.nodes[lo].pack(), y1 = traj.nodes[hi].pack(), f0, f1;
    detail::extended_rhs(y0, inv1mk, f0);
    detail::extended_rhs(y1, inv1mk, f1);

    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    std::vector<double> out(y0.size());
    for (std::size_t j = 0; j < y0.size(); ++j)
        out[j] = h00 * y0[j] + h * h10 * f0[j] + h01 * y1[j] + h * h11 * f1[j];
    return ExtendedState::unpack(out);
}

/// Optimal command vector at a node.
inline std::vector<double> node_commands(const ExtendedState& e, double kappa) {
    std::vector<double> u(e.states.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = optimal_control(e.costates[i].p_theta, kappa);
    return u;
}

/// Trapezoidal cost J = integral of kappa + (1-kappa)/2 sum u^2 over the
/// trajectory's node grid.
inline double trajectory_cost(const Trajectory& traj) {
    double J = 0.0;
    double prev = running_cost(node_commands(traj.nodes.front(), traj.kappa), traj.kappa);
    for (std::size_t k = 1; k < traj.times.size(); ++k) {
        const double cur = running_cost(node_commands(traj.nodes[k], traj.kappa), traj.kappa);
        J += 0.5 * (prev + cur) * (traj.times[k] - traj.times[k - 1]);
        prev = cur;
    }
    return J;
}

// ----------------------------------------------------------------
// CSV export
// ----------------------------------------------------------------

/// One row per (time, pursuer): t,i,x,y,theta,px,py,ptheta,u,H
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t,i,x,y,theta,px,py,ptheta,u,H\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        const ExtendedState& e = traj.nodes[k];
        const double H = hamiltonian_optimal(e, traj.kappa);
        for (int i = 0; i < e.n(); ++i) {
            const auto& s = e.states[i];
            const auto& c = e.costates[i];
            os << format_double(traj.times[k]) << ',' << i + 1 << ',' << format_double(s.x)
               << ',' << format_double(s.y) << ',' << format_double(s.theta) << ','
               << format_double(c.p_x) << ',' << format_double(c.p_y) << ','
               << format_double(c.p_theta) << ','
               << format_double(optimal_control(c.p_theta, traj.kappa)) << ','
               << format_double(H) << '\n';
        }
    }
}

}  // namespace coopguide
