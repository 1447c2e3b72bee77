#pragma once

// Independent optimality baseline: single shooting on the PMP boundary value
// problem. Unknowns are the 3N initial costates plus the free final time;
// residuals pin terminal positions, heading gaps, the costate sum and the
// Hamiltonian. Solved by Levenberg-Marquardt with a finite-difference
// Jacobian and deterministic multistart.

#include <array>
#include <atomic>
#include <optional>
#include <thread>
#include <vector>

#include "coopguide/dataset.hpp"
#include "coopguide/engagement.hpp"
#include "coopguide/mlp.hpp"
#include "coopguide/pmp.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Types
// ----------------------------------------------------------------

struct ShootingUnknowns {
    std::vector<Costate> costates;  // per-pursuer initial (p_x, p_y, p_theta)
    double t_f = 0.0;

    std::vector<double> pack() const {
        std::vector<double> z;
        z.reserve(3 * costates.size() + 1);
        for (const auto& c : costates) {
            z.push_back(c.p_x);
            z.push_back(c.p_y);
            z.push_back(c.p_theta);
        }
        z.push_back(t_f);
        return z;
    }

    static ShootingUnknowns unpack(const std::vector<double>& z) {
        if (z.size() < 4 || (z.size() - 1) % 3 != 0)
            throw DimensionMismatch("shooting unknowns must pack 3N+1 values");
        ShootingUnknowns u;
        const std::size_t n = (z.size() - 1) / 3;
        u.costates.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            u.costates[i] = {z[3 * i], z[3 * i + 1], z[3 * i + 2]};
        u.t_f = z.back();
        return u;
    }
};

struct OptimalSolution {
    Trajectory trajectory;
    ShootingUnknowns unknowns;
    double cost_J = 0.0;
    double control_effort = 0.0;  // physical m^2/s^3
    double residual_norm = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    int start_index = -1;
};

struct ShootingConfig {
    int multistart = 16;
    std::uint64_t rng_seed = 0;
    double integ_tol = 1e-10;
    double fd_step = 1e-7;
    double residual_tol = 1e-8;
    int max_iter = 100;
    double tf_min = 1e-3;
    double tf_max = 100.0;
};

// ----------------------------------------------------------------
// Residuals
// ----------------------------------------------------------------

/// Terminal defect of the extremal launched from (s0, z): [x_i, y_i] (2N),
/// wrapped heading gaps minus delta (N-1), costate sum (1), Hamiltonian (1).
inline std::vector<double> residuals(const ShootingUnknowns& z, const CombinedState& s0,
                                     const EngagementConfig& cfg, double integ_tol = 1e-10,
                                     Trajectory* traj_out = nullptr) {
    cfg.validate();
    const int n = cfg.n_pursuers;
    if (static_cast<int>(s0.pursuers.size()) != n || static_cast<int>(z.costates.size()) != n)
        throw DimensionMismatch("residuals: state/unknown size mismatch");
    if (!(z.t_f > 0.0)) throw Error("residuals: t_f must be positive");

    ExtendedState e0;
    e0.states = s0.pursuers;
    e0.costates = z.costates;
    Trajectory traj = integrate(e0, 0.0, z.t_f, cfg.kappa, integ_tol);
    const ExtendedState& ef = traj.nodes.back();

    std::vector<double> r;
    r.reserve(3 * n + 1);
    for (int i = 0; i < n; ++i) {
        r.push_back(ef.states[i].x);
        r.push_back(ef.states[i].y);
    }
    for (int i = 0; i + 1 < n; ++i)
        r.push_back(wrap_angle(ef.states[i + 1].theta - ef.states[i].theta - cfg.delta));
    r.push_back(transversality_residual(ef));
    r.push_back(hamiltonian_optimal(ef, cfg.kappa));
    if (traj_out) *traj_out = std::move(traj);
    return r;
}

inline double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// ----------------------------------------------------------------
// Dense linear solve (Gaussian elimination, partial pivoting)
// ----------------------------------------------------------------

namespace detail {

inline std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        if (a[piv * n + col] == 0.0) throw Error("singular normal equations");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
            std::swap(b[piv], b[col]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] * inv;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t r = n; r-- > 0;) {
        double acc = b[r];
        for (std::size_t c = r + 1; c < n; ++c) acc -= a[r * n + c] * x[c];
        x[r] = acc / a[r * n + r];
    }
    return x;
}

}  // namespace detail

// ----------------------------------------------------------------
// Levenberg-Marquardt
// ----------------------------------------------------------------

struct LmResult {
    ShootingUnknowns z;
    double residual_norm = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

/// Damped Gauss-Newton iteration on the shooting residuals. The Jacobian is
/// forward finite differences with the configured step on every unknown.
inline LmResult levenberg_marquardt(ShootingUnknowns z0, const CombinedState& s0,
                                    const EngagementConfig& cfg, const ShootingConfig& sc) {
    const std::size_t m = 3 * z0.costates.size() + 1;
    auto eval = [&](const std::vector<double>& zv) {
        ShootingUnknowns u = ShootingUnknowns::unpack(zv);
        u.t_f = std::clamp(u.t_f, sc.tf_min, sc.tf_max);
        return residuals(u, s0, cfg, sc.integ_tol);
    };

    LmResult out;
    std::vector<double> z = z0.pack();
    z.back() = std::clamp(z.back(), sc.tf_min, sc.tf_max);
    std::vector<double> r;
    try {
        r = eval(z);
    } catch (const Error&) {
        out.z = ShootingUnknowns::unpack(z);
        return out;
    }
    double fnorm = norm2(r);
    double lambda = 1e-3;

    for (int iter = 0; iter < sc.max_iter; ++iter) {
        out.iterations = iter;
        if (fnorm < sc.residual_tol) break;

        // finite-difference Jacobian, column per unknown
        std::vector<std::vector<double>> Jc(m);
        bool jac_ok = true;
        for (std::size_t j = 0; j < m; ++j) {
            std::vector<double> zp = z;
            const double h = sc.fd_step * std::max(1.0, std::abs(zp[j]));
            zp[j] += h;
            try {
                const std::vector<double> rp = eval(zp);
                Jc[j].resize(m);
                for (std::size_t i = 0; i < m; ++i) Jc[j][i] = (rp[i] - r[i]) / h;
            } catch (const Error&) {
                jac_ok = false;
                break;
            }
        }
        if (!jac_ok) break;

        // normal equations JtJ + lambda*diag(JtJ)
        std::vector<double> jtj(m * m), jtr(m);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = a; b < m; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += Jc[a][i] * Jc[b][i];
                jtj[a * m + b] = jtj[b * m + a] = s;
            }
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += Jc[a][i] * r[i];
            jtr[a] = s;
        }

        bool accepted = false;
        for (int inner = 0; inner < 12; ++inner) {
            std::vector<double> aug = jtj;
            for (std::size_t a = 0; a < m; ++a) {
                const double d = jtj[a * m + a];
                aug[a * m + a] += lambda * (d > 0.0 ? d : 1.0);
            }
            std::vector<double> dz;
            try {
                dz = detail::solve_linear(std::move(aug), jtr);
            } catch (const Error&) {
                lambda *= 10.0;
                continue;
            }
            std::vector<double> zn = z;
            for (std::size_t a = 0; a < m; ++a) zn[a] -= dz[a];
            zn.back() = std::clamp(zn.back(), sc.tf_min, sc.tf_max);
            try {
                const std::vector<double> rn = eval(zn);
                const double fn = norm2(rn);
                if (fn < fnorm) {
                    z = std::move(zn);
                    r = rn;
                    fnorm = fn;
                    lambda = std::max(lambda * 0.3, 1e-12);
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
                // step left the integrable region; treat as a failed trial
            }
            lambda *= 10.0;
        }
        if (!accepted) break;
    }

    out.z = ShootingUnknowns::unpack(z);
    out.residual_norm = fnorm;
    out.converged = fnorm < sc.residual_tol;
    return out;
}

// ----------------------------------------------------------------
// Effort and multistart
// ----------------------------------------------------------------

/// Physical control effort (1/2) * integral of the squared turn-rate sum,
/// by trapezoid over the trajectory nodes. Nondimensional u and t scale to
/// a = V*u with dt_phys = dt_nd, so the integral picks up a factor V^2.
inline double control_effort(const Trajectory& traj, const EngagementConfig& cfg) {
    if (traj.nodes.empty()) throw Error("control_effort: empty trajectory");
    auto half_sum_sq = [&](const ExtendedState& e) {
        double s = 0.0;
        for (const auto& c : e.costates) {
            const double u = optimal_control(c.p_theta, traj.kappa);
            s += u * u;
        }
        return 0.5 * s;
    };
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < traj.nodes.size(); ++k) {
        const double dt = traj.times[k + 1] - traj.times[k];
        acc += 0.5 * dt * (half_sum_sq(traj.nodes[k]) + half_sum_sq(traj.nodes[k + 1]));
    }
    return acc * cfg.speed * cfg.speed;
}

namespace detail {

/// PMP-consistent starting point: LOS-aligned (p_x, p_y) directions, flat
/// p_theta, scaled so H(0) = 0, with t_f from straight-line time-to-go.
inline std::optional<ShootingUnknowns> heuristic_start(const CombinedState& s0,
                                                       const EngagementConfig& cfg,
                                                       const std::vector<double>* u_hint) {
    const int n = cfg.n_pursuers;
    ShootingUnknowns z;
    z.costates.resize(n);
    double rmax = 0.0;
    double A = 0.0, B = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& p = s0.pursuers[i];
        const double r = std::hypot(p.x, p.y);
        rmax = std::max(rmax, r);
        const double lam = std::atan2(-p.y, -p.x);  // LOS to the origin
        z.costates[i].p_x = std::cos(lam);
        z.costates[i].p_y = std::sin(lam);
        z.costates[i].p_theta = u_hint ? (*u_hint)[i] * (1.0 - cfg.kappa) : 0.0;
        A += z.costates[i].p_x * std::cos(p.theta) + z.costates[i].p_y * std::sin(p.theta);
        B += z.costates[i].p_theta * z.costates[i].p_theta;
    }
    B /= 2.0 * (1.0 - cfg.kappa);

    if (u_hint) {
        // keep the hinted p_theta, rescale only the position costates
        if (A == 0.0) return std::nullopt;
        const double s = (cfg.kappa - B) / A;
        if (!(s > 0.0)) return std::nullopt;
        for (auto& c : z.costates) {
            c.p_x *= s;
            c.p_y *= s;
        }
    } else {
        double s;
        try {
            s = solve_scale(A, B, cfg.kappa);
        } catch (const Error&) {
            return std::nullopt;
        }
        for (auto& c : z.costates) {
            c.p_x *= s;
            c.p_y *= s;
            c.p_theta *= s;
        }
    }
    z.t_f = 1.1 * rmax;
    return z;
}

inline ShootingUnknowns random_start(const CombinedState& s0, const EngagementConfig& cfg,
                                     Rng& rng) {
    const int n = cfg.n_pursuers;
    ShootingUnknowns z;
    z.costates.resize(n);
    double rmax = 0.0;
    double A = 0.0, B = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& p = s0.pursuers[i];
        rmax = std::max(rmax, std::hypot(p.x, p.y));
        const double dir = rng.angle();
        z.costates[i].p_x = std::cos(dir);
        z.costates[i].p_y = std::sin(dir);
        z.costates[i].p_theta = rng.uniform(-1.0, 1.0);
        A += z.costates[i].p_x * std::cos(p.theta) + z.costates[i].p_y * std::sin(p.theta);
        B += z.costates[i].p_theta * z.costates[i].p_theta;
    }
    B /= 2.0 * (1.0 - cfg.kappa);
    double s = 1.0;
    try {
        s = solve_scale(A, B, cfg.kappa);
    } catch (const Error&) {
        s = cfg.kappa;  // fall back to a small costate cloud
    }
    s = std::min(s, 50.0);
    for (auto& c : z.costates) {
        c.p_x *= s;
        c.p_y *= s;
        c.p_theta *= s;
    }
    z.t_f = rmax * rng.log_uniform(0.8, 2.5);
    return z;
}

}  // namespace detail

/// Multistart shooting solve. Branch 0 is the PMP-consistent heuristic,
/// branch 1 (when a model is supplied) seeds p_theta from the model's
/// commands, the rest are randomized. Branches use per-index rng streams and
/// a deterministic reduction, so the result does not depend on thread count.
/// Returns the converged branch with the lowest cost_J (ties: lower t_f,
/// lower branch index); if none converge, the branch with the smallest
/// residual norm.
inline OptimalSolution solve_tpbvp(const CombinedState& s0, const EngagementConfig& cfg,
                                   const ShootingConfig& sc = {},
                                   const MlpModel* hint_model = nullptr) {
    cfg.validate();
    if (sc.multistart < 1) throw Error("solve_tpbvp requires multistart >= 1");
    for (const auto& p : s0.pursuers)
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.theta))
            throw Error("solve_tpbvp: non-finite initial state");

    std::vector<std::optional<ShootingUnknowns>> starts(sc.multistart);
    int bi = 0;
    if (bi < sc.multistart) starts[bi++] = detail::heuristic_start(s0, cfg, nullptr);
    if (hint_model && bi < sc.multistart) {
        std::vector<double> u =
            forward(*hint_model, assemble_features(s0, TargetState{}, cfg));
        starts[bi++] = detail::heuristic_start(s0, cfg, &u);
    }
    for (; bi < sc.multistart; ++bi) {
        Rng rng = Rng::stream(sc.rng_seed, static_cast<std::uint64_t>(bi));
        starts[bi] = detail::random_start(s0, cfg, rng);
    }

    struct Branch {
        LmResult lm;
        double cost_J = std::numeric_limits<double>::infinity();
        bool valid = false;
    };
    std::vector<Branch> branches(sc.multistart);

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= sc.multistart) return;
            if (!starts[idx]) continue;
            Branch& b = branches[idx];
            b.lm = levenberg_marquardt(*starts[idx], s0, cfg, sc);
            if (!std::isfinite(b.lm.residual_norm)) continue;
            try {
                Trajectory traj;
                residuals(b.lm.z, s0, cfg, sc.integ_tol, &traj);
                b.cost_J = trajectory_cost(traj);
                b.valid = true;
            } catch (const Error&) {
            }
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads = std::min<unsigned>(hw, static_cast<unsigned>(sc.multistart));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    int best = -1;
    auto better = [&](int a, int b) {
        const Branch& A = branches[a];
        const Branch& B = branches[b];
        if (A.lm.converged != B.lm.converged) return A.lm.converged;
        if (A.lm.converged) {
            if (A.cost_J != B.cost_J) return A.cost_J < B.cost_J;
            if (A.lm.z.t_f != B.lm.z.t_f) return A.lm.z.t_f < B.lm.z.t_f;
            return a < b;
        }
        return A.lm.residual_norm < B.lm.residual_norm;
    };
    for (int i = 0; i < sc.multistart; ++i) {
        if (!branches[i].valid) continue;
        if (best < 0 || better(i, best)) best = i;
    }

    OptimalSolution sol;
    if (best < 0) return sol;
    const Branch& bb = branches[best];
    sol.unknowns = bb.lm.z;
    sol.residual_norm = bb.lm.residual_norm;
    sol.converged = bb.lm.converged;
    sol.iterations = bb.lm.iterations;
    sol.start_index = best;
    residuals(sol.unknowns, s0, cfg, sc.integ_tol, &sol.trajectory);
    sol.cost_J = trajectory_cost(sol.trajectory);
    sol.control_effort = control_effort(sol.trajectory, cfg);
    return sol;
}

/// Summary line for export next to the trajectory CSV.
inline void write_solution_summary(std::ostream& os, const OptimalSolution& sol) {
    os << "J,effort,tf,residual,converged\n"
       << format_double(sol.cost_J) << ',' << format_double(sol.control_effort) << ','
       << format_double(sol.unknowns.t_f) << ',' << format_double(sol.residual_norm) << ','
       << (sol.converged ? 1 : 0) << '\n';
}

}  // namespace coopguide
