#pragma once

// Closed-loop engagement: at each guidance step a policy (trained network,
// pure PN, or an open-loop oracle schedule) maps the combined state to
// turn-rate commands, held constant over the step. Each pursuer falls back
// to PN inside the switch radius and terminates at closest approach.

#include <optional>
#include <vector>

#include "coopguide/engagement.hpp"
#include "coopguide/mlp.hpp"
#include "coopguide/pmp.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Policy
// ----------------------------------------------------------------

enum class PolicyKind { fnn, pn, oracle_openloop };

inline std::string to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::fnn: return "fnn";
        case PolicyKind::pn: return "pn";
        default: return "oracle_openloop";
    }
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "fnn") return PolicyKind::fnn;
    if (s == "pn") return PolicyKind::pn;
    if (s == "oracle_openloop") return PolicyKind::oracle_openloop;
    throw FormatError("unknown policy kind: " + s);
}

struct GuidancePolicy {
    PolicyKind kind = PolicyKind::pn;
    EngagementConfig cfg;
    std::optional<MlpModel> model;       // kind == fnn
    std::optional<Trajectory> schedule;  // kind == oracle_openloop
    double command_clamp = 25.0;
    double hold_dt = 1e-3;  // schedule sampled at hold-interval midpoints

    void validate() const {
        cfg.validate();
        if (kind == PolicyKind::fnn) {
            if (!model) throw Error("fnn policy requires a model");
            if (model->dim_in() != cfg.feature_dim() || model->dim_out() != cfg.n_pursuers)
                throw DimensionMismatch("fnn policy: model dimensions do not match config");
        }
        if (kind == PolicyKind::oracle_openloop) {
            if (!schedule || schedule->nodes.empty())
                throw Error("oracle_openloop policy requires a schedule");
            if (schedule->nodes.front().n() != cfg.n_pursuers)
                throw DimensionMismatch("oracle_openloop policy: schedule pursuer count");
        }
        if (!(command_clamp > 0.0)) throw Error("command_clamp must be positive");
    }
};

inline GuidancePolicy make_pn_policy(const EngagementConfig& cfg) {
    GuidancePolicy p;
    p.kind = PolicyKind::pn;
    p.cfg = cfg;
    return p;
}

inline GuidancePolicy make_fnn_policy(MlpModel model, const EngagementConfig& cfg) {
    GuidancePolicy p;
    p.kind = PolicyKind::fnn;
    p.cfg = cfg;
    p.model = std::move(model);
    p.validate();
    return p;
}

inline GuidancePolicy make_openloop_policy(Trajectory schedule, const EngagementConfig& cfg,
                                           double hold_dt) {
    GuidancePolicy p;
    p.kind = PolicyKind::oracle_openloop;
    p.cfg = cfg;
    p.schedule = std::move(schedule);
    p.hold_dt = hold_dt;
    p.validate();
    return p;
}

/// Commands for the combined state at time t. FNN output is replaced by PN
/// for every pursuer inside the switch radius; the open-loop schedule is
/// sampled at the midpoint of the hold interval starting at t. All commands
/// are clamped to |u| <= command_clamp.
inline std::vector<double> guidance_command(const GuidancePolicy& p, const CombinedState& c,
                                            double t = 0.0) {
    p.validate();
    const TargetState target{};
    const int n = p.cfg.n_pursuers;
    if (static_cast<int>(c.pursuers.size()) != n)
        throw DimensionMismatch("guidance_command: pursuer count mismatch");

    std::vector<double> u(n, 0.0);
    switch (p.kind) {
        case PolicyKind::pn: {
            for (int i = 0; i < n; ++i)
                u[i] = pn_command(polar_features(c.pursuers[i], target), p.cfg);
            break;
        }
        case PolicyKind::fnn: {
            const std::vector<double> net = forward(*p.model, assemble_features(c, target, p.cfg));
            for (int i = 0; i < n; ++i) {
                const PolarFeatures f = polar_features(c.pursuers[i], target);
                u[i] = (f.r < p.cfg.switch_radius_nd()) ? pn_command(f, p.cfg) : net[i];
            }
            break;
        }
        case PolicyKind::oracle_openloop: {
            const Trajectory& sch = *p.schedule;
            const double ts =
                std::clamp(t + 0.5 * p.hold_dt, sch.t_front(), sch.t_back());
            const ExtendedState e = sample_state(sch, ts);
            for (int i = 0; i < n; ++i)
                u[i] = optimal_control(e.costates[i].p_theta, sch.kappa);
            break;
        }
    }
    for (double& v : u) v = std::clamp(v, -p.command_clamp, p.command_clamp);
    return u;
}

// ----------------------------------------------------------------
// Stepping
// ----------------------------------------------------------------

/// One RK4 update of a single pursuer under constant turn rate.
inline PursuerState step_pursuer(const PursuerState& s, double u, double dt) {
    auto f = [u](const PursuerState& q, double& dx, double& dy, double& dth) {
        pursuer_rates(q, u, dx, dy, dth);
    };
    double k1x, k1y, k1t, k2x, k2y, k2t, k3x, k3y, k3t, k4x, k4y, k4t;
    f(s, k1x, k1y, k1t);
    f({s.x + 0.5 * dt * k1x, s.y + 0.5 * dt * k1y, s.theta + 0.5 * dt * k1t}, k2x, k2y, k2t);
    f({s.x + 0.5 * dt * k2x, s.y + 0.5 * dt * k2y, s.theta + 0.5 * dt * k2t}, k3x, k3y, k3t);
    f({s.x + dt * k3x, s.y + dt * k3y, s.theta + dt * k3t}, k4x, k4y, k4t);
    PursuerState out;
    out.x = s.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    out.y = s.y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    out.theta = s.theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    return out;
}

inline CombinedState step(const CombinedState& c, const std::vector<double>& u, double dt) {
    if (u.size() != c.pursuers.size())
        throw DimensionMismatch("step: command vector length mismatch");
    if (!(dt > 0.0)) throw Error("step: dt must be positive");
    CombinedState out = c;
    for (std::size_t i = 0; i < c.pursuers.size(); ++i)
        out.pursuers[i] = step_pursuer(c.pursuers[i], u[i], dt);
    return out;
}

// ----------------------------------------------------------------
// Closed loop
// ----------------------------------------------------------------

struct StepRecord {
    double t = 0.0;
    double x = 0.0, y = 0.0, theta = 0.0;
    double u = 0.0;
    double r = 0.0;
    bool pn_mode = false;
};

struct SimResult {
    EngagementConfig cfg;
    std::vector<std::vector<StepRecord>> steps;  // per pursuer, common grid until termination
    std::vector<double> miss_distance_m;
    std::vector<double> intercept_time_s;        // closest-approach instant
    std::vector<double> intercept_heading;       // theta at that instant (rad)
    std::vector<double> switch_time_s;           // first sample inside switch radius; -1 never
    std::vector<double> path_length_nd;          // arc length to the intercept instant
    std::vector<double> angle_errors_rad;        // |gap_i - delta| per consecutive pair
    double relative_angle_error_rad = 0.0;       // worst pair
    double control_effort = 0.0;                 // m^2/s^3
    double final_time = 0.0;
    bool time_cap_exceeded = false;
    bool all_intercepted = false;
};

namespace detail {

struct ClosestApproach {
    double dist = 0.0;
    double t = 0.0;
    double frac = 0.0;  // position within the segment
};

inline ClosestApproach closest_on_segment(const PursuerState& a, const PursuerState& b,
                                          double ta, double tb) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double s = 0.0;
    if (len2 > 0.0) s = std::clamp(-(a.x * dx + a.y * dy) / len2, 0.0, 1.0);
    const double px = a.x + s * dx, py = a.y + s * dy;
    return {std::hypot(px, py), ta + s * (tb - ta), s};
}

}  // namespace detail

/// Iterate guidance and fixed-step RK4 with zero-order-hold commands until
/// every pursuer has passed its closest approach inside the switch radius
/// (or the time cap expires). dt and time_cap are nondimensional.
inline SimResult run_closed_loop(const CombinedState& s0, const GuidancePolicy& p, double dt,
                                 double time_cap = 60.0) {
    p.validate();
    if (!(dt > 0.0)) throw Error("run_closed_loop: dt must be positive");
    const EngagementConfig& cfg = p.cfg;
    const int n = cfg.n_pursuers;
    if (static_cast<int>(s0.pursuers.size()) != n)
        throw DimensionMismatch("run_closed_loop: pursuer count mismatch");
    const double switch_nd = cfg.switch_radius_nd();

    SimResult res;
    res.cfg = cfg;
    res.steps.resize(n);
    res.miss_distance_m.assign(n, 0.0);
    res.intercept_time_s.assign(n, 0.0);
    res.intercept_heading.assign(n, 0.0);
    res.switch_time_s.assign(n, -1.0);
    res.path_length_nd.assign(n, 0.0);

    CombinedState state = s0;         // live integration state
    CombinedState feature_state = s0; // terminated pursuers stay frozen here
    std::vector<bool> active(n, true);
    std::vector<double> range(n), effort_nd_each(n, 0.0);
    std::vector<PursuerState> prev_state(n);
    // last state outside the switch radius: terminated pursuers are frozen
    // here so the network never sees post-endgame feature blowups
    std::vector<PursuerState> handoff(s0.pursuers);
    std::vector<double> prev_u(n, 0.0);
    bool have_prev = false;
    for (int i = 0; i < n; ++i) range[i] = std::hypot(state.pursuers[i].x, state.pursuers[i].y);

    int n_active = n;
    double effort_nd = 0.0;
    for (long k = 0;; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (n_active == 0) {
            res.final_time = t;
            break;
        }
        if (t >= time_cap) {
            res.final_time = t;
            res.time_cap_exceeded = true;
            break;
        }

        for (int i = 0; i < n; ++i) {
            if (!active[i] || range[i] >= 1e-8) continue;
            // landed numerically on the target between detections
            res.miss_distance_m[i] = range[i] * cfg.speed;
            res.intercept_time_s[i] = t;
            res.intercept_heading[i] = state.pursuers[i].theta;
            res.path_length_nd[i] = t;
            active[i] = false;
            --n_active;
            feature_state.pursuers[i] = handoff[i];
        }
        if (n_active == 0) {
            res.final_time = t;
            break;
        }

        const std::vector<double> u = guidance_command(p, feature_state, t);
        for (int i = 0; i < n; ++i) {
            if (!active[i]) continue;
            if (res.switch_time_s[i] < 0.0 && range[i] < switch_nd) res.switch_time_s[i] = t;
            const bool pn_mode = p.kind == PolicyKind::pn ||
                                 (p.kind == PolicyKind::fnn && range[i] < switch_nd);
            res.steps[i].push_back({t, state.pursuers[i].x, state.pursuers[i].y,
                                    state.pursuers[i].theta, u[i], range[i], pn_mode});
        }

        for (int i = 0; i < n; ++i) {
            if (!active[i]) continue;
            const PursuerState before = state.pursuers[i];
            const PursuerState after = step_pursuer(before, u[i], dt);
            const double r_new = std::hypot(after.x, after.y);

            if (range[i] < switch_nd && r_new > range[i]) {
                // passed closest approach; refine within the last two segments
                detail::ClosestApproach ca =
                    detail::closest_on_segment(before, after, t, t + dt);
                PursuerState seg_a = before, seg_b = after;
                double seg_t0 = t, seg_u = u[i];
                bool on_prev = false;
                if (have_prev) {
                    const detail::ClosestApproach prev_ca =
                        detail::closest_on_segment(prev_state[i], before, t - dt, t);
                    if (prev_ca.dist < ca.dist) {
                        ca = prev_ca;
                        seg_a = prev_state[i];
                        seg_b = before;
                        seg_t0 = t - dt;
                        seg_u = prev_u[i];
                        on_prev = true;
                    }
                }
                res.miss_distance_m[i] = ca.dist * cfg.speed;
                res.intercept_time_s[i] = ca.t;
                res.intercept_heading[i] = seg_a.theta + seg_u * (ca.t - seg_t0);
                res.path_length_nd[i] = ca.t;  // unit speed: arc length = elapsed time
                // effort counts the applied command up to the intercept
                // instant only; the previous full step was already added
                if (on_prev)
                    effort_nd_each[i] -= seg_u * seg_u * (seg_t0 + dt - ca.t);
                else
                    effort_nd_each[i] += seg_u * seg_u * (ca.t - seg_t0);
                active[i] = false;
                --n_active;
                feature_state.pursuers[i] = handoff[i];
                continue;
            }

            effort_nd_each[i] += u[i] * u[i] * dt;
            prev_state[i] = before;
            prev_u[i] = u[i];
            if (range[i] >= switch_nd) handoff[i] = before;
            state.pursuers[i] = after;
            feature_state.pursuers[i] = after;
            range[i] = r_new;
        }
        have_prev = true;
    }

    for (int i = 0; i < n; ++i) effort_nd += effort_nd_each[i];
    res.control_effort = 0.5 * effort_nd * cfg.speed * cfg.speed;
    res.all_intercepted = true;
    for (int i = 0; i < n; ++i)
        if (active[i]) res.all_intercepted = false;
    for (int i = 0; i + 1 < n; ++i) {
        const double gap =
            wrap_angle(res.intercept_heading[i + 1] - res.intercept_heading[i]);
        res.angle_errors_rad.push_back(std::abs(wrap_angle(gap - cfg.delta)));
    }
    for (double e : res.angle_errors_rad)
        res.relative_angle_error_rad = std::max(res.relative_angle_error_rad, e);
    return res;
}

// ----------------------------------------------------------------
// Reports
// ----------------------------------------------------------------

/// Per-step trajectory dump, one row per pursuer per guidance step.
inline void write_sim_csv(std::ostream& os, const SimResult& r) {
    os << "t,i,x,y,theta,u,r,mode\n";
    std::size_t longest = 0;
    for (const auto& s : r.steps) longest = std::max(longest, s.size());
    for (std::size_t k = 0; k < longest; ++k)
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
            if (k >= r.steps[i].size()) continue;
            const StepRecord& s = r.steps[i][k];
            os << format_double(s.t) << ',' << i + 1 << ',' << format_double(s.x) << ','
               << format_double(s.y) << ',' << format_double(s.theta) << ','
               << format_double(s.u) << ',' << format_double(s.r) << ','
               << (s.pn_mode ? "PN" : "FNN") << '\n';
        }
    if (!os) throw IoError("sim csv write failed");
}

/// Summary: one row per pursuer, then one engagement row.
inline void metrics_report(std::ostream& os, const SimResult& r) {
    os << "pursuer,miss_m,intercept_time_s,switch_time_s,path_length_nd\n";
    for (std::size_t i = 0; i < r.miss_distance_m.size(); ++i)
        os << i + 1 << ',' << format_double(r.miss_distance_m[i]) << ','
           << format_double(r.intercept_time_s[i]) << ','
           << format_double(r.switch_time_s[i]) << ','
           << format_double(r.path_length_nd[i]) << '\n';
    os << "angle_error_deg,effort_m2s3,final_time_s,time_cap_exceeded\n"
       << format_double(rad_to_deg(r.relative_angle_error_rad)) << ','
       << format_double(r.control_effort) << ',' << format_double(r.final_time) << ','
       << (r.time_cap_exceeded ? 1 : 0) << '\n';
    if (!os) throw IoError("metrics report write failed");
}

}  // namespace coopguide
