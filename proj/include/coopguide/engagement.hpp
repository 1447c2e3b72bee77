#pragma once

// Planar engagement kinematics for N constant-speed pursuers against a
// stationary point target. All internal math is nondimensional: lengths are
// divided by the pursuer speed V so every pursuer flies at unit speed and
// nondimensional time equals physical seconds.

#include <string>
#include <vector>

#include "coopguide/common.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Types
// ----------------------------------------------------------------

struct PursuerState {
    double x = 0.0;      // nondimensional position
    double y = 0.0;
    double theta = 0.0;  // heading, rad
};

struct CombinedState {
    std::vector<PursuerState> pursuers;  // index i is pursuer identity
};

struct TargetState {
    double x = 0.0;
    double y = 0.0;
    double speed = 0.0;    // must stay 0: stationary target only
    double heading = 0.0;
    double accel = 0.0;

    static TargetState fixed(double x, double y) { return TargetState{x, y, 0.0, 0.0, 0.0}; }
};

/// Per-pursuer state in the target-centred polar frame.
struct PolarFeatures {
    double r = 0.0;           // range
    double r_dot = 0.0;       // range rate
    double lambda_dot = 0.0;  // LOS rate
    double lambda = 0.0;      // LOS angle (carried for the augmented feature set)
};

enum class FeatureMode { paper, augmented };

inline std::string to_string(FeatureMode m) {
    return m == FeatureMode::paper ? "paper" : "augmented";
}

inline FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "paper") return FeatureMode::paper;
    if (s == "augmented") return FeatureMode::augmented;
    throw FormatError("unknown feature mode: '" + s + "'");
}

struct EngagementConfig {
    int n_pursuers = 2;
    double kappa = 0.01;                    // time-vs-effort weight, in (0,1)
    double delta = deg_to_rad(10.0);        // prescribed relative intercept angle, rad
    double speed = 1000.0;                  // physical pursuer speed, m/s
    double switch_radius = 200.0;           // physical PN switch range, m
    // Endgame gain. An optimal extremal approaches intercept on a
    // near-constant-turn arc, and a constant-turn arc onto the target is the
    // gain-2 PN trajectory (lambda_dot = u/2 on an arc), so gain 2 completes
    // the handed-off turn instead of under-turning it like higher gains.
    double pn_gain = 2.0;
    FeatureMode feature_mode = FeatureMode::augmented;

    double switch_radius_nd() const { return switch_radius / speed; }

    int feature_dim() const {
        return feature_mode == FeatureMode::augmented ? 3 * n_pursuers + (n_pursuers - 1)
                                                      : 3 * n_pursuers;
    }

    void validate() const {
        if (n_pursuers < 2) throw Error("n_pursuers must be >= 2");
        if (!(kappa > 0.0 && kappa < 1.0)) throw InvalidKappa("kappa must lie in (0,1)");
        if (!(speed > 0.0)) throw Error("speed must be positive");
        if (!(switch_radius > 0.0)) throw Error("switch_radius must be positive");
        if (!(pn_gain > 0.0)) throw Error("pn_gain must be positive");
    }
};

// r below this is treated as coincident with the target (LOS rate is singular).
inline constexpr double kCoincidenceEps = 1e-9;

// ----------------------------------------------------------------
// Operations
// ----------------------------------------------------------------

/// Unit-speed kinematics: returns (dx/dt, dy/dt, dtheta/dt) for turn rate u.
inline void pursuer_rates(const PursuerState& s, double u,
                          double& dx, double& dy, double& dtheta) {
    dx = std::cos(s.theta);
    dy = std::sin(s.theta);
    dtheta = u;
}

inline PolarFeatures polar_features(const PursuerState& s, const TargetState& target) {
    const double dx = target.x - s.x;
    const double dy = target.y - s.y;
    const double r = std::hypot(dx, dy);
    if (r < kCoincidenceEps)
        throw CoincidentTarget("pursuer coincident with target (r < 1e-9)");
    PolarFeatures f;
    f.r = r;
    f.lambda = std::atan2(dy, dx);
    const double off = s.theta - f.lambda;  // heading relative to the LOS
    f.r_dot = -std::cos(off);
    f.lambda_dot = -std::sin(off) / r;
    return f;
}

/// Proportional navigation turn-rate command.
inline double pn_command(const PolarFeatures& f, const EngagementConfig& cfg) {
    return cfg.pn_gain * f.lambda_dot;
}

/// Rotates every position by phi about the origin and shifts headings by phi.
inline CombinedState rotate(const CombinedState& c, double phi) {
    CombinedState out = c;
    const double cp = std::cos(phi), sp = std::sin(phi);
    for (auto& p : out.pursuers) {
        const double x = p.x, y = p.y;
        p.x = cp * x - sp * y;
        p.y = sp * x + cp * y;
        p.theta = wrap_angle(p.theta + phi);
    }
    return out;
}

/// Physical metres in, nondimensional lengths out. Headings pass through.
inline PursuerState nondimensionalize(double x_m, double y_m, double heading,
                                      const EngagementConfig& cfg) {
    return PursuerState{x_m / cfg.speed, y_m / cfg.speed, heading};
}

inline void dimensionalize(const PursuerState& s, const EngagementConfig& cfg,
                           double& x_m, double& y_m, double& heading) {
    x_m = s.x * cfg.speed;
    y_m = s.y * cfg.speed;
    heading = s.theta;
}

/// Physical lateral acceleration for a nondimensional turn rate.
inline double command_to_accel(double u, const EngagementConfig& cfg) {
    return cfg.speed * u;
}

/// Feature vector fed to the guidance network: (r, r_dot, lambda_dot) per
/// pursuer, plus the consecutive LOS gaps lambda_{i+1}-lambda_i in augmented
/// mode (wrapped to [-pi, pi]). The raw LOS rate is kept rather than a
/// bounded transform like r*lambda_dot: its 1/r growth near intercept is
/// exactly the signal that trims the final approach angle, and flattening
/// it costs closed-loop angle accuracy even when it looks better on a
/// per-sample validation split.
inline std::vector<double> assemble_features(const CombinedState& c, const TargetState& target,
                                             const EngagementConfig& cfg) {
    if (static_cast<int>(c.pursuers.size()) != cfg.n_pursuers)
        throw DimensionMismatch("combined state size does not match configured N");
    std::vector<double> out;
    out.reserve(cfg.feature_dim());
    std::vector<double> lambdas(c.pursuers.size());
    for (std::size_t i = 0; i < c.pursuers.size(); ++i) {
        const PolarFeatures f = polar_features(c.pursuers[i], target);
        out.push_back(f.r);
        out.push_back(f.r_dot);
        out.push_back(f.lambda_dot);
        lambdas[i] = f.lambda;
    }
    if (cfg.feature_mode == FeatureMode::augmented) {
        for (std::size_t i = 0; i + 1 < lambdas.size(); ++i)
            out.push_back(wrap_angle(lambdas[i + 1] - lambdas[i]));
    }
    return out;
}

}  // namespace coopguide
