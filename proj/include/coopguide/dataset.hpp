#pragma once

// Training-data synthesis: draw terminal conditions on the intercept
// manifold (all pursuers at the origin, delta-spaced headings, zero costate
// sum, zero Hamiltonian), propagate the extremal field backward, and slice
// each trajectory into (feature -> optimal command) pairs.

#include <atomic>
#include <fstream>
#include <functional>
#include <thread>
#include <vector>

#include "coopguide/common.hpp"
#include "coopguide/engagement.hpp"
#include "coopguide/pmp.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Types
// ----------------------------------------------------------------

struct TerminalSampleSpec {
    // terminal heading of pursuer 1; the rest follow at delta spacing
    double theta1_min = -kPi;
    double theta1_max = kPi;
    // free terminal p_theta values (pursuers 1..N-1) before scaling
    double ptheta_min = -1.0;
    double ptheta_max = 1.0;
    // relative per-pursuer position-costate magnitude, drawn uniform in
    // [costate_weight_min, 1]. At 1.0 every pursuer gets a unit direction and
    // the family degenerates to an equal-magnitude slice of the extremal
    // field; values below 1 restore the missing dimension, which closed-loop
    // runs through asymmetric initial states need.
    double costate_weight_min = 0.25;
    // backward horizon tau, drawn log-uniformly
    double duration_min = 0.5;
    double duration_max = 8.0;
    std::uint64_t rng_seed = 0;

    // feasible-envelope caps: draws outside are resampled / trajectories
    // outside are discarded. The command cap doubles as the fold control:
    // admitting aggressive extremals makes the feature-to-command field
    // multivalued and the regression target unlearnable, while capping too
    // low excludes the geometries feedback runs actually visit.
    double scale_max = 5.0;         // cap on the H=0 costate scale factor
    double command_max = 1.2;       // |u| cap, terminal and along the path
    double range_max = 20.0;        // discard trajectories leaving this radius

    // sample extraction
    double sample_spacing = 0.1;    // nondimensional time between samples
    double min_range = 0.4;         // discard nodes with any r_i below this

    double integ_tol = 1e-10;
    int max_resample = 1000;

    void validate() const {
        if (!(theta1_min <= theta1_max)) throw Error("theta1 interval is empty");
        if (!(ptheta_min <= ptheta_max)) throw Error("ptheta interval is empty");
        if (!(duration_min > 0.0 && duration_min <= duration_max))
            throw Error("duration interval must satisfy 0 < min <= max");
        if (!(costate_weight_min > 0.0 && costate_weight_min <= 1.0))
            throw Error("costate_weight_min must lie in (0, 1]");
        if (!(scale_max > 0.0)) throw Error("scale_max must be positive");
        if (!(command_max > 0.0)) throw Error("command_max must be positive");
        if (!(range_max > 0.0)) throw Error("range_max must be positive");
        if (!(sample_spacing > 0.0)) throw Error("sample_spacing must be positive");
        if (!(min_range >= 0.0)) throw Error("min_range must be nonnegative");
        if (!(integ_tol > 0.0)) throw Error("integ_tol must be positive");
        if (max_resample < 1) throw Error("max_resample must be >= 1");
    }
};

struct TrajectorySample {
    std::vector<double> features;
    std::vector<double> commands;   // optimal u at the node
    double time_to_go = 0.0;        // t_f - t
};

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> std_dev;

    bool operator==(const FeatureStats&) const = default;
};

struct Dataset {
    EngagementConfig config;
    std::uint64_t seed = 0;
    int dim_in = 0;
    int dim_out = 0;
    // flat storage, one record after another
    std::vector<double> features;   // count * dim_in
    std::vector<double> commands;   // count * dim_out
    std::vector<double> time_to_go; // count
    FeatureStats feature_stats;     // over features
    FeatureStats target_stats;      // over commands

    std::size_t count() const { return time_to_go.size(); }

    TrajectorySample sample(std::size_t i) const {
        TrajectorySample s;
        s.features.assign(features.begin() + i * dim_in, features.begin() + (i + 1) * dim_in);
        s.commands.assign(commands.begin() + i * dim_out, commands.begin() + (i + 1) * dim_out);
        s.time_to_go = time_to_go[i];
        return s;
    }

    void push(const TrajectorySample& s) {
        features.insert(features.end(), s.features.begin(), s.features.end());
        commands.insert(commands.end(), s.commands.begin(), s.commands.end());
        time_to_go.push_back(s.time_to_go);
    }
};

struct GenerationReport {
    std::size_t n_requested = 0;
    std::size_t n_retained = 0;   // trajectories surviving the envelope filters
    std::size_t n_rejected = 0;   // trajectories discarded by the filters
    std::size_t n_failed = 0;     // draws that raised (scale/step failures)
    std::size_t n_samples = 0;
};

// ----------------------------------------------------------------
// Terminal manifold
// ----------------------------------------------------------------

/// Positive scale s with A*s + B*s^2 = kappa, so that multiplying all
/// terminal costates by s drives the Hamiltonian to zero.
/// A = sum(p_x cos th + p_y sin th), B = sum(p_theta^2) / (2(1-kappa)).
inline double solve_scale(double A, double B, double kappa) {
    check_kappa(kappa);
    if (B < 0.0) throw Error("solve_scale requires B >= 0");
    if (B == 0.0) {
        if (A <= 0.0) throw NoPositiveRoot("B = 0 and A <= 0 admits no positive scale");
        return kappa / A;
    }
    const double disc = std::sqrt(A * A + 4.0 * B * kappa);
    // branch on the sign of A to avoid cancellation in the positive root
    return (A >= 0.0) ? 2.0 * kappa / (A + disc) : (disc - A) / (2.0 * B);
}

/// Draws one terminal extended state on the intercept manifold. Costate
/// directions are uniform on the circle; the free p_theta values and the
/// heading of pursuer 1 are uniform over the spec ranges. Draws whose H=0
/// scale or terminal commands fall outside the envelope caps are redrawn.
inline ExtendedState sample_terminal(const TerminalSampleSpec& spec, const EngagementConfig& cfg,
                                     Rng& rng) {
    cfg.validate();
    spec.validate();
    const int n = cfg.n_pursuers;
    for (int attempt = 0; attempt < spec.max_resample; ++attempt) {
        ExtendedState e;
        e.states.resize(n);
        e.costates.resize(n);

        const double theta1 = rng.uniform(spec.theta1_min, spec.theta1_max);
        for (int i = 0; i < n; ++i) {
            e.states[i].x = 0.0;
            e.states[i].y = 0.0;
            e.states[i].theta = theta1 + i * cfg.delta;
        }

        double ptheta_sum = 0.0;
        for (int i = 0; i < n - 1; ++i) {
            e.costates[i].p_theta = rng.uniform(spec.ptheta_min, spec.ptheta_max);
            ptheta_sum += e.costates[i].p_theta;
        }
        e.costates[n - 1].p_theta = -ptheta_sum;

        double A = 0.0, B = 0.0;
        for (int i = 0; i < n; ++i) {
            const double dir = rng.angle();
            const double w = rng.uniform(spec.costate_weight_min, 1.0);
            e.costates[i].p_x = w * std::cos(dir);
            e.costates[i].p_y = w * std::sin(dir);
            A += e.costates[i].p_x * std::cos(e.states[i].theta) +
                 e.costates[i].p_y * std::sin(e.states[i].theta);
            B += e.costates[i].p_theta * e.costates[i].p_theta;
        }
        B /= 2.0 * (1.0 - cfg.kappa);

        double s;
        try {
            s = solve_scale(A, B, cfg.kappa);
        } catch (const NoPositiveRoot&) {
            continue;
        }
        if (s > spec.scale_max) continue;

        double running = 0.0;
        bool ok = true;
        for (int i = 0; i < n; ++i) {
            e.costates[i].p_x *= s;
            e.costates[i].p_y *= s;
            if (i < n - 1) {
                e.costates[i].p_theta *= s;
                running += e.costates[i].p_theta;
            }
            if (std::abs(optimal_control(i < n - 1 ? e.costates[i].p_theta
                                                   : s * e.costates[i].p_theta,
                                         cfg.kappa)) > spec.command_max)
                ok = false;
        }
        // re-impose the zero costate sum on the scaled values so the
        // transversality residual is exactly zero in float64
        e.costates[n - 1].p_theta = -running;
        if (!ok) continue;
        return e;
    }
    throw NoPositiveRoot("terminal sampling failed after max_resample draws");
}

/// Backward horizon: the extremal is integrated from t = tau down to t = 0,
/// so the returned (ascending) trajectory ends at the intercept.
inline Trajectory backward_propagate(const ExtendedState& terminal, double tau, double kappa,
                                     double tol = 1e-10) {
    if (!(tau > 0.0)) throw Error("backward_propagate requires tau > 0");
    return integrate(terminal, tau, 0.0, kappa, tol);
}

// ----------------------------------------------------------------
// Sample extraction
// ----------------------------------------------------------------

struct ExtractedNode {
    double t = 0.0;
    ExtendedState state;
};

/// Interpolated nodes at spacing intervals back from the terminal time,
/// excluding the terminal node itself.
inline std::vector<ExtractedNode> extract_nodes(const Trajectory& traj, double spacing) {
    if (!(spacing > 0.0)) throw Error("extract_nodes requires spacing > 0");
    std::vector<ExtractedNode> out;
    const double tf = traj.t_back();
    for (int k = 1;; ++k) {
        const double t = tf - k * spacing;
        if (t < traj.t_front()) break;
        out.push_back({t, sample_state(traj, t)});
    }
    return out;
}

/// Feature/command pairs at spacing intervals; nodes where any pursuer is
/// inside min_range are dropped (the mapping is one-to-many at the terminal).
inline std::vector<TrajectorySample> extract_samples(const Trajectory& traj,
                                                     const EngagementConfig& cfg, double spacing,
                                                     double min_range) {
    const TargetState target{};  // intercept manifold is anchored at the origin
    std::vector<TrajectorySample> out;
    for (const auto& node : extract_nodes(traj, spacing)) {
        bool keep = true;
        for (const auto& s : node.state.states) {
            if (std::hypot(target.x - s.x, target.y - s.y) < min_range) {
                keep = false;
                break;
            }
        }
        if (!keep) continue;
        TrajectorySample smp;
        smp.features = assemble_features(CombinedState{node.state.states}, target, cfg);
        smp.commands = node_commands(node.state, traj.kappa);
        smp.time_to_go = traj.t_back() - node.t;
        out.push_back(std::move(smp));
    }
    return out;
}

// ----------------------------------------------------------------
// Generation
// ----------------------------------------------------------------

namespace detail {

inline bool within_envelope(const Trajectory& traj, const TerminalSampleSpec& spec) {
    for (const auto& node : traj.nodes) {
        for (int i = 0; i < node.n(); ++i) {
            if (std::abs(optimal_control(node.costates[i].p_theta, traj.kappa)) >
                spec.command_max)
                return false;
            if (std::hypot(node.states[i].x, node.states[i].y) > spec.range_max) return false;
        }
    }
    return true;
}

inline FeatureStats compute_stats(const std::vector<double>& flat, int dim) {
    FeatureStats st;
    st.mean.assign(dim, 0.0);
    st.std_dev.assign(dim, 0.0);
    const std::size_t count = dim > 0 ? flat.size() / dim : 0;
    if (count == 0) return st;
    for (std::size_t r = 0; r < count; ++r)
        for (int j = 0; j < dim; ++j) st.mean[j] += flat[r * dim + j];
    for (int j = 0; j < dim; ++j) st.mean[j] /= static_cast<double>(count);
    for (std::size_t r = 0; r < count; ++r)
        for (int j = 0; j < dim; ++j) {
            const double d = flat[r * dim + j] - st.mean[j];
            st.std_dev[j] += d * d;
        }
    for (int j = 0; j < dim; ++j)
        st.std_dev[j] = std::sqrt(st.std_dev[j] / static_cast<double>(count));
    return st;
}

}  // namespace detail

/// One backward-propagated extremal, drawn from the trajectory's own rng
/// stream. Returns an empty optional-like flag through `rejected`.
inline Trajectory generate_trajectory(const TerminalSampleSpec& spec, const EngagementConfig& cfg,
                                      Rng& rng) {
    const ExtendedState terminal = sample_terminal(spec, cfg, rng);
    const double tau = rng.log_uniform(spec.duration_min, spec.duration_max);
    return backward_propagate(terminal, tau, cfg.kappa, spec.integ_tol);
}

/// n_traj independent terminal draws, backward propagation, extraction and a
/// deterministic merge. Each trajectory's rng stream is derived from
/// (rng_seed, trajectory index), so the result is identical for any thread
/// count. Throws if more than half of the draws fail outright.
inline Dataset generate_dataset(const TerminalSampleSpec& spec, const EngagementConfig& cfg,
                                std::size_t n_traj, GenerationReport* report = nullptr,
                                unsigned n_threads = 0) {
    cfg.validate();
    spec.validate();
    if (n_traj < 1) throw Error("generate_dataset requires n_traj >= 1");

    struct Slot {
        std::vector<TrajectorySample> samples;
        bool rejected = false;
        bool failed = false;
    };
    std::vector<Slot> slots(n_traj);

    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_traj));

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= n_traj) return;
            Rng rng = Rng::stream(spec.rng_seed, idx);
            try {
                Trajectory traj = generate_trajectory(spec, cfg, rng);
                if (!detail::within_envelope(traj, spec)) {
                    slots[idx].rejected = true;
                    continue;
                }
                slots[idx].samples =
                    extract_samples(traj, cfg, spec.sample_spacing, spec.min_range);
            } catch (const Error&) {
                slots[idx].failed = true;
            }
        }
    };

    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    Dataset d;
    d.config = cfg;
    d.seed = spec.rng_seed;
    d.dim_in = cfg.feature_dim();
    d.dim_out = cfg.n_pursuers;

    GenerationReport rep;
    rep.n_requested = n_traj;
    for (const auto& slot : slots) {
        if (slot.failed) {
            ++rep.n_failed;
        } else if (slot.rejected) {
            ++rep.n_rejected;
        } else {
            ++rep.n_retained;
            for (const auto& s : slot.samples) d.push(s);
        }
    }
    rep.n_samples = d.count();
    if (report) *report = rep;

    if (2 * rep.n_failed > n_traj)
        throw Error("more than half of the terminal draws failed");

    d.feature_stats = detail::compute_stats(d.features, d.dim_in);
    d.target_stats = detail::compute_stats(d.commands, d.dim_out);
    return d;
}

// ----------------------------------------------------------------
// File format: magic CGD1, text header, little-endian float64 payload
// ----------------------------------------------------------------

inline void write_dataset(const Dataset& d, std::ostream& os) {
    os << "CGD1\n";
    HeaderMap h;
    h.emplace_back("n", std::to_string(d.config.n_pursuers));
    h.emplace_back("kappa", format_double(d.config.kappa));
    h.emplace_back("delta", format_double(d.config.delta));
    h.emplace_back("feature_mode", to_string(d.config.feature_mode));
    h.emplace_back("dim_in", std::to_string(d.dim_in));
    h.emplace_back("dim_out", std::to_string(d.dim_out));
    h.emplace_back("count", std::to_string(d.count()));
    h.emplace_back("seed", std::to_string(d.seed));
    h.emplace_back("speed", format_double(d.config.speed));
    h.emplace_back("switch_radius", format_double(d.config.switch_radius));
    h.emplace_back("pn_gain", format_double(d.config.pn_gain));
    write_header(os, h);
    for (std::size_t i = 0; i < d.count(); ++i) {
        for (int j = 0; j < d.dim_in; ++j) write_f64_le(os, d.features[i * d.dim_in + j]);
        for (int j = 0; j < d.dim_out; ++j) write_f64_le(os, d.commands[i * d.dim_out + j]);
        write_f64_le(os, d.time_to_go[i]);
    }
    if (!os) throw IoError("dataset write failed");
}

inline void write_dataset(const Dataset& d, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_dataset(d, os);
}

inline Dataset read_dataset(std::istream& is) {
    std::string magic;
    if (!std::getline(is, magic) || magic != "CGD1") throw FormatError("bad dataset magic");
    const HeaderMap h = read_header(is);

    Dataset d;
    d.config.n_pursuers = std::stoi(header_get(h, "n"));
    d.config.kappa = parse_double(header_get(h, "kappa"));
    d.config.delta = parse_double(header_get(h, "delta"));
    d.config.feature_mode = feature_mode_from_string(header_get(h, "feature_mode"));
    d.config.speed = parse_double(header_get(h, "speed"));
    d.config.switch_radius = parse_double(header_get(h, "switch_radius"));
    d.config.pn_gain = parse_double(header_get(h, "pn_gain"));
    d.dim_in = std::stoi(header_get(h, "dim_in"));
    d.dim_out = std::stoi(header_get(h, "dim_out"));
    d.seed = std::stoull(header_get(h, "seed"));
    const std::size_t count = std::stoull(header_get(h, "count"));

    if (d.dim_in != d.config.feature_dim() || d.dim_out != d.config.n_pursuers)
        throw FormatError("header dimensions inconsistent with n/feature_mode");

    d.features.resize(count * d.dim_in);
    d.commands.resize(count * d.dim_out);
    d.time_to_go.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (int j = 0; j < d.dim_in; ++j) d.features[i * d.dim_in + j] = read_f64_le(is);
        for (int j = 0; j < d.dim_out; ++j) d.commands[i * d.dim_out + j] = read_f64_le(is);
        d.time_to_go[i] = read_f64_le(is);
    }
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after dataset payload");

    d.feature_stats = detail::compute_stats(d.features, d.dim_in);
    d.target_stats = detail::compute_stats(d.commands, d.dim_out);
    return d;
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    return read_dataset(is);
}

/// Inspection export: one row per sample.
inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
    for (int j = 0; j < d.dim_in; ++j) os << 'f' << j << ',';
    for (int j = 0; j < d.dim_out; ++j) os << 'u' << j + 1 << ',';
    os << "time_to_go\n";
    for (std::size_t i = 0; i < d.count(); ++i) {
        for (int j = 0; j < d.dim_in; ++j) os << format_double(d.features[i * d.dim_in + j]) << ',';
        for (int j = 0; j < d.dim_out; ++j)
            os << format_double(d.commands[i * d.dim_out + j]) << ',';
        os << format_double(d.time_to_go[i]) << '\n';
    }
}

inline bool operator==(const Dataset& a, const Dataset& b) {
    return a.config.n_pursuers == b.config.n_pursuers && a.config.kappa == b.config.kappa &&
           a.config.delta == b.config.delta && a.config.feature_mode == b.config.feature_mode &&
           a.config.speed == b.config.speed && a.config.switch_radius == b.config.switch_radius &&
           a.config.pn_gain == b.config.pn_gain && a.seed == b.seed && a.dim_in == b.dim_in &&
           a.dim_out == b.dim_out && a.features == b.features && a.commands == b.commands &&
           a.time_to_go == b.time_to_go && a.feature_stats == b.feature_stats &&
           a.target_stats == b.target_stats;
}

}  // namespace coopguide
