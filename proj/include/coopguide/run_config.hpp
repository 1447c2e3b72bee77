#pragma once

// Resolved run configuration: one struct feeding every tool subcommand,
// loadable from a line-oriented key=value file with dotted sections and
// serializable back out so each run can carry a reproduction sidecar.
// Angles and lengths cross this boundary in degrees / meters.

#include <fstream>
#include <sstream>
#include <string>

#include "coopguide/common.hpp"
#include "coopguide/dataset.hpp"
#include "coopguide/engagement.hpp"
#include "coopguide/mlp.hpp"
#include "coopguide/shooting.hpp"

namespace coopguide {

struct SimOptions {
    double dt = 1e-3;
    double time_cap = 60.0;
    double command_clamp = 25.0;

    void validate() const {
        if (!(dt > 0.0)) throw Error("sim.dt must be positive");
        if (!(time_cap > 0.0)) throw Error("sim.time_cap must be positive");
        if (!(command_clamp > 0.0)) throw Error("sim.command_clamp must be positive");
    }
};

struct RunConfig {
    std::uint64_t seed = 0;
    EngagementConfig engagement;
    TerminalSampleSpec sampling;
    TrainConfig training;
    ShootingConfig shooting;
    SimOptions sim;

    /// Derive the per-stage rng seeds from the top-level seed.
    void derive_seeds() {
        sampling.rng_seed = splitmix64(seed ^ 0x64617461ULL);
        training.rng_seed = splitmix64(seed ^ 0x747261696eULL);
        shooting.rng_seed = splitmix64(seed ^ 0x73686f6f74ULL);
    }

    void validate() const {
        engagement.validate();
        training.validate();
        sim.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Apply one dotted key. Unknown keys are rejected rather than ignored.
inline void set_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
    auto d = [&] { return parse_double(value); };
    auto i = [&] { return std::stoi(value); };
    auto u64 = [&] { return std::stoull(value); };

    if (key == "seed") rc.seed = u64();
    else if (key == "engagement.n_pursuers") rc.engagement.n_pursuers = i();
    else if (key == "engagement.kappa") rc.engagement.kappa = d();
    else if (key == "engagement.delta_deg") rc.engagement.delta = deg_to_rad(d());
    else if (key == "engagement.speed") rc.engagement.speed = d();
    else if (key == "engagement.switch_radius_m") rc.engagement.switch_radius = d();
    else if (key == "engagement.pn_gain") rc.engagement.pn_gain = d();
    else if (key == "engagement.feature_mode")
        rc.engagement.feature_mode = feature_mode_from_string(value);
    else if (key == "sampling.theta1_min_deg") rc.sampling.theta1_min = deg_to_rad(d());
    else if (key == "sampling.theta1_max_deg") rc.sampling.theta1_max = deg_to_rad(d());
    else if (key == "sampling.ptheta_min") rc.sampling.ptheta_min = d();
    else if (key == "sampling.ptheta_max") rc.sampling.ptheta_max = d();
    else if (key == "sampling.costate_weight_min") rc.sampling.costate_weight_min = d();
    else if (key == "sampling.duration_min") rc.sampling.duration_min = d();
    else if (key == "sampling.duration_max") rc.sampling.duration_max = d();
    else if (key == "sampling.scale_max") rc.sampling.scale_max = d();
    else if (key == "sampling.command_max") rc.sampling.command_max = d();
    else if (key == "sampling.range_max") rc.sampling.range_max = d();
    else if (key == "sampling.sample_spacing") rc.sampling.sample_spacing = d();
    else if (key == "sampling.min_range") rc.sampling.min_range = d();
    else if (key == "sampling.integ_tol") rc.sampling.integ_tol = d();
    else if (key == "sampling.max_resample") rc.sampling.max_resample = i();
    else if (key == "training.learning_rate") rc.training.learning_rate = d();
    else if (key == "training.batch_size") rc.training.batch_size = i();
    else if (key == "training.max_epochs") rc.training.max_epochs = i();
    else if (key == "training.validation_fraction") rc.training.validation_fraction = d();
    else if (key == "training.patience") rc.training.patience = i();
    else if (key == "training.lr_decay") rc.training.lr_decay = d();
    else if (key == "training.lr_patience") rc.training.lr_patience = i();
    else if (key == "training.lr_min") rc.training.lr_min = d();
    else if (key == "shooting.multistart") rc.shooting.multistart = i();
    else if (key == "shooting.integ_tol") rc.shooting.integ_tol = d();
    else if (key == "shooting.fd_step") rc.shooting.fd_step = d();
    else if (key == "shooting.residual_tol") rc.shooting.residual_tol = d();
    else if (key == "shooting.max_iter") rc.shooting.max_iter = i();
    else if (key == "shooting.tf_min") rc.shooting.tf_min = d();
    else if (key == "shooting.tf_max") rc.shooting.tf_max = d();
    else if (key == "sim.dt") rc.sim.dt = d();
    else if (key == "sim.time_cap") rc.sim.time_cap = d();
    else if (key == "sim.command_clamp") rc.sim.command_clamp = d();
    else throw FormatError("unknown config key: " + key);
}

/// key=value lines; '#' starts a comment; blank lines ignored.
inline void load_run_config(std::istream& is, RunConfig& rc) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
        try {
            set_config_key(rc, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
        } catch (const std::exception& ex) {
            throw FormatError("config line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
}

inline void load_run_config(const std::string& path, RunConfig& rc) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    load_run_config(is, rc);
}

/// Full resolved configuration in the same key=value syntax it parses.
inline void write_run_config(std::ostream& os, const RunConfig& rc) {
    os << "seed=" << rc.seed << '\n';
    os << "engagement.n_pursuers=" << rc.engagement.n_pursuers << '\n';
    os << "engagement.kappa=" << format_double(rc.engagement.kappa) << '\n';
    os << "engagement.delta_deg=" << format_double(rad_to_deg(rc.engagement.delta)) << '\n';
    os << "engagement.speed=" << format_double(rc.engagement.speed) << '\n';
    os << "engagement.switch_radius_m=" << format_double(rc.engagement.switch_radius) << '\n';
    os << "engagement.pn_gain=" << format_double(rc.engagement.pn_gain) << '\n';
    os << "engagement.feature_mode=" << to_string(rc.engagement.feature_mode) << '\n';
    os << "sampling.theta1_min_deg=" << format_double(rad_to_deg(rc.sampling.theta1_min)) << '\n';
    os << "sampling.theta1_max_deg=" << format_double(rad_to_deg(rc.sampling.theta1_max)) << '\n';
    os << "sampling.ptheta_min=" << format_double(rc.sampling.ptheta_min) << '\n';
    os << "sampling.ptheta_max=" << format_double(rc.sampling.ptheta_max) << '\n';
    os << "sampling.costate_weight_min=" << format_double(rc.sampling.costate_weight_min) << '\n';
    os << "sampling.duration_min=" << format_double(rc.sampling.duration_min) << '\n';
    os << "sampling.duration_max=" << format_double(rc.sampling.duration_max) << '\n';
    os << "sampling.scale_max=" << format_double(rc.sampling.scale_max) << '\n';
    os << "sampling.command_max=" << format_double(rc.sampling.command_max) << '\n';
    os << "sampling.range_max=" << format_double(rc.sampling.range_max) << '\n';
    os << "sampling.sample_spacing=" << format_double(rc.sampling.sample_spacing) << '\n';
    os << "sampling.min_range=" << format_double(rc.sampling.min_range) << '\n';
    os << "sampling.integ_tol=" << format_double(rc.sampling.integ_tol) << '\n';
    os << "sampling.max_resample=" << rc.sampling.max_resample << '\n';
    os << "training.learning_rate=" << format_double(rc.training.learning_rate) << '\n';
    os << "training.batch_size=" << rc.training.batch_size << '\n';
    os << "training.max_epochs=" << rc.training.max_epochs << '\n';
    os << "training.validation_fraction=" << format_double(rc.training.validation_fraction)
       << '\n';
    os << "training.patience=" << rc.training.patience << '\n';
    os << "training.lr_decay=" << format_double(rc.training.lr_decay) << '\n';
    os << "training.lr_patience=" << rc.training.lr_patience << '\n';
    os << "training.lr_min=" << format_double(rc.training.lr_min) << '\n';
    os << "shooting.multistart=" << rc.shooting.multistart << '\n';
    os << "shooting.integ_tol=" << format_double(rc.shooting.integ_tol) << '\n';
    os << "shooting.fd_step=" << format_double(rc.shooting.fd_step) << '\n';
    os << "shooting.residual_tol=" << format_double(rc.shooting.residual_tol) << '\n';
    os << "shooting.max_iter=" << rc.shooting.max_iter << '\n';
    os << "shooting.tf_min=" << format_double(rc.shooting.tf_min) << '\n';
    os << "shooting.tf_max=" << format_double(rc.shooting.tf_max) << '\n';
    os << "sim.dt=" << format_double(rc.sim.dt) << '\n';
    os << "sim.time_cap=" << format_double(rc.sim.time_cap) << '\n';
    os << "sim.command_clamp=" << format_double(rc.sim.command_clamp) << '\n';
}

/// Sidecar <output>.config: the resolved configuration plus any
/// subcommand-specific lines needed to replay the run.
inline void write_sidecar(const std::string& output_path, const RunConfig& rc,
                          const HeaderMap& extra = {}) {
    std::ofstream os(output_path + ".config", std::ios::binary);
    if (!os) throw IoError("cannot write sidecar for: " + output_path);
    write_run_config(os, rc);
    for (const auto& [k, v] : extra) os << "# run." << k << '=' << v << '\n';
}

}  // namespace coopguide
