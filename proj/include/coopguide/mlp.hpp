#pragma once

// Small dense feedforward network mapping engagement features to optimal
// turn-rate commands: tanh hidden layers, linear output, per-component
// input/target normalization, reverse-mode gradients and Adam training.
// Everything runs in 64-bit floats.

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "coopguide/common.hpp"
#include "coopguide/dataset.hpp"

namespace coopguide {

// ----------------------------------------------------------------
// Model
// ----------------------------------------------------------------

struct MlpModel {
    std::vector<int> layer_dims;                 // [dim_in, hidden..., dim_out]
    std::vector<std::vector<double>> weights;    // per layer, row-major (out x in)
    std::vector<std::vector<double>> biases;     // per layer
    std::string activation = "tanh";
    FeatureStats feature_stats;                  // dim_in components
    FeatureStats target_stats;                   // dim_out components
    HeaderMap meta;                              // free-form provenance (training setup)

    int dim_in() const { return layer_dims.front(); }
    int dim_out() const { return layer_dims.back(); }
    std::size_t n_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t c = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) c += weights[l].size() + biases[l].size();
        return c;
    }

    bool operator==(const MlpModel&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 256;
    int max_epochs = 500;
    double validation_fraction = 0.1;
    int patience = 20;
    // halve the step size when validation stalls; plain Adam at a fixed
    // rate plateaus well above the achievable loss on this problem
    double lr_decay = 0.5;
    int lr_patience = 25;
    double lr_min = 1e-6;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
        if (batch_size < 1) throw Error("batch_size must be >= 1");
        if (max_epochs < 1) throw Error("max_epochs must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw Error("validation_fraction must lie in (0, 1)");
        if (patience < 1) throw Error("patience must be >= 1");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("lr_decay must lie in (0, 1]");
        if (lr_patience < 1) throw Error("lr_patience must be >= 1");
        if (!(lr_min > 0.0)) throw Error("lr_min must be positive");
    }
};

struct EpochStats {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

inline void check_stats(const FeatureStats& st, int dim, const char* what) {
    if (static_cast<int>(st.mean.size()) != dim || static_cast<int>(st.std_dev.size()) != dim)
        throw DimensionMismatch(std::string(what) + " stats size mismatch");
    for (double s : st.std_dev)
        if (!(s > 0.0)) throw Error(std::string(what) + " stats require std > 0");
}

inline FeatureStats sanitize_stats(FeatureStats st) {
    for (double& s : st.std_dev)
        if (!(s > 0.0)) s = 1.0;
    return st;
}

/// Zero-mean uniform weights scaled by 1/sqrt(fan_in); zero biases; unit
/// normalization stats until training attaches dataset statistics.
inline MlpModel mlp_init(const std::vector<int>& layer_dims, Rng& rng) {
    if (layer_dims.size() < 2) throw BadArchitecture("need at least input and output layers");
    for (int d : layer_dims)
        if (d < 1) throw BadArchitecture("layer dims must be >= 1");

    MlpModel m;
    m.layer_dims = layer_dims;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const int fan_in = layer_dims[l];
        const int fan_out = layer_dims[l + 1];
        const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> w(static_cast<std::size_t>(fan_out) * fan_in);
        for (double& v : w) v = rng.uniform(-lim, lim);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(fan_out, 0.0);
    }
    m.feature_stats.mean.assign(layer_dims.front(), 0.0);
    m.feature_stats.std_dev.assign(layer_dims.front(), 1.0);
    m.target_stats.mean.assign(layer_dims.back(), 0.0);
    m.target_stats.std_dev.assign(layer_dims.back(), 1.0);
    return m;
}

// ----------------------------------------------------------------
// Forward / backward
// ----------------------------------------------------------------

namespace detail {

// activations[0] is the normalized input; activations[l+1] the output of
// layer l (post-tanh for hidden layers, raw affine for the last)
struct MlpWorkspace {
    std::vector<std::vector<double>> activations;
    std::vector<std::vector<double>> delta;

    void resize(const MlpModel& m) {
        activations.resize(m.layer_dims.size());
        delta.resize(m.layer_dims.size());
        for (std::size_t l = 0; l < m.layer_dims.size(); ++l) {
            activations[l].resize(m.layer_dims[l]);
            delta[l].resize(m.layer_dims[l]);
        }
    }
};

inline void forward_normalized(const MlpModel& m, MlpWorkspace& ws) {
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        const int in = m.layer_dims[l];
        const int out = m.layer_dims[l + 1];
        const double* w = m.weights[l].data();
        const double* a = ws.activations[l].data();
        double* z = ws.activations[l + 1].data();
        for (int r = 0; r < out; ++r) {
            double acc = m.biases[l][r];
            const double* row = w + static_cast<std::size_t>(r) * in;
            for (int c = 0; c < in; ++c) acc += row[c] * a[c];
            z[r] = (l + 1 < m.n_layers()) ? std::tanh(acc) : acc;
        }
    }
}

}  // namespace detail

/// Pure function: normalize, run the layers, de-normalize.
inline std::vector<double> forward(const MlpModel& m, const std::vector<double>& features) {
    if (static_cast<int>(features.size()) != m.dim_in())
        throw DimensionMismatch("forward: feature dimension mismatch");
    detail::MlpWorkspace ws;
    ws.resize(m);
    for (int j = 0; j < m.dim_in(); ++j)
        ws.activations[0][j] = (features[j] - m.feature_stats.mean[j]) / m.feature_stats.std_dev[j];
    detail::forward_normalized(m, ws);
    std::vector<double> out(m.dim_out());
    for (int j = 0; j < m.dim_out(); ++j)
        out[j] = m.target_stats.mean[j] + m.target_stats.std_dev[j] * ws.activations.back()[j];
    return out;
}

struct Gradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    void resize_like(const MlpModel& m) {
        weights.resize(m.n_layers());
        biases.resize(m.n_layers());
        for (std::size_t l = 0; l < m.n_layers(); ++l) {
            weights[l].assign(m.weights[l].size(), 0.0);
            biases[l].assign(m.biases[l].size(), 0.0);
        }
    }
};

/// Mean squared error over normalized targets, averaged over batch rows and
/// output components, with gradients of the same shapes as the parameters.
/// X is batch*dim_in raw features, Y batch*dim_out raw commands.
inline double loss_and_gradient(const MlpModel& m, const double* X, const double* Y,
                                std::size_t batch, Gradients& g) {
    if (batch == 0) throw DimensionMismatch("loss_and_gradient: empty batch");
    check_stats(m.feature_stats, m.dim_in(), "feature");
    check_stats(m.target_stats, m.dim_out(), "target");
    g.resize_like(m);

    detail::MlpWorkspace ws;
    ws.resize(m);
    const std::size_t L = m.n_layers();
    const double inv = 1.0 / (static_cast<double>(batch) * m.dim_out());
    double loss = 0.0;

    for (std::size_t r = 0; r < batch; ++r) {
        const double* x = X + r * m.dim_in();
        const double* y = Y + r * m.dim_out();
        for (int j = 0; j < m.dim_in(); ++j)
            ws.activations[0][j] = (x[j] - m.feature_stats.mean[j]) / m.feature_stats.std_dev[j];
        detail::forward_normalized(m, ws);

        for (int j = 0; j < m.dim_out(); ++j) {
            const double t = (y[j] - m.target_stats.mean[j]) / m.target_stats.std_dev[j];
            const double e = ws.activations[L][j] - t;
            loss += e * e * inv;
            ws.delta[L][j] = 2.0 * e * inv;
        }

        for (std::size_t l = L; l-- > 0;) {
            const int in = m.layer_dims[l];
            const int out = m.layer_dims[l + 1];
            const double* a = ws.activations[l].data();
            double* d_out = ws.delta[l + 1].data();
            double* gw = g.weights[l].data();
            double* gb = g.biases[l].data();
            // delta holds dL/dz of this layer's affine output
            for (int row = 0; row < out; ++row) {
                const double d = d_out[row];
                gb[row] += d;
                double* grow = gw + static_cast<std::size_t>(row) * in;
                for (int c = 0; c < in; ++c) grow[c] += d * a[c];
            }
            if (l == 0) continue;
            double* d_in = ws.delta[l].data();
            const double* w = m.weights[l].data();
            for (int c = 0; c < in; ++c) d_in[c] = 0.0;
            for (int row = 0; row < out; ++row) {
                const double d = d_out[row];
                const double* wrow = w + static_cast<std::size_t>(row) * in;
                for (int c = 0; c < in; ++c) d_in[c] += d * wrow[c];
            }
            // through the tanh of the producing layer: a = tanh(z)
            for (int c = 0; c < in; ++c) d_in[c] *= 1.0 - a[c] * a[c];
        }
    }
    return loss;
}

inline std::pair<double, Gradients> loss_and_gradient(const MlpModel& m,
                                                      const std::vector<TrajectorySample>& batch) {
    if (batch.empty()) throw DimensionMismatch("loss_and_gradient: empty batch");
    std::vector<double> X, Y;
    X.reserve(batch.size() * m.dim_in());
    Y.reserve(batch.size() * m.dim_out());
    for (const auto& s : batch) {
        if (static_cast<int>(s.features.size()) != m.dim_in() ||
            static_cast<int>(s.commands.size()) != m.dim_out())
            throw DimensionMismatch("loss_and_gradient: sample dimension mismatch");
        X.insert(X.end(), s.features.begin(), s.features.end());
        Y.insert(Y.end(), s.commands.begin(), s.commands.end());
    }
    Gradients g;
    const double mse = loss_and_gradient(m, X.data(), Y.data(), batch.size(), g);
    return {mse, std::move(g)};
}

/// Per-component MSE over normalized targets: entry j is the mean squared
/// error of output j in units of its dataset variance, so sqrt(entry) is the
/// RMSE of that command as a fraction of its standard deviation.
inline std::vector<double> evaluate_mse_per_component(const MlpModel& m, const double* X,
                                                      const double* Y, std::size_t count) {
    if (count == 0) throw DimensionMismatch("evaluate_mse_per_component: empty set");
    detail::MlpWorkspace ws;
    ws.resize(m);
    const std::size_t L = m.n_layers();
    std::vector<double> loss(m.dim_out(), 0.0);
    for (std::size_t r = 0; r < count; ++r) {
        const double* x = X + r * m.dim_in();
        const double* y = Y + r * m.dim_out();
        for (int j = 0; j < m.dim_in(); ++j)
            ws.activations[0][j] = (x[j] - m.feature_stats.mean[j]) / m.feature_stats.std_dev[j];
        detail::forward_normalized(m, ws);
        for (int j = 0; j < m.dim_out(); ++j) {
            const double t = (y[j] - m.target_stats.mean[j]) / m.target_stats.std_dev[j];
            const double e = ws.activations[L][j] - t;
            loss[j] += e * e;
        }
    }
    for (double& v : loss) v /= static_cast<double>(count);
    return loss;
}

/// MSE over normalized targets without gradients.
inline double evaluate_mse(const MlpModel& m, const double* X, const double* Y,
                           std::size_t count) {
    if (count == 0) throw DimensionMismatch("evaluate_mse: empty set");
    detail::MlpWorkspace ws;
    ws.resize(m);
    const std::size_t L = m.n_layers();
    double loss = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
        const double* x = X + r * m.dim_in();
        const double* y = Y + r * m.dim_out();
        for (int j = 0; j < m.dim_in(); ++j)
            ws.activations[0][j] = (x[j] - m.feature_stats.mean[j]) / m.feature_stats.std_dev[j];
        detail::forward_normalized(m, ws);
        for (int j = 0; j < m.dim_out(); ++j) {
            const double t = (y[j] - m.target_stats.mean[j]) / m.target_stats.std_dev[j];
            const double e = ws.activations[L][j] - t;
            loss += e * e;
        }
    }
    return loss / (static_cast<double>(count) * m.dim_out());
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_double(v[i]);
    }
    return out;
}

inline std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_double(tok));
    return out;
}

}  // namespace detail

// ----------------------------------------------------------------
// Training
// ----------------------------------------------------------------

/// Mini-batch Adam on the dataset with a deterministic validation split.
/// Returns the parameters with the lowest validation mse; stops early after
/// `patience` epochs without improvement.
inline MlpModel train(MlpModel m, const Dataset& d, const TrainConfig& tc,
                      std::vector<EpochStats>* history = nullptr) {
    tc.validate();
    if (d.count() < 2) throw Error("train: dataset needs at least 2 samples");
    if (m.dim_in() != d.dim_in || m.dim_out() != d.dim_out)
        throw DimensionMismatch("train: model/dataset dimension mismatch");

    m.feature_stats = sanitize_stats(d.feature_stats);
    m.target_stats = sanitize_stats(d.target_stats);

    Rng rng = Rng::stream(tc.rng_seed, 0x7261696eULL);
    std::vector<std::size_t> perm(d.count());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);

    std::size_t n_val = static_cast<std::size_t>(tc.validation_fraction * d.count());
    n_val = std::clamp<std::size_t>(n_val, 1, d.count() - 1);
    const std::size_t n_train = d.count() - n_val;

    auto gather = [&](const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                      std::vector<double>& X, std::vector<double>& Y) {
        X.resize((hi - lo) * d.dim_in);
        Y.resize((hi - lo) * d.dim_out);
        for (std::size_t k = lo; k < hi; ++k) {
            const std::size_t i = idx[k];
            std::copy_n(d.features.begin() + i * d.dim_in, d.dim_in,
                        X.begin() + (k - lo) * d.dim_in);
            std::copy_n(d.commands.begin() + i * d.dim_out, d.dim_out,
                        Y.begin() + (k - lo) * d.dim_out);
        }
    };

    std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + n_val);
    std::vector<std::size_t> train_idx(perm.begin() + n_val, perm.end());
    std::vector<double> val_X, val_Y;
    gather(val_idx, 0, n_val, val_X, val_Y);

    // Adam state
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Gradients g, adam_m, adam_v;
    adam_m.resize_like(m);
    adam_v.resize_like(m);
    long step = 0;

    MlpModel best = m;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;
    int lr_stale = 0;
    double lr = tc.learning_rate;
    std::vector<double> X, Y;

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        rng.shuffle(train_idx);
        double train_sse = 0.0;
        for (std::size_t lo = 0; lo < n_train; lo += tc.batch_size) {
            const std::size_t hi = std::min(n_train, lo + tc.batch_size);
            gather(train_idx, lo, hi, X, Y);
            const double mse = loss_and_gradient(m, X.data(), Y.data(), hi - lo, g);
            train_sse += mse * static_cast<double>(hi - lo);

            ++step;
            const double corr =
                lr * std::sqrt(1.0 - std::pow(beta2, step)) /
                (1.0 - std::pow(beta1, step));
            for (std::size_t l = 0; l < m.n_layers(); ++l) {
                auto update = [&](std::vector<double>& p, std::vector<double>& gm,
                                  std::vector<double>& gv, const std::vector<double>& gr) {
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        gm[j] = beta1 * gm[j] + (1.0 - beta1) * gr[j];
                        gv[j] = beta2 * gv[j] + (1.0 - beta2) * gr[j] * gr[j];
                        p[j] -= corr * gm[j] / (std::sqrt(gv[j]) + eps);
                    }
                };
                update(m.weights[l], adam_m.weights[l], adam_v.weights[l], g.weights[l]);
                update(m.biases[l], adam_m.biases[l], adam_v.biases[l], g.biases[l]);
            }
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_mse = train_sse / static_cast<double>(n_train);
        st.val_mse = evaluate_mse(m, val_X.data(), val_Y.data(), n_val);
        if (history) history->push_back(st);

        if (st.val_mse < best_val) {
            best_val = st.val_mse;
            best = m;
            stale = 0;
            lr_stale = 0;
        } else {
            if (++stale >= tc.patience) break;
            if (++lr_stale >= tc.lr_patience && lr * tc.lr_decay >= tc.lr_min) {
                lr *= tc.lr_decay;
                lr_stale = 0;
            }
        }
    }

    best.meta.clear();
    best.meta.emplace_back("trained_on", std::to_string(d.count()) + " samples");
    best.meta.emplace_back("learning_rate", format_double(tc.learning_rate));
    best.meta.emplace_back("batch_size", std::to_string(tc.batch_size));
    best.meta.emplace_back("max_epochs", std::to_string(tc.max_epochs));
    best.meta.emplace_back("validation_fraction", format_double(tc.validation_fraction));
    best.meta.emplace_back("patience", std::to_string(tc.patience));
    best.meta.emplace_back("lr_decay", format_double(tc.lr_decay));
    best.meta.emplace_back("lr_patience", std::to_string(tc.lr_patience));
    best.meta.emplace_back("lr_min", format_double(tc.lr_min));
    best.meta.emplace_back("train_seed", std::to_string(tc.rng_seed));
    best.meta.emplace_back("best_val_mse", format_double(best_val));
    best.meta.emplace_back(
        "val_mse_components",
        detail::join_doubles(evaluate_mse_per_component(best, val_X.data(), val_Y.data(), n_val)));
    return best;
}

inline void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history) {
    os << "epoch,train_mse,val_mse\n";
    for (const auto& st : history)
        os << st.epoch << ',' << format_double(st.train_mse) << ',' << format_double(st.val_mse)
           << '\n';
}

// ----------------------------------------------------------------
// Serialization: magic CGM1, text header, little-endian float64 payload
// ----------------------------------------------------------------

inline void save_model(const MlpModel& m, std::ostream& os) {
    os << "CGM1\n";
    HeaderMap h;
    std::string dims;
    for (std::size_t i = 0; i < m.layer_dims.size(); ++i) {
        if (i) dims += ',';
        dims += std::to_string(m.layer_dims[i]);
    }
    h.emplace_back("dims", dims);
    h.emplace_back("activation", m.activation);
    h.emplace_back("feature_mean", detail::join_doubles(m.feature_stats.mean));
    h.emplace_back("feature_std", detail::join_doubles(m.feature_stats.std_dev));
    h.emplace_back("target_mean", detail::join_doubles(m.target_stats.mean));
    h.emplace_back("target_std", detail::join_doubles(m.target_stats.std_dev));
    for (const auto& [k, v] : m.meta) h.emplace_back("meta." + k, v);
    write_header(os, h);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        for (double v : m.weights[l]) write_f64_le(os, v);
        for (double v : m.biases[l]) write_f64_le(os, v);
    }
    if (!os) throw IoError("model write failed");
}

inline void save_model(const MlpModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    save_model(m, os);
}

inline MlpModel load_model(std::istream& is) {
    std::string magic;
    if (!std::getline(is, magic) || magic != "CGM1") throw FormatError("bad model magic");
    const HeaderMap h = read_header(is);

    MlpModel m;
    {
        std::stringstream ss(header_get(h, "dims"));
        std::string tok;
        while (std::getline(ss, tok, ',')) m.layer_dims.push_back(std::stoi(tok));
    }
    if (m.layer_dims.size() < 2) throw FormatError("model header: too few layers");
    for (int d : m.layer_dims)
        if (d < 1) throw FormatError("model header: nonpositive layer dim");
    m.activation = header_get(h, "activation");
    if (m.activation != "tanh") throw FormatError("unsupported activation: " + m.activation);
    m.feature_stats.mean = detail::split_doubles(header_get(h, "feature_mean"));
    m.feature_stats.std_dev = detail::split_doubles(header_get(h, "feature_std"));
    m.target_stats.mean = detail::split_doubles(header_get(h, "target_mean"));
    m.target_stats.std_dev = detail::split_doubles(header_get(h, "target_std"));
    check_stats(m.feature_stats, m.layer_dims.front(), "feature");
    check_stats(m.target_stats, m.layer_dims.back(), "target");
    for (const auto& [k, v] : h)
        if (k.rfind("meta.", 0) == 0) m.meta.emplace_back(k.substr(5), v);

    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        const std::size_t nw =
            static_cast<std::size_t>(m.layer_dims[l + 1]) * m.layer_dims[l];
        std::vector<double> w(nw);
        for (double& v : w) v = read_f64_le(is);
        std::vector<double> b(m.layer_dims[l + 1]);
        for (double& v : b) v = read_f64_le(is);
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after model payload");
    return m;
}

inline MlpModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    return load_model(is);
}

}  // namespace coopguide
