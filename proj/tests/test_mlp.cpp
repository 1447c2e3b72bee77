#include <catch2/catch_amalgamated.hpp>

#include "coopguide/mlp.hpp"

#include <cmath>
#include <sstream>
#include <vector>

using namespace coopguide;

namespace {

// Gradient agreement: |analytic - central difference| within this relative
// tolerance (absolute floor guards components with near-zero gradient).
constexpr double kGradRelTol = 1e-6;
constexpr double kGradAbsFloor = 1e-9;

MlpModel make_model(const std::vector<int>& dims, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0);
    return mlp_init(dims, rng);
}

// Small synthetic batch with a smooth feature-to-command relation.
void make_batch(int dim_in, int dim_out, std::size_t n, std::uint64_t seed,
                std::vector<double>& X, std::vector<double>& Y) {
    Rng rng = Rng::stream(seed, 1);
    X.resize(n * dim_in);
    Y.resize(n * dim_out);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int j = 0; j < dim_in; ++j) {
            X[r * dim_in + j] = rng.uniform(-2.0, 2.0);
            acc += X[r * dim_in + j];
        }
        for (int j = 0; j < dim_out; ++j)
            Y[r * dim_out + j] = std::sin(acc + j) * 0.5;
    }
}

}  // namespace

// ====================================================================
// Architecture bookkeeping
// ====================================================================

TEST_CASE("parameter count matches the layer dims", "[mlp][arch]") {
    // 3x20 tanh network over the 7-feature augmented input, 2 commands out
    CHECK(make_model({7, 20, 20, 20, 2}, 1).parameter_count() == 1042);
    // same network over the 6-feature per-pursuer-only input
    CHECK(make_model({6, 20, 20, 20, 2}, 1).parameter_count() == 1022);
    CHECK(make_model({3, 2}, 1).parameter_count() == 8);
}

TEST_CASE("mlp_init rejects bad architectures and is deterministic", "[mlp][arch]") {
    Rng r1 = Rng::stream(7, 0);
    CHECK_THROWS_AS(mlp_init({5}, r1), BadArchitecture);
    CHECK_THROWS_AS(mlp_init({5, 0, 2}, r1), BadArchitecture);

    const MlpModel a = make_model({4, 8, 2}, 99);
    const MlpModel b = make_model({4, 8, 2}, 99);
    CHECK(a == b);
    // biases start at zero, weights inside the fan-in limit
    for (const auto& layer : a.biases)
        for (double v : layer) CHECK(v == 0.0);
    const double lim0 = 1.0 / std::sqrt(4.0);
    for (double v : a.weights[0]) CHECK(std::abs(v) <= lim0);
}

TEST_CASE("forward validates the input dimension", "[mlp][forward]") {
    const MlpModel m = make_model({4, 8, 2}, 3);
    CHECK_THROWS_AS(forward(m, {1.0, 2.0}), DimensionMismatch);
    const auto out = forward(m, {1.0, 2.0, 3.0, 4.0});
    CHECK(out.size() == 2);
}

TEST_CASE("forward honours normalization stats", "[mlp][forward]") {
    MlpModel m = make_model({2, 3, 1}, 4);
    const auto base = forward(m, {1.0, -1.0});

    // absorbing a shift into the input stats must shift the effective input
    m.feature_stats.mean = {1.0, -1.0};
    const auto shifted = forward(m, {2.0, -2.0});
    CHECK(shifted[0] == Catch::Approx(base[0]).margin(1e-12));

    // output de-normalization is affine in the stats
    m.target_stats.mean = {10.0};
    m.target_stats.std_dev = {2.0};
    const auto scaled = forward(m, {2.0, -2.0});
    CHECK(scaled[0] == Catch::Approx(10.0 + 2.0 * base[0]).margin(1e-12));
}

// ====================================================================
// Gradient correctness (central finite differences)
// ====================================================================

TEST_CASE("backprop gradients match central differences", "[mlp][gradient][property]") {
    MlpModel m = make_model({5, 9, 7, 2}, 11);
    // non-trivial normalization so the chain through the stats is exercised
    for (int j = 0; j < m.dim_in(); ++j) {
        m.feature_stats.mean[j] = 0.1 * j;
        m.feature_stats.std_dev[j] = 1.0 + 0.2 * j;
    }
    m.target_stats.mean = {0.3, -0.2};
    m.target_stats.std_dev = {0.8, 1.7};

    std::vector<double> X, Y;
    make_batch(m.dim_in(), m.dim_out(), 16, 12, X, Y);

    Gradients g;
    loss_and_gradient(m, X.data(), Y.data(), 16, g);

    Rng rng = Rng::stream(13, 0);
    int checked = 0;
    while (checked < 100) {
        const std::size_t l = static_cast<std::size_t>(rng.uniform(0.0, 1.0) * m.n_layers());
        const bool bias = rng.uniform(0.0, 1.0) < 0.3;
        auto& params = bias ? m.biases[l] : m.weights[l];
        const auto& grads = bias ? g.biases[l] : g.weights[l];
        const std::size_t j =
            static_cast<std::size_t>(rng.uniform(0.0, 1.0) * params.size());
        if (j >= params.size()) continue;

        const double h = 1e-6;
        const double saved = params[j];
        params[j] = saved + h;
        const double up = evaluate_mse(m, X.data(), Y.data(), 16);
        params[j] = saved - h;
        const double dn = evaluate_mse(m, X.data(), Y.data(), 16);
        params[j] = saved;

        const double fd = (up - dn) / (2.0 * h);
        const double an = grads[j];
        INFO("layer " << l << (bias ? " bias " : " weight ") << j
                      << ": analytic " << an << ", fd " << fd);
        CHECK(std::abs(an - fd) <=
              kGradRelTol * std::max(std::abs(an), std::abs(fd)) + kGradAbsFloor);
        ++checked;
    }
}

TEST_CASE("loss_and_gradient agrees with evaluate_mse", "[mlp][gradient]") {
    const MlpModel m = make_model({4, 6, 2}, 21);
    std::vector<double> X, Y;
    make_batch(4, 2, 32, 22, X, Y);
    Gradients g;
    const double a = loss_and_gradient(m, X.data(), Y.data(), 32, g);
    const double b = evaluate_mse(m, X.data(), Y.data(), 32);
    CHECK(a == Catch::Approx(b).epsilon(1e-14));
}

// ====================================================================
// Training behaviour
// ====================================================================

namespace {

Dataset make_dataset(std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.dim_in = 3;
    d.dim_out = 2;
    d.config.n_pursuers = 2;
    Rng rng = Rng::stream(seed, 2);
    for (std::size_t r = 0; r < n; ++r) {
        TrajectorySample s;
        s.features = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        s.commands = {std::tanh(s.features[0] + 0.5 * s.features[1]),
                      0.3 * s.features[2] - 0.2 * s.features[0] * s.features[1]};
        s.time_to_go = 1.0;
        d.push(s);
    }
    d.feature_stats = detail::compute_stats(d.features, d.dim_in);
    d.target_stats = detail::compute_stats(d.commands, d.dim_out);
    return d;
}

}  // namespace

TEST_CASE("training fits a smooth synthetic mapping", "[mlp][train]") {
    const Dataset d = make_dataset(2000, 31);
    TrainConfig tc;
    tc.max_epochs = 250;
    tc.patience = 250;
    tc.learning_rate = 2e-3;
    tc.rng_seed = 5;

    const MlpModel m0 = make_model({3, 16, 16, 2}, 32);
    std::vector<EpochStats> history;
    const MlpModel m = train(m0, d, tc, &history);

    REQUIRE(!history.empty());
    CHECK(history.front().val_mse > 10.0 * history.back().val_mse);
    CHECK(history.back().val_mse < 0.01);

    // best-so-far validation sequence is monotone nonincreasing
    double best = 1e300;
    for (const auto& st : history) {
        best = std::min(best, st.val_mse);
        CHECK(best <= st.val_mse + 1e-15);
    }

    // the returned model carries the dataset stats and training meta
    CHECK(m.feature_stats.mean == d.feature_stats.mean);
    bool has_meta = false;
    for (const auto& [k, v] : m.meta) has_meta = has_meta || k == "best_val_mse";
    CHECK(has_meta);
}

TEST_CASE("training is deterministic for a fixed seed", "[mlp][train][determinism]") {
    const Dataset d = make_dataset(500, 41);
    TrainConfig tc;
    tc.max_epochs = 10;
    tc.rng_seed = 77;

    const MlpModel m0 = make_model({3, 8, 2}, 42);
    std::vector<EpochStats> h1, h2;
    const MlpModel a = train(m0, d, tc, &h1);
    const MlpModel b = train(m0, d, tc, &h2);

    CHECK(a == b);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].train_mse == h2[i].train_mse);
        CHECK(h1[i].val_mse == h2[i].val_mse);
    }

    std::stringstream s1, s2;
    save_model(a, s1);
    save_model(b, s2);
    CHECK(s1.str() == s2.str());
}

TEST_CASE("train validates inputs", "[mlp][train]") {
    const Dataset d = make_dataset(50, 51);
    TrainConfig tc;

    const MlpModel wrong = make_model({4, 8, 2}, 52);
    CHECK_THROWS_AS(train(wrong, d, tc), DimensionMismatch);

    tc.validation_fraction = 1.5;
    const MlpModel ok = make_model({3, 8, 2}, 53);
    CHECK_THROWS(train(ok, d, tc));
}

// ====================================================================
// Serialization
// ====================================================================

TEST_CASE("model io round-trips byte-exactly", "[mlp][io]") {
    const Dataset d = make_dataset(300, 61);
    TrainConfig tc;
    tc.max_epochs = 5;
    tc.rng_seed = 62;
    const MlpModel m = train(make_model({3, 8, 2}, 63), d, tc);

    std::stringstream first, second;
    save_model(m, first);
    const MlpModel back = load_model(first);
    CHECK(back == m);

    save_model(back, second);
    CHECK(first.str() == second.str());

    // forward pass of the loaded model is bit-identical
    const std::vector<double> x = {0.3, -0.8, 0.5};
    const auto ya = forward(m, x);
    const auto yb = forward(back, x);
    CHECK(ya[0] == yb[0]);
    CHECK(ya[1] == yb[1]);
}

TEST_CASE("model reader rejects corrupted input", "[mlp][io]") {
    const MlpModel m = make_model({3, 4, 2}, 71);
    std::stringstream ss;
    save_model(m, ss);
    const std::string blob = ss.str();

    std::stringstream bad1("YYYY" + blob.substr(4));
    CHECK_THROWS_AS(load_model(bad1), FormatError);

    std::stringstream bad2(blob.substr(0, blob.size() - 4));
    CHECK_THROWS_AS(load_model(bad2), FormatError);

    std::stringstream bad3(blob + "x");
    CHECK_THROWS_AS(load_model(bad3), FormatError);
}

TEST_CASE("history csv export", "[mlp][io]") {
    std::vector<EpochStats> h = {{1, 0.5, 0.6}, {2, 0.25, 0.3}};
    std::stringstream ss;
    write_history_csv(ss, h);
    std::string line;
    REQUIRE(std::getline(ss, line));
    CHECK(line == "epoch,train_mse,val_mse");
    REQUIRE(std::getline(ss, line));
    CHECK(line == "1,0.5,0.6");
}
