#include <catch2/catch_amalgamated.hpp>

#include "coopguide/engagement.hpp"

#include <cmath>
#include <vector>

using namespace coopguide;

namespace {

const TargetState kOrigin = TargetState::fixed(0.0, 0.0);

}  // namespace

// ====================================================================
// Polar features
// ====================================================================

TEST_CASE("polar features of a head-on pursuer", "[engagement][features]") {
    // pursuer on the negative x axis aiming at the origin
    PursuerState s{-2.0, 0.0, 0.0};
    const PolarFeatures f = polar_features(s, kOrigin);
    CHECK(f.r == 2.0);
    CHECK(f.r_dot == Catch::Approx(-1.0));            // closing at unit speed
    CHECK(f.lambda_dot == Catch::Approx(0.0).margin(1e-15));
    CHECK(f.lambda == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("polar features of a beam-riding pursuer", "[engagement][features]") {
    // flying perpendicular to the line of sight: no closing, max los rate
    PursuerState s{0.0, -3.0, 0.0};                    // target along +y, heading +x
    const PolarFeatures f = polar_features(s, kOrigin);
    CHECK(f.r == 3.0);
    CHECK(f.r_dot == Catch::Approx(0.0).margin(1e-15));
    CHECK(std::abs(f.lambda_dot) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("polar features throw at the target", "[engagement][features]") {
    PursuerState s{1e-12, 0.0, 0.0};
    CHECK_THROWS_AS(polar_features(s, kOrigin), CoincidentTarget);
}

TEST_CASE("feature identities r_dot = -cos(theta-lambda), lambda_dot = -sin(theta-lambda)/r",
          "[engagement][features][property]") {
    Rng rng = Rng::stream(11, 0);
    for (int i = 0; i < 2000; ++i) {
        PursuerState s;
        s.x = rng.uniform(-10.0, 10.0);
        s.y = rng.uniform(-10.0, 10.0);
        s.theta = rng.uniform(-4.0, 4.0);
        if (std::hypot(s.x, s.y) < 1e-3) continue;
        const PolarFeatures f = polar_features(s, kOrigin);
        const double lambda = std::atan2(-s.y, -s.x);
        CHECK(f.r == Catch::Approx(std::hypot(s.x, s.y)));
        CHECK(f.r_dot == Catch::Approx(-std::cos(s.theta - lambda)).margin(1e-12));
        CHECK(f.lambda_dot == Catch::Approx(-std::sin(s.theta - lambda) / f.r).margin(1e-12));
    }
}

// ====================================================================
// Rotation invariance
// ====================================================================

TEST_CASE("assembled features are rotation invariant", "[engagement][features][property]") {
    EngagementConfig cfg;
    Rng rng = Rng::stream(12, 0);

    for (int trial = 0; trial < 200; ++trial) {
        CombinedState s;
        s.pursuers.resize(cfg.n_pursuers);
        for (auto& p : s.pursuers) {
            p.x = rng.uniform(-5.0, 5.0);
            p.y = rng.uniform(-5.0, 5.0);
            p.theta = rng.uniform(-3.0, 3.0);
            if (std::hypot(p.x, p.y) < 0.1) p.x += 1.0;
        }
        const double phi = rng.uniform(-3.0, 3.0);
        const CombinedState rotated = rotate(s, phi);

        const std::vector<double> fa = assemble_features(s, kOrigin, cfg);
        const std::vector<double> fb = assemble_features(rotated, kOrigin, cfg);
        REQUIRE(fa.size() == fb.size());
        REQUIRE(static_cast<int>(fa.size()) == cfg.feature_dim());
        for (std::size_t k = 0; k < fa.size(); ++k) {
            INFO("trial " << trial << ", feature " << k);
            CHECK(fb[k] == Catch::Approx(fa[k]).margin(1e-10));
        }
    }
}

TEST_CASE("feature layout per mode", "[engagement][features]") {
    EngagementConfig cfg;
    cfg.feature_mode = FeatureMode::augmented;
    REQUIRE(cfg.feature_dim() == 7);

    CombinedState s;
    s.pursuers = {{-2.0, 0.0, 0.1}, {0.0, -2.0, 1.0}};
    const PolarFeatures p1 = polar_features(s.pursuers[0], kOrigin);
    const PolarFeatures p2 = polar_features(s.pursuers[1], kOrigin);

    // augmented: (r, r_dot, lambda_dot) per pursuer, then the los gap
    const std::vector<double> f = assemble_features(s, kOrigin, cfg);
    REQUIRE(f.size() == 7);
    CHECK(f[0] == Catch::Approx(p1.r));
    CHECK(f[1] == Catch::Approx(p1.r_dot));
    CHECK(f[2] == Catch::Approx(p1.lambda_dot));
    CHECK(f[3] == Catch::Approx(p2.r));
    CHECK(f[4] == Catch::Approx(p2.r_dot));
    CHECK(f[5] == Catch::Approx(p2.lambda_dot));
    CHECK(f[6] == Catch::Approx(wrap_angle(p2.lambda - p1.lambda)));

    // paper: same per-pursuer block, no gap
    cfg.feature_mode = FeatureMode::paper;
    REQUIRE(cfg.feature_dim() == 6);
    const std::vector<double> g = assemble_features(s, kOrigin, cfg);
    REQUIRE(g.size() == 6);
    CHECK(g[2] == Catch::Approx(p1.lambda_dot));
    CHECK(g[5] == Catch::Approx(p2.lambda_dot));
}

TEST_CASE("assemble_features rejects wrong pursuer count", "[engagement][features]") {
    EngagementConfig cfg;
    CombinedState s;
    s.pursuers = {{-2.0, 0.0, 0.0}};
    CHECK_THROWS_AS(assemble_features(s, kOrigin, cfg), DimensionMismatch);
}

// ====================================================================
// PN command
// ====================================================================

TEST_CASE("pn command is gain times los rate", "[engagement][pn]") {
    EngagementConfig cfg;
    const PolarFeatures f = polar_features(PursuerState{0.0, -3.0, 0.0}, kOrigin);
    CHECK(pn_command(f, cfg) == Catch::Approx(cfg.pn_gain * f.lambda_dot));

    // on a collision course the los rate vanishes and so does the command
    const PolarFeatures head_on = polar_features(PursuerState{-2.0, 0.0, 0.0}, kOrigin);
    CHECK(pn_command(head_on, cfg) == Catch::Approx(0.0).margin(1e-15));
}

// ====================================================================
// Units
// ====================================================================

TEST_CASE("nondimensionalize/dimensionalize round-trip", "[engagement][units]") {
    EngagementConfig cfg;
    cfg.speed = 1000.0;

    const PursuerState nd = nondimensionalize(-1800.0, 2800.0, deg_to_rad(-97.0), cfg);
    CHECK(nd.x == Catch::Approx(-1.8));
    CHECK(nd.y == Catch::Approx(2.8));
    CHECK(nd.theta == Catch::Approx(deg_to_rad(-97.0)));

    double xm = 0.0, ym = 0.0, heading = 0.0;
    dimensionalize(nd, cfg, xm, ym, heading);
    CHECK(xm == Catch::Approx(-1800.0));
    CHECK(ym == Catch::Approx(2800.0));
    CHECK(heading == Catch::Approx(deg_to_rad(-97.0)));
}

TEST_CASE("switch radius converts to nondimensional range", "[engagement][units]") {
    EngagementConfig cfg;
    cfg.speed = 1000.0;
    cfg.switch_radius = 200.0;
    CHECK(cfg.switch_radius_nd() == Catch::Approx(0.2));
}

TEST_CASE("command maps to physical lateral acceleration", "[engagement][units]") {
    EngagementConfig cfg;
    cfg.speed = 1000.0;
    CHECK(command_to_accel(0.5, cfg) == Catch::Approx(500.0));
}

// ====================================================================
// Config validation
// ====================================================================

TEST_CASE("engagement config validation", "[engagement][config]") {
    EngagementConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    cfg.kappa = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidKappa);
    cfg.kappa = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidKappa);
    cfg.kappa = 0.01;

    cfg.n_pursuers = 1;
    CHECK_THROWS(cfg.validate());
    cfg.n_pursuers = 2;

    cfg.speed = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg.speed = 1000.0;

    cfg.pn_gain = -1.0;
    CHECK_THROWS(cfg.validate());
    cfg.pn_gain = 2.0;

    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("feature mode parses from strings", "[engagement][config]") {
    CHECK(feature_mode_from_string("paper") == FeatureMode::paper);
    CHECK(feature_mode_from_string("augmented") == FeatureMode::augmented);
    CHECK_THROWS_AS(feature_mode_from_string("bogus"), FormatError);
    CHECK(to_string(FeatureMode::augmented) == "augmented");
}
