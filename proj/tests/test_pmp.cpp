#include <catch2/catch_amalgamated.hpp>

#include "coopguide/dataset.hpp"
#include "coopguide/pmp.hpp"

#include <cmath>
#include <sstream>
#include <vector>

using namespace coopguide;

namespace {

// Pinned tolerances for the extremal-field invariants.
constexpr double kHamiltonianDriftTol = 1e-9;   // |H(t)| along a trajectory at tol 1e-12
constexpr double kCostateDriftTol = 1e-12;      // p_x, p_y constancy
constexpr double kRoundTripTol = 1e-6;          // forward re-integration to the origin

EngagementConfig default_cfg() {
    EngagementConfig cfg;
    return cfg;
}

ExtendedState sample(std::uint64_t idx) {
    EngagementConfig cfg = default_cfg();
    TerminalSampleSpec spec;
    Rng rng = Rng::stream(901, idx);
    return sample_terminal(spec, cfg, rng);
}

}  // namespace

// ====================================================================
// Pointwise identities
// ====================================================================

TEST_CASE("optimal control is p_theta over (1-kappa)", "[pmp][control]") {
    CHECK(optimal_control(0.0, 0.01) == 0.0);
    CHECK(optimal_control(0.99, 0.01) == Catch::Approx(1.0));
    CHECK(optimal_control(-0.5, 0.5) == Catch::Approx(-1.0));
    CHECK_THROWS_AS(optimal_control(1.0, 0.0), InvalidKappa);
    CHECK_THROWS_AS(optimal_control(1.0, 1.0), InvalidKappa);
}

TEST_CASE("running cost mixes time and effort", "[pmp][cost]") {
    const std::vector<double> u = {0.5, -0.5};
    const double kappa = 0.01;
    CHECK(running_cost(u, kappa) ==
          Catch::Approx(kappa + 0.5 * (1.0 - kappa) * (0.25 + 0.25)));
    CHECK(running_cost({0.0, 0.0}, kappa) == Catch::Approx(kappa));
}

TEST_CASE("hamiltonian is maximized by the optimal control", "[pmp][property]") {
    // H(u*) >= H(u) for perturbed controls: first-order stationarity plus
    // concavity in u makes u* = p_theta/(1-kappa) the unique maximizer
    Rng rng = Rng::stream(902, 0);
    const double kappa = 0.01;
    for (int trial = 0; trial < 200; ++trial) {
        ExtendedState e = sample(static_cast<std::uint64_t>(trial));
        std::vector<double> ustar(e.n());
        for (std::size_t i = 0; i < e.n(); ++i)
            ustar[i] = optimal_control(e.costates[i].p_theta, kappa);
        const double h_star = hamiltonian(e, ustar, kappa);
        CHECK(h_star == Catch::Approx(hamiltonian_optimal(e, kappa)).margin(1e-14));

        std::vector<double> u = ustar;
        u[trial % e.n()] += rng.uniform(-0.5, 0.5);
        CHECK(hamiltonian(e, u, kappa) <= h_star + 1e-14);
    }
}

// ====================================================================
// Conservation along extremals
// ====================================================================

TEST_CASE("hamiltonian stays zero along backward extremals", "[pmp][conservation]") {
    EngagementConfig cfg = default_cfg();
    for (std::uint64_t k = 0; k < 20; ++k) {
        const ExtendedState terminal = sample(k);
        const Trajectory traj = backward_propagate(terminal, 5.0, cfg.kappa, 1e-12);
        double max_h = 0.0;
        for (const auto& node : traj.nodes)
            max_h = std::max(max_h, std::abs(hamiltonian_optimal(node, cfg.kappa)));
        INFO("trajectory " << k << " max |H| = " << max_h);
        CHECK(max_h < kHamiltonianDriftTol);
    }
}

TEST_CASE("position costates are constants of the motion", "[pmp][conservation]") {
    EngagementConfig cfg = default_cfg();
    for (std::uint64_t k = 0; k < 20; ++k) {
        const ExtendedState terminal = sample(k);
        const Trajectory traj = backward_propagate(terminal, 5.0, cfg.kappa, 1e-12);
        for (const auto& node : traj.nodes) {
            for (std::size_t i = 0; i < node.n(); ++i) {
                CHECK(std::abs(node.costates[i].p_x - terminal.costates[i].p_x) <
                      kCostateDriftTol);
                CHECK(std::abs(node.costates[i].p_y - terminal.costates[i].p_y) <
                      kCostateDriftTol);
            }
        }
    }
}

TEST_CASE("forward re-integration returns to the origin", "[pmp][roundtrip]") {
    EngagementConfig cfg = default_cfg();
    for (std::uint64_t k = 0; k < 10; ++k) {
        const ExtendedState terminal = sample(k);
        const Trajectory back = backward_propagate(terminal, 4.0, cfg.kappa, 1e-12);

        // earliest node forward to the terminal time
        const Trajectory fwd =
            integrate(back.nodes.front(), back.t_front(), back.t_back(), cfg.kappa, 1e-12);
        const ExtendedState& end = fwd.nodes.back();
        for (std::size_t i = 0; i < end.n(); ++i) {
            INFO("trajectory " << k << " pursuer " << i);
            CHECK(std::abs(end.states[i].x) < kRoundTripTol);
            CHECK(std::abs(end.states[i].y) < kRoundTripTol);
        }
        // heading gap survives the round trip
        const double gap = wrap_angle(end.states[1].theta - end.states[0].theta);
        CHECK(gap == Catch::Approx(cfg.delta).margin(kRoundTripTol));
    }
}

// ====================================================================
// Integrator behaviour
// ====================================================================

TEST_CASE("trajectory nodes are strictly ascending in time", "[pmp][integrate]") {
    const ExtendedState terminal = sample(33);
    const Trajectory traj = backward_propagate(terminal, 3.0, 0.01, 1e-10);
    REQUIRE(traj.times.size() == traj.nodes.size());
    REQUIRE(traj.times.size() >= 2);
    for (std::size_t k = 1; k < traj.times.size(); ++k)
        CHECK(traj.times[k] > traj.times[k - 1]);
    CHECK(traj.t_front() == Catch::Approx(0.0).margin(1e-12));
    CHECK(traj.t_back() == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("sample_state reproduces stored nodes and interpolates between them",
          "[pmp][integrate]") {
    const ExtendedState terminal = sample(34);
    const Trajectory traj = backward_propagate(terminal, 3.0, 0.01, 1e-10);

    // exactly at a node: bit-for-bit the stored state
    const std::size_t mid = traj.nodes.size() / 2;
    const ExtendedState at_node = sample_state(traj, traj.times[mid]);
    for (std::size_t i = 0; i < at_node.n(); ++i) {
        CHECK(at_node.states[i].x == traj.nodes[mid].states[i].x);
        CHECK(at_node.states[i].theta == traj.nodes[mid].states[i].theta);
        CHECK(at_node.costates[i].p_theta == traj.nodes[mid].costates[i].p_theta);
    }

    // between nodes: close to a fine re-integration
    const double t = 0.5 * (traj.times[mid] + traj.times[mid + 1]);
    const ExtendedState interp = sample_state(traj, t);
    const Trajectory refine =
        integrate(traj.nodes[mid], traj.times[mid], t, 0.01, 1e-13);
    const ExtendedState& exact = refine.nodes.back();
    for (std::size_t i = 0; i < interp.n(); ++i) {
        CHECK(interp.states[i].x == Catch::Approx(exact.states[i].x).margin(1e-8));
        CHECK(interp.states[i].y == Catch::Approx(exact.states[i].y).margin(1e-8));
        CHECK(interp.states[i].theta == Catch::Approx(exact.states[i].theta).margin(1e-8));
        CHECK(interp.costates[i].p_theta ==
              Catch::Approx(exact.costates[i].p_theta).margin(1e-8));
    }

    CHECK_THROWS(sample_state(traj, -1.0));
    CHECK_THROWS(sample_state(traj, 3.5));
}

TEST_CASE("integrate rejects invalid kappa and zero-length spans", "[pmp][integrate]") {
    const ExtendedState terminal = sample(35);
    CHECK_THROWS_AS(integrate(terminal, 0.0, 1.0, 1.5, 1e-10), InvalidKappa);
    CHECK_THROWS(integrate(terminal, 1.0, 1.0, 0.01, 1e-10));
}

// ====================================================================
// Cost and export
// ====================================================================

TEST_CASE("trajectory cost equals kappa*T for straight flight", "[pmp][cost]") {
    // zero p_theta everywhere with costates aligned to the heading keeps
    // u = 0, so J reduces to the pure time term
    ExtendedState e;
    e.states = {{0.0, 0.0, 0.3}, {0.0, 0.0, 0.3 + deg_to_rad(10.0)}};
    e.costates.resize(2);
    const double kappa = 0.01;
    for (std::size_t i = 0; i < 2; ++i) {
        e.costates[i].p_x = 0.005 * std::cos(e.states[i].theta);
        e.costates[i].p_y = 0.005 * std::sin(e.states[i].theta);
        e.costates[i].p_theta = 0.0;
    }
    const Trajectory traj = integrate(e, 0.0, 2.0, kappa, 1e-12);
    CHECK(trajectory_cost(traj) == Catch::Approx(kappa * 2.0).epsilon(1e-9));
    for (const auto& node : traj.nodes)
        for (std::size_t i = 0; i < node.n(); ++i)
            CHECK(std::abs(node.costates[i].p_theta) < 1e-12);
}

TEST_CASE("trajectory csv export has the documented shape", "[pmp][io]") {
    const ExtendedState terminal = sample(36);
    const Trajectory traj = backward_propagate(terminal, 1.0, 0.01, 1e-10);

    std::stringstream ss;
    write_trajectory_csv(ss, traj);
    std::string line;
    REQUIRE(std::getline(ss, line));
    CHECK(line == "t,i,x,y,theta,px,py,ptheta,u,H");

    std::size_t rows = 0;
    while (std::getline(ss, line)) ++rows;
    CHECK(rows == traj.nodes.size() * terminal.n());
}

TEST_CASE("transversality residual matches the p_theta sum", "[pmp][identity]") {
    ExtendedState e = sample(37);
    CHECK(transversality_residual(e) == Catch::Approx(0.0).margin(1e-15));
    e.costates[0].p_theta += 0.25;
    CHECK(transversality_residual(e) == Catch::Approx(0.25));
}
