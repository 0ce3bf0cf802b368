#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "dsse/grid.hpp"
#include "dsse/random.hpp"

using namespace dsse;
using namespace dsse::grid;

namespace {

Network two_bus(double g = 4.0, double b = -8.0) {
    Network net;
    net.bus_count = 2;
    net.slack_bus = 0;
    net.lines = {{0, 1, g, b}};
    return net;
}

// Independent evaluation of the directed flow equations for the oracle paths.
std::pair<double, double> flow_formula(double vi, double vj, double ti, double tj, double g,
                                       double b) {
    const double d = ti - tj;
    return {vi * vi * g - vi * vj * (g * std::cos(d) + b * std::sin(d)),
            -vi * vi * b - vi * vj * (g * std::sin(d) - b * std::cos(d))};
}

}  // namespace

TEST_CASE("line flows match hand-evaluated cases") {
    StateVector x;

    // equal voltages, equal angles: nothing flows
    Network n1 = two_bus(3.7, -5.1);
    x.v = {1.0, 1.0};
    x.theta = {0.4, 0.4};
    auto [p0, q0] = line_flow(n1, x, 0, 1);
    CHECK(p0 == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(q0 == doctest::Approx(0.0).epsilon(1e-15));

    Network n2 = two_bus(1.0, 0.0);
    x.v = {1.0, 0.9};
    x.theta = {0.0, 0.0};
    auto [p1, q1] = line_flow(n2, x, 0, 1);
    CHECK(p1 == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(q1 == doctest::Approx(0.0).epsilon(1e-14));

    Network n3 = two_bus(0.0, -1.0);
    x.v = {1.0, 1.0};
    x.theta = {M_PI / 2.0, 0.0};
    auto [p2, q2] = line_flow(n3, x, 0, 1);
    CHECK(p2 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(q2 == doctest::Approx(1.0).epsilon(1e-14));

    CHECK_THROWS_AS(line_flow(n3, x, 0, 5), ValueError);
}

TEST_CASE("bus injections") {
    Network net = generate_feeder(8, 42);

    SUBCASE("flat state gives zero injections") {
        StateVector x = StateVector::flat(8);
        std::vector<double> p, q;
        bus_injections(net, x, p, q);
        for (int i = 0; i < 8; ++i) {
            CHECK(p[i] == 0.0);
            CHECK(q[i] == 0.0);
        }
    }

    SUBCASE("two-bus endpoints carry the two directed flows") {
        Network tb = two_bus(2.0, -4.0);
        StateVector x;
        x.v = {1.0, 0.97};
        x.theta = {0.0, -0.02};
        std::vector<double> p, q;
        bus_injections(tb, x, p, q);
        auto [pf, qf] = flow_formula(1.0, 0.97, 0.0, -0.02, 2.0, -4.0);
        auto [pr, qr] = flow_formula(0.97, 1.0, -0.02, 0.0, 2.0, -4.0);
        CHECK(p[0] == doctest::Approx(pf).epsilon(1e-14));
        CHECK(p[1] == doctest::Approx(pr).epsilon(1e-14));
        CHECK(q[0] == doctest::Approx(qf).epsilon(1e-14));
        CHECK(q[1] == doctest::Approx(qr).epsilon(1e-14));

        // difference form: each incident line contributes (reverse - forward)
        bus_injections(tb, x, p, q, InjectionConvention::difference_form);
        CHECK(p[0] == doctest::Approx(pr - pf).epsilon(1e-14));
        CHECK(p[1] == doctest::Approx(pf - pr).epsilon(1e-14));
    }

    SUBCASE("random state matches an adjacency-walk oracle") {
        RandomSource rng(7);
        StateVector x;
        for (int i = 0; i < 8; ++i) {
            x.v.push_back(rng.uniform(0.92, 1.05));
            x.theta.push_back(i == 0 ? 0.0 : rng.uniform(-0.1, 0.1));
        }
        std::vector<double> p, q;
        bus_injections(net, x, p, q);
        for (int bus = 0; bus < 8; ++bus) {
            double p_sum = 0.0, q_sum = 0.0;
            for (const Line& l : net.lines) {
                if (l.from != bus && l.to != bus) continue;
                const int other = l.from == bus ? l.to : l.from;
                auto [pf, qf] =
                    flow_formula(x.v[bus], x.v[other], x.theta[bus], x.theta[other], l.g, l.b);
                p_sum += pf;
                q_sum += qf;
            }
            CHECK(p[bus] == doctest::Approx(p_sum).epsilon(1e-12));
            CHECK(q[bus] == doctest::Approx(q_sum).epsilon(1e-12));
        }
    }
}

TEST_CASE("line losses are nonnegative for g >= 0") {
    Network net = generate_feeder(12, 3);
    RandomSource rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        StateVector x;
        for (int i = 0; i < 12; ++i) {
            x.v.push_back(rng.uniform(0.9, 1.1));
            x.theta.push_back(i == 0 ? 0.0 : rng.uniform(-0.3, 0.3));
        }
        for (const Line& l : net.lines) {
            const auto [pf, qf] = line_flow(net, x, l.from, l.to);
            const auto [pr, qr] = line_flow(net, x, l.to, l.from);
            CHECK(pf + pr >= -1e-12);
        }
    }
}

TEST_CASE("measurement function") {
    Network net = generate_feeder(6, 5);

    CHECK(measurement_function(net, StateVector::flat(6), {}).size() == 0);

    auto descriptors = place_sensors(net, 1.0, 9);
    MeasurementFrame flat = measurement_function(net, StateVector::flat(6), descriptors);
    CHECK(flat.complete());
    for (double v : flat.values) CHECK(v == 0.0);

    CHECK_THROWS_AS(
        measurement_function(net, StateVector::flat(6),
                             {MeasurementDescriptor{MeasurementKind::P_inj, 77, -1, -1}}),
        ValueError);
}

TEST_CASE("power flow") {
    SUBCASE("zero injections give the flat solution") {
        Network net = generate_feeder(10, 11);
        auto result = solve_power_flow(net, InjectionSpec::zeros(10), 1.02);
        for (int i = 0; i < 10; ++i) {
            CHECK(result.state.v[i] == 1.02);
            CHECK(result.state.theta[i] == 0.0);
        }
        CHECK(result.iterations == 0);
    }

    SUBCASE("two-bus solution matches a grid-search + refinement oracle") {
        const double g = 4.0, b = -8.0;
        Network net = two_bus(g, b);
        InjectionSpec spec = InjectionSpec::zeros(2);
        spec.p[1] = -0.08;  // load draws power
        spec.q[1] = -0.03;
        auto result = solve_power_flow(net, spec);

        auto mismatch = [&](double v1, double t1) {
            auto [p, q] = flow_formula(v1, 1.0, t1, 0.0, g, b);
            return std::hypot(p - spec.p[1], q - spec.q[1]);
        };
        // coarse scan, then shrinking local refinement
        double best_v = 1.0, best_t = 0.0, best = mismatch(1.0, 0.0);
        for (double v1 = 0.85; v1 <= 1.10001; v1 += 0.005)
            for (double t1 = -0.3; t1 <= 0.30001; t1 += 0.005) {
                const double m = mismatch(v1, t1);
                if (m < best) {
                    best = m;
                    best_v = v1;
                    best_t = t1;
                }
            }
        double step = 0.005;
        for (int it = 0; it < 60; ++it) {
            bool improved = false;
            for (int dv = -1; dv <= 1; ++dv)
                for (int dt = -1; dt <= 1; ++dt) {
                    const double m = mismatch(best_v + dv * step, best_t + dt * step);
                    if (m < best) {
                        best = m;
                        best_v += dv * step;
                        best_t += dt * step;
                        improved = true;
                    }
                }
            if (!improved) step *= 0.5;
        }
        CHECK(std::abs(result.state.v[1] - best_v) < 1e-6);
        CHECK(std::abs(result.state.theta[1] - best_t) < 1e-6);
    }

    SUBCASE("solution reproduces specified injections") {
        Network net = generate_feeder(15, 21);
        RandomSource rng(33);
        InjectionSpec spec = InjectionSpec::zeros(15);
        for (int i = 1; i < 15; ++i) {
            spec.p[i] = -rng.uniform(0.005, 0.03);
            spec.q[i] = spec.p[i] * rng.uniform(0.3, 0.5);
        }
        auto result = solve_power_flow(net, spec);
        CHECK(result.max_mismatch < 1e-8);
        std::vector<double> p, q;
        bus_injections(net, result.state, p, q);
        for (int i = 0; i < 15; ++i) {
            if (i == net.slack_bus) continue;
            CHECK(std::abs(p[i] - spec.p[i]) < 1e-8);
            CHECK(std::abs(q[i] - spec.q[i]) < 1e-8);
        }
        CHECK(result.state.theta[net.slack_bus] == 0.0);
        CHECK(result.state.v[net.slack_bus] == 1.0);
    }

    SUBCASE("late iterations contract monotonically") {
        Network net = generate_feeder(15, 21);
        InjectionSpec spec = InjectionSpec::zeros(15);
        for (int i = 1; i < 15; ++i) spec.p[i] = -0.02;
        auto result = solve_power_flow(net, spec);
        const auto& h = result.mismatch_history;
        REQUIRE(h.size() >= 3);
        for (std::size_t k = 1; k + 1 < h.size(); ++k) {
            const double r_prev = h[k] / h[k - 1];
            const double r_next = h[k + 1] / h[k];
            CHECK(r_next <= r_prev + 1e-12);
        }
    }

    SUBCASE("infeasible load reports non-convergence with its mismatch") {
        Network net = two_bus(1.0, -2.0);
        InjectionSpec spec = InjectionSpec::zeros(2);
        spec.p[1] = -50.0;  // far beyond the line's transfer capability
        try {
            solve_power_flow(net, spec);
            FAIL("expected ConvergenceError");
        } catch (const ConvergenceError& e) {
            CHECK(e.final_residual > 0.0);
        }
    }

    SUBCASE("zero-admittance line makes the Jacobian singular") {
        Network net = two_bus(0.0, 0.0);
        InjectionSpec spec = InjectionSpec::zeros(2);
        spec.p[1] = -0.1;
        CHECK_THROWS_AS(solve_power_flow(net, spec), NumericError);
    }
}

TEST_CASE("feeder generation") {
    Network two = generate_feeder(2, 123);
    CHECK(two.lines.size() == 1);

    Network a = generate_feeder(15, 77);
    Network b = generate_feeder(15, 77);
    REQUIRE(a.lines.size() == b.lines.size());
    for (std::size_t i = 0; i < a.lines.size(); ++i) {
        CHECK(a.lines[i].from == b.lines[i].from);
        CHECK(a.lines[i].to == b.lines[i].to);
        CHECK(a.lines[i].g == b.lines[i].g);
        CHECK(a.lines[i].b == b.lines[i].b);
    }

    // tree oracle: n-1 lines, connected (walk), hence acyclic
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Network net = generate_feeder(20, seed);
        CHECK(net.lines.size() == 19);
        std::vector<char> seen(20, 0);
        std::vector<int> stack = {0};
        seen[0] = 1;
        int visited = 1;
        while (!stack.empty()) {
            const int bus = stack.back();
            stack.pop_back();
            for (const Line& l : net.lines) {
                const int other = l.from == bus ? l.to : (l.to == bus ? l.from : -1);
                if (other >= 0 && !seen[other]) {
                    seen[other] = 1;
                    ++visited;
                    stack.push_back(other);
                }
            }
        }
        CHECK(visited == 20);
        for (const Line& l : net.lines) CHECK(l.g > 0.0);
    }

    CHECK_THROWS_AS(generate_feeder(1, 5), ValueError);
    CHECK_THROWS_AS(generate_feeder(5, 5, ImpedanceRanges{0.1, 0.01, 0.02, 0.08}), ValueError);
}

TEST_CASE("sensor placement") {
    Network net = generate_feeder(15, 4);

    auto all = place_sensors(net, 1.0, 1);
    int inj_count = 0;
    for (const auto& d : all)
        if (d.kind == MeasurementKind::P_inj) ++inj_count;
    CHECK(inj_count == 15);
    // every line end is instrumented when every bus is selected
    int flow_count = 0;
    for (const auto& d : all)
        if (d.kind == MeasurementKind::P_flow) ++flow_count;
    CHECK(flow_count == 2 * 14);

    Network big = generate_feeder(144, 9);
    auto sensors = place_sensors(big, 0.6, 2);
    int big_inj = 0;
    for (const auto& d : sensors)
        if (d.kind == MeasurementKind::P_inj) ++big_inj;
    CHECK(big_inj == 86);  // floor(0.6 * 144)

    auto s1 = place_sensors(net, 0.6, 5);
    auto s2 = place_sensors(net, 0.6, 5);
    REQUIRE(s1.size() == s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].id() == s2[i].id());

    CHECK_THROWS_AS(place_sensors(net, 0.0, 1), ValueError);
    CHECK_THROWS_AS(place_sensors(net, 0.01, 1), ValueError);
}

TEST_CASE("network and descriptor files round trip") {
    namespace fs = std::filesystem;
    Network net = generate_feeder(9, 31);
    const std::string npath = (fs::temp_directory_path() / "dsse_net_test.txt").string();
    net.to_file(npath);
    Network back = Network::from_file(npath);
    CHECK(back.bus_count == net.bus_count);
    CHECK(back.slack_bus == net.slack_bus);
    REQUIRE(back.lines.size() == net.lines.size());
    for (std::size_t i = 0; i < net.lines.size(); ++i) {
        CHECK(back.lines[i].from == net.lines[i].from);
        CHECK(back.lines[i].g == net.lines[i].g);
        CHECK(back.lines[i].b == net.lines[i].b);
    }
    fs::remove(npath);

    auto descriptors = place_sensors(net, 0.5, 8);
    const std::string dpath = (fs::temp_directory_path() / "dsse_desc_test.txt").string();
    descriptors_to_file(descriptors, dpath);
    auto dback = descriptors_from_file(dpath);
    REQUIRE(dback.size() == descriptors.size());
    for (std::size_t i = 0; i < dback.size(); ++i) CHECK(dback[i] == descriptors[i]);
    fs::remove(dpath);

    CHECK_THROWS_AS(MeasurementDescriptor::parse("What_1"), ValueError);
    CHECK_THROWS_AS(Network::from_file("/nonexistent/net.txt"), IoError);
}

TEST_CASE("network validation") {
    Network net;
    net.bus_count = 3;
    net.slack_bus = 0;
    net.lines = {{0, 1, 1.0, -2.0}};  // bus 2 dangling
    CHECK_THROWS_AS(net.validate(), ValueError);

    net.lines.push_back({2, 2, 1.0, -1.0});
    CHECK_THROWS_AS(net.validate(), ValueError);
}
