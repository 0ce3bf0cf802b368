// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Deterministic property checks run first; the seeded directional
// experiments share a single benchmark sweep whose stage times are budgeted
// per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dsse/harness.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace dsse;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double now_s() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void criterion_1_autodiff() {
    const double t0 = now_s();
    RandomSource rng(20240406);
    double worst = 0.0;
    std::string worst_op = "-";
    for (auto& check : gradcheck::op_checks()) {
        for (int c = 0; c < 100; ++c) {
            const double err = check.run_case(rng);
            if (err > worst) {
                worst = err;
                worst_op = check.name;
            }
        }
    }
    const double elapsed = now_s() - t0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "autodiff: worst relative gradient error %.3g (%s), 100 cases/op, %.1f s",
                  worst, worst_op.c_str(), elapsed);
    report(1, worst < 1e-4 && elapsed < 60.0, buf);
}

void criterion_2_power_flow(const grid::Network& net, const data::TimeSeriesDataset& ds) {
    bool ok = true;
    std::string detail;

    // flat state: exactly zero flows and injections
    grid::StateVector flat = grid::StateVector::flat(net.bus_count, 1.0);
    std::vector<double> p, q;
    grid::bus_injections(net, flat, p, q);
    for (int i = 0; i < net.bus_count && ok; ++i)
        if (p[i] != 0.0 || q[i] != 0.0) {
            ok = false;
            detail = "flat-state injection not exactly zero";
        }
    for (const auto& line : net.lines) {
        const auto [pf, qf] = grid::line_flow(net, flat, line.from, line.to);
        if (pf != 0.0 || qf != 0.0) {
            ok = false;
            detail = "flat-state line flow not exactly zero";
        }
    }

    // every timestep: states round-trip through a fresh Newton-Raphson solve
    double worst_mismatch = 0.0, worst_state_gap = 0.0;
    std::vector<grid::MeasurementDescriptor> inj_all;
    for (int b = 0; b < net.bus_count; ++b) {
        inj_all.push_back({grid::MeasurementKind::P_inj, b, -1, -1});
        inj_all.push_back({grid::MeasurementKind::Q_inj, b, -1, -1});
    }
    for (std::size_t t = 0; t < ds.steps() && ok; ++t) {
        const auto frame = grid::measurement_function(net, ds.states[t], inj_all);
        grid::InjectionSpec spec = grid::InjectionSpec::zeros(net.bus_count);
        for (int b = 0; b < net.bus_count; ++b) {
            spec.p[b] = frame.values[2 * b];
            spec.q[b] = frame.values[2 * b + 1];
        }
        grid::PowerFlowResult pf = grid::solve_power_flow(net, spec);
        worst_mismatch = std::max(worst_mismatch, pf.max_mismatch);
        for (int b = 0; b < net.bus_count; ++b) {
            worst_state_gap = std::max(worst_state_gap,
                                       std::abs(pf.state.v[b] - ds.states[t].v[b]));
            worst_state_gap = std::max(worst_state_gap,
                                       std::abs(pf.state.theta[b] - ds.states[t].theta[b]));
        }
        if (worst_mismatch >= 1e-8) {
            ok = false;
            detail = "per-timestep mismatch exceeded 1e-8";
        }
    }

    // 2-bus solution against a grid-search + shrinking-refinement oracle
    grid::Network two;
    two.bus_count = 2;
    two.slack_bus = 0;
    two.lines = {{0, 1, 4.0, -8.0}};
    grid::InjectionSpec spec2 = grid::InjectionSpec::zeros(2);
    spec2.p[1] = -0.08;
    spec2.q[1] = -0.03;
    const auto sol2 = grid::solve_power_flow(two, spec2);
    auto mismatch2 = [&](double v1, double t1) {
        const double d = t1 - 0.0;
        const double pr = v1 * v1 * 4.0 - v1 * (4.0 * std::cos(d) + -8.0 * std::sin(d));
        const double qr = -v1 * v1 * -8.0 - v1 * (4.0 * std::sin(d) - -8.0 * std::cos(d));
        return std::hypot(pr - spec2.p[1], qr - spec2.q[1]);
    };
    double bv = 1.0, bt = 0.0, best = mismatch2(1.0, 0.0);
    for (double v = 0.85; v <= 1.1001; v += 0.005)
        for (double th = -0.3; th <= 0.3001; th += 0.005)
            if (mismatch2(v, th) < best) {
                best = mismatch2(v, th);
                bv = v;
                bt = th;
            }
    double step = 0.005;
    for (int it = 0; it < 60; ++it) {
        bool improved = false;
        for (int dv = -1; dv <= 1; ++dv)
            for (int dt = -1; dt <= 1; ++dt) {
                const double m = mismatch2(bv + dv * step, bt + dt * step);
                if (m < best) {
                    best = m;
                    bv += dv * step;
                    bt += dt * step;
                    improved = true;
                }
            }
        if (!improved) step *= 0.5;
    }
    if (std::abs(sol2.state.v[1] - bv) > 1e-6 || std::abs(sol2.state.theta[1] - bt) > 1e-6) {
        ok = false;
        detail = "2-bus solution disagrees with the brute-force oracle";
    }

    // nonnegative line losses on random states
    RandomSource rng(55);
    for (int trial = 0; trial < 100 && ok; ++trial) {
        grid::StateVector x;
        for (int b = 0; b < net.bus_count; ++b) {
            x.v.push_back(rng.uniform(0.9, 1.1));
            x.theta.push_back(b == net.slack_bus ? 0.0 : rng.uniform(-0.3, 0.3));
        }
        for (const auto& line : net.lines) {
            const auto [pf, qf] = grid::line_flow(net, x, line.from, line.to);
            const auto [pr, qr] = grid::line_flow(net, x, line.to, line.from);
            if (line.g >= 0.0 && pf + pr < -1e-12) {
                ok = false;
                detail = "negative line loss with nonnegative conductance";
            }
        }
    }

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "power flow: %zu timesteps round-tripped, worst mismatch %.2e, state gap %.2e%s%s",
                  ds.steps(), worst_mismatch, worst_state_gap, ok ? "" : " - ", detail.c_str());
    report(2, ok, buf);
}

void criterion_3_measurement_round_trip(const grid::Network& net) {
    RandomSource rng(91);
    double worst = 0.0;
    auto descriptors = grid::place_sensors(net, 1.0, 2);
    for (int snapshot = 0; snapshot < 100; ++snapshot) {
        grid::InjectionSpec spec = grid::InjectionSpec::zeros(net.bus_count);
        for (int b = 0; b < net.bus_count; ++b) {
            if (b == net.slack_bus) continue;
            spec.p[b] = -rng.uniform(0.002, 0.04);
            spec.q[b] = spec.p[b] * rng.uniform(0.2, 0.5);
        }
        const auto pf = grid::solve_power_flow(net, spec);
        const auto frame = grid::measurement_function(net, pf.state, descriptors);
        for (std::size_t c = 0; c < descriptors.size(); ++c) {
            const auto& d = descriptors[c];
            if (d.bus == net.slack_bus) continue;  // the slack balances the system
            if (d.kind == grid::MeasurementKind::P_inj)
                worst = std::max(worst, std::abs(frame.values[c] - spec.p[d.bus]));
            if (d.kind == grid::MeasurementKind::Q_inj)
                worst = std::max(worst, std::abs(frame.values[c] - spec.q[d.bus]));
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "measurement round trip: 100 snapshots, worst |h(x*) - load| = %.2e", worst);
    report(3, worst < 1e-8, buf);
}

void criterion_4_losses() {
    using ad::Tensor;
    bool ok = true;
    std::string detail = "closed-form losses: ";

    const double u1 = estimator::uwa_loss(Tensor::scalar(2.0), Tensor::scalar(4.0),
                                          Tensor::scalar(0.0), Tensor::scalar(0.0))
                          .item();
    if (std::abs(u1 - 3.0) > 1e-12) {
        ok = false;
        detail += "uwa(2,4;s=0) != 3; ";
    }
    const double u2 = estimator::uwa_loss(Tensor::scalar(1.0), Tensor::scalar(2.0),
                                          Tensor::scalar(std::log(0.5)),
                                          Tensor::scalar(std::log(2.0)))
                          .item();
    if (std::abs(u2 - 1.5) > 1e-12) {
        ok = false;
        detail += "uwa asymmetric case != 1.5; ";
    }

    estimator::TaskWeighting uwa_w{estimator::Scheme::uwa, 1.0, 1.0};
    estimator::TaskWeighting half{estimator::Scheme::uniform_scaling, 0.5, 0.5};
    const double a = estimator::combined_loss(uwa_w, Tensor::scalar(0.37), Tensor::scalar(1.21),
                                              Tensor::scalar(0.0), Tensor::scalar(0.0))
                         .item();
    const double b = estimator::combined_loss(half, Tensor::scalar(0.37), Tensor::scalar(1.21))
                         .item();
    if (a != b) {
        ok = false;
        detail += "uwa(s=0) != us(0.5,0.5); ";
    }

    if (harness::mae({1, 2}, {1, 2}) != 0.0 || harness::rmse({1, 2}, {1, 2}) != 0.0) ok = false;
    if (harness::mae({0, 0}, {1, -1}) != 1.0 || harness::rmse({0, 0}, {1, -1}) != 1.0) {
        ok = false;
        detail += "mae/rmse [1,-1] case; ";
    }
    if (harness::mae({0, 0}, {0, 2}) != 1.0 ||
        std::abs(harness::rmse({0, 0}, {0, 2}) - std::sqrt(2.0)) > 1e-15) {
        ok = false;
        detail += "mae/rmse [0,2] case; ";
    }

    RandomSource rng(123);
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        std::vector<double> y(16), yhat(16);
        for (int i = 0; i < 16; ++i) {
            y[i] = rng.gaussian(0, 3);
            yhat[i] = rng.gaussian(0, 3);
        }
        if (harness::mae(y, yhat) > harness::rmse(y, yhat) + 1e-15) {
            ok = false;
            detail += "MAE exceeded RMSE; ";
        }
    }
    report(4, ok, detail + (ok ? "uwa cases exact, MAE <= RMSE over 1000 draws" : ""));
}

harness::ExperimentConfig desk_config(const std::string& out_dir) {
    harness::ExperimentConfig cfg;
    cfg.feeder_name = "f15";
    cfg.buses = 15;
    cfg.feeder_seed = 7;
    cfg.sensor_fraction = 0.6;
    cfg.sensor_seed = 3;
    cfg.steps = 3000;
    cfg.profile_seed = 11;
    cfg.missing_ratios = {0.1, 0.2, 0.3, 0.4, 0.5};
    cfg.train_missing_ratio = 0.5;
    cfg.pipeline_ratio = 0.5;
    cfg.corrupt_seed = 5;
    cfg.lookback = 96;
    cfg.transformer_layers = 2;
    cfg.transformer_heads = 4;
    cfg.transformer_width = 64;
    cfg.prompt_length = 16;
    cfg.recurrent_hidden = 48;
    cfg.forecaster_lr = 1e-4;
    cfg.forecaster_epochs = 14;
    cfg.forecaster_batch = 4;
    cfg.forecaster_windows_per_epoch = 256;
    cfg.forecaster_eval_windows = 250;
    cfg.estimators = {"mlp", "proxlinear", "resnetd", "cnn_prox"};
    cfg.schemes = {"stl", "mix", "us", "uwa"};
    cfg.trunk_width = 96;
    cfg.trunk_blocks = 3;
    cfg.head_width = 64;
    cfg.estimator_center_only_targets = true;  // physical-scale state targets
    cfg.estimator_lr = 1e-3;
    cfg.estimator_epochs = 20;
    cfg.estimator_batch = 16;
    cfg.estimator_samples_per_epoch = 512;
    cfg.seeds = {1, 2, 3};
    cfg.out_dir = out_dir;
    return cfg;
}

void criteria_5_to_10(const std::string& work_dir) {
    const std::string desk_out = work_dir + "/desk";
    fs::remove_all(desk_out);
    harness::ExperimentConfig cfg = desk_config(desk_out);

    harness::ReproduceResult result;
    bool ran = true;
    std::string run_error;
    try {
        result = harness::reproduce_all(cfg);
    } catch (const std::exception& e) {
        ran = false;
        run_error = e.what();
    }
    if (!ran) {
        for (int c = 5; c <= 10; ++c) report(c, false, "benchmark sweep failed: " + run_error);
        return;
    }
    const harness::MetricsReport& rep = result.report;
    char buf[512];

    // 5: forecaster ordering at missing ratio 0.5, medians over 3 seeds
    {
        bool ok = true;
        double tr = 0, re = 0, pe = 0;
        try {
            tr = rep.median("forecast", "transformer", "forecast", 0.5, true);
            re = rep.median("forecast", "recurrent", "forecast", 0.5, true);
            pe = rep.median("forecast", "persistence", "forecast", 0.5, true);
        } catch (const std::exception&) {
            ok = false;
        }
        ok = ok && tr < re && re < pe && tr <= 0.8 * pe && result.times.forecaster_s < 600.0;
        std::snprintf(buf, sizeof(buf),
                      "forecaster ordering: RMSE transformer %.4g < recurrent %.4g < persistence "
                      "%.4g, transformer %.0f%% below persistence, stage %.0f s",
                      tr, re, pe, 100.0 * (1.0 - tr / pe), result.times.forecaster_s);
        report(5, ok, buf);
    }

    // 6: multi-task benefit for the conv estimator
    {
        bool ok = true;
        double uwa_a = 0, stl_a = 0, uwa_v = 0, stl_v = 0;
        try {
            uwa_a = rep.median("angle", "cnn_prox+uwa", "ideal", 0.0, false);
            stl_a = rep.median("angle", "cnn_prox+stl", "ideal", 0.0, false);
            uwa_v = rep.median("magnitude", "cnn_prox+uwa", "ideal", 0.0, false);
            stl_v = rep.median("magnitude", "cnn_prox+stl", "ideal", 0.0, false);
        } catch (const std::exception&) {
            ok = false;
        }
        ok = ok && uwa_a < stl_a && uwa_v <= 1.5 * stl_v && result.times.estimator_s < 600.0;
        std::snprintf(buf, sizeof(buf),
                      "multi-task benefit: angle MAE uwa %.4g < stl %.4g, magnitude uwa %.4g vs "
                      "stl %.4g (ratio %.2f <= 1.5), stage %.0f s",
                      uwa_a, stl_a, uwa_v, stl_v, uwa_v / stl_v, result.times.estimator_s);
        report(6, ok, buf);
    }

    // 7: forecast-then-estimate benefit at the pipeline ratio
    {
        bool ok = true;
        double tr_v = 0, tr_a = 0, real_v = 0, real_a = 0, per_a = 0;
        try {
            tr_v = rep.median("magnitude", "cnn_prox+uwa", "transformer-aided",
                              cfg.pipeline_ratio, false);
            tr_a = rep.median("angle", "cnn_prox+uwa", "transformer-aided", cfg.pipeline_ratio,
                              false);
            real_v = rep.median("magnitude", "cnn_prox+uwa", "real", cfg.pipeline_ratio, false);
            real_a = rep.median("angle", "cnn_prox+uwa", "real", cfg.pipeline_ratio, false);
            per_a = rep.median("angle", "cnn_prox+uwa", "persistence-aided", cfg.pipeline_ratio,
                               false);
        } catch (const std::exception&) {
            ok = false;
        }
        ok = ok && tr_v < real_v && tr_a < real_a && tr_a <= per_a;
        std::snprintf(buf, sizeof(buf),
                      "pipeline benefit: transformer-aided MAE (V %.4g, th %.4g) vs real "
                      "(V %.4g, th %.4g), persistence-aided angle %.4g",
                      tr_v, tr_a, real_v, real_a, per_a);
        report(7, ok, buf);
    }

    // 8: pipeline invariants
    {
        bool ok = result.ratio_zero_counters.forecaster_calls == 0 &&
                  result.pipeline_counters.pass_through_violations == 0 &&
                  result.ratio_zero_counters.pass_through_violations == 0;
        // ratio-0 rows: every aided source identical to ideal, all seeds
        for (const auto& row : rep.rows) {
            if (row.ratio != 0.0 || row.source != "transformer-aided") continue;
            for (const auto& other : rep.rows) {
                if (other.task == row.task && other.model == row.model &&
                    other.seed == row.seed && other.ratio == 0.0 && other.source == "ideal") {
                    if (other.mae != row.mae || other.rmse != row.rmse) ok = false;
                }
            }
        }
        std::snprintf(buf, sizeof(buf),
                      "pipeline invariants: ratio-0 forecaster calls %zu, pass-through violations "
                      "%zu, ratio-0 aided rows match ideal exactly",
                      result.ratio_zero_counters.forecaster_calls,
                      result.pipeline_counters.pass_through_violations);
        report(8, ok, buf);
    }

    // 9: byte-identical reruns of the sweep on a reduced configuration
    {
        harness::ExperimentConfig small = desk_config(work_dir + "/det_a");
        small.steps = 400;
        small.lookback = 24;
        small.missing_ratios = {0.5};
        small.forecaster_epochs = 2;
        small.forecaster_windows_per_epoch = 32;
        small.forecaster_eval_windows = 40;
        small.estimators = {"cnn_prox"};
        small.schemes = {"stl", "uwa"};
        small.estimator_epochs = 2;
        small.estimator_samples_per_epoch = 64;
        small.seeds = {1};
        fs::remove_all(work_dir + "/det_a");
        harness::reproduce_all(small);
        harness::ExperimentConfig again = small;
        again.out_dir = work_dir + "/det_b";
        fs::remove_all(work_dir + "/det_b");
        harness::reproduce_all(again);
        const std::string a = read_file(work_dir + "/det_a/report.csv");
        const std::string b = read_file(work_dir + "/det_b/report.csv");
        const bool ok = !a.empty() && a == b && small.hash() == again.hash();
        std::snprintf(buf, sizeof(buf),
                      "determinism: repeated reproduce-all emits byte-identical reports "
                      "(%zu bytes, config %016llx)",
                      a.size(), static_cast<unsigned long long>(small.hash()));
        report(9, ok, buf);
    }

    // 10: full sweep runtime budget
    {
        const bool ok = result.times.total_s < 1800.0;
        std::snprintf(buf, sizeof(buf),
                      "runtime: full benchmark sweep %.0f s (< 1800 s) [data %.0f, forecaster "
                      "%.0f, estimator %.0f, pipeline %.0f]",
                      result.times.total_s, result.times.data_s, result.times.forecaster_s,
                      result.times.estimator_s, result.times.pipeline_s);
        report(10, ok, buf);
    }
}

}  // namespace

int main() {
    const std::string work_dir =
        (fs::temp_directory_path() / "dsse_acceptance").string();
    fs::create_directories(work_dir);
    std::printf("acceptance work dir: %s\n", work_dir.c_str());

    criterion_1_autodiff();

    // shared 15-bus feeder and profile set for the physics criteria
    const grid::Network net = grid::generate_feeder(15, 7);
    const auto sensors = grid::place_sensors(net, 0.6, 3);
    const auto ds = data::synthesize_profiles(net, sensors, 3000, 11);
    criterion_2_power_flow(net, ds);
    criterion_3_measurement_round_trip(net);
    criterion_4_losses();

    criteria_5_to_10(work_dir);

    if (failures == 0) {
        std::printf("acceptance: all 10 criteria passed\n");
    } else {
        std::printf("acceptance: %d criterion(s) failed\n", failures);
    }
    return failures == 0 ? 0 : 1;
}
