#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dsse/harness.hpp"
#include "dsse/random.hpp"

using namespace dsse;
using namespace dsse::harness;

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

ExperimentConfig smoke_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.feeder_name = "smoke5";
    cfg.buses = 5;
    cfg.sensor_fraction = 0.8;
    cfg.steps = 300;
    cfg.missing_ratios = {0.2, 0.5};
    cfg.pipeline_ratio = 0.5;
    cfg.lookback = 12;
    cfg.transformer_layers = 1;
    cfg.transformer_heads = 2;
    cfg.transformer_width = 16;
    cfg.prompt_length = 12;
    cfg.recurrent_hidden = 12;
    cfg.forecaster_epochs = 2;
    cfg.forecaster_windows_per_epoch = 32;
    cfg.forecaster_eval_windows = 40;
    cfg.estimators = {"mlp", "cnn_prox"};
    cfg.schemes = {"stl", "uwa"};
    cfg.trunk_width = 24;
    cfg.trunk_blocks = 2;
    cfg.head_width = 16;
    cfg.conv_channels = 4;
    cfg.estimator_epochs = 2;
    cfg.estimator_batch = 8;
    cfg.seeds = {1};
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("mae and rmse") {
    CHECK(mae({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);

    CHECK(mae({0, 0}, {1, -1}) == 1.0);
    CHECK(rmse({0, 0}, {1, -1}) == 1.0);

    CHECK(mae({0, 0}, {0, 2}) == 1.0);
    CHECK(rmse({0, 0}, {0, 2}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

    CHECK_THROWS_AS(mae({}, {}), ValueError);
    CHECK_THROWS_AS(rmse({1}, {1, 2}), ValueError);

    // MAE <= RMSE always
    RandomSource rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> y(20), yhat(20);
        for (int i = 0; i < 20; ++i) {
            y[i] = rng.gaussian(0, 2);
            yhat[i] = rng.gaussian(0, 2);
        }
        CHECK(mae(y, yhat) <= rmse(y, yhat) + 1e-15);
    }
}

TEST_CASE("config file round trip and hashing") {
    const std::string path = (fs::temp_directory_path() / "dsse_cfg_test.json").string();
    {
        std::ofstream os(path);
        os << R"({"buses": 9, "steps": 500, "lookback": 24,
                  "split": {"train": 0.6, "val": 0.2, "test": 0.2},
                  "seeds": [4, 5], "missing_ratios": [0.1, 0.3]})";
    }
    ExperimentConfig cfg = ExperimentConfig::from_file(path);
    CHECK(cfg.buses == 9);
    CHECK(cfg.steps == 500);
    CHECK(cfg.lookback == 24);
    CHECK(cfg.split.val == 0.2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(cfg.transformer_heads == 4);  // default survives

    ExperimentConfig cfg2 = ExperimentConfig::from_file(path);
    CHECK(cfg.hash() == cfg2.hash());
    cfg2.steps = 501;
    CHECK(cfg.hash() != cfg2.hash());
    cfg2.steps = 500;
    cfg2.out_dir = "elsewhere";  // output location is not part of the identity
    CHECK(cfg.hash() == cfg2.hash());
    fs::remove(path);

    ExperimentConfig bad;
    bad.missing_ratios = {1.5};
    CHECK_THROWS_AS(bad.validate(), ValueError);
    ExperimentConfig bad2;
    bad2.estimators = {"what"};
    CHECK_THROWS_AS(bad2.validate(), ValueError);

    CHECK_THROWS_AS(ExperimentConfig::from_file("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("metrics report csv and medians") {
    MetricsReport report;
    report.rows.push_back({"angle", "cnn_prox+uwa", "ideal", 0.0, 1, 0.3, 0.4});
    report.rows.push_back({"angle", "cnn_prox+uwa", "ideal", 0.0, 2, 0.1, 0.2});
    report.rows.push_back({"angle", "cnn_prox+uwa", "ideal", 0.0, 3, 0.2, 0.25});

    CHECK(report.median("angle", "cnn_prox+uwa", "ideal", 0.0, false) == 0.2);
    CHECK(report.median("angle", "cnn_prox+uwa", "ideal", 0.0, true) == 0.25);
    CHECK_THROWS_AS(report.median("angle", "nope", "ideal", 0.0, false), ValueError);

    const std::string path = (fs::temp_directory_path() / "dsse_report_test.csv").string();
    report.to_csv(path);
    MetricsReport back = MetricsReport::from_csv(path);
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[1].mae == 0.1);
    CHECK(back.rows[2].seed == 3);
    fs::remove(path);
}

TEST_CASE("emit_tables rejects an empty report") {
    MetricsReport empty;
    ExperimentConfig cfg;
    CHECK_THROWS_AS(emit_tables(empty, cfg, (fs::temp_directory_path() / "t").string()),
                    ValueError);
}

TEST_CASE("smoke reproduce-all") {
    const std::string out1 = (fs::temp_directory_path() / "dsse_smoke_a").string();
    fs::remove_all(out1);
    ExperimentConfig cfg = smoke_config(out1);

    ReproduceResult result = reproduce_all(cfg);
    REQUIRE_FALSE(result.report.empty());

    SUBCASE("artifacts exist") {
        CHECK(fs::exists(out1 + "/report.csv"));
        CHECK(fs::exists(out1 + "/manifest.json"));
        CHECK(fs::exists(out1 + "/network.txt"));
        CHECK(fs::exists(out1 + "/dataset/measurements.csv"));
        CHECK(fs::exists(out1 + "/seed1/forecaster_transformer.ckpt"));
        CHECK(fs::exists(out1 + "/seed1/estimator_cnn_prox_uwa.ckpt"));
        CHECK(fs::exists(out1 + "/seed1/sigma_cnn_prox.csv"));
        CHECK(fs::exists(out1 + "/tables/table_forecasting.csv"));
        CHECK(fs::exists(out1 + "/tables/table_datasource_angle.txt"));
    }

    SUBCASE("row coverage: every source and task at the pipeline ratio") {
        for (const std::string task : {"magnitude", "angle"})
            for (const std::string source :
                 {"real", "persistence-aided", "recurrent-aided", "transformer-aided"}) {
                CHECK_NOTHROW(result.report.median(task, "cnn_prox+uwa", source,
                                                   cfg.pipeline_ratio, false));
            }
        CHECK_NOTHROW(result.report.median("magnitude", "cnn_prox+uwa", "ideal", 0.0, false));
        CHECK_NOTHROW(result.report.median("forecast", "transformer", "forecast", 0.5, true));
    }

    SUBCASE("ratio-0 pipeline never invokes the forecaster and matches ideal") {
        CHECK(result.ratio_zero_counters.forecaster_calls == 0);
        CHECK(result.ratio_zero_counters.direct_calls == result.ratio_zero_counters.steps);
        for (const std::string task : {"magnitude", "angle"}) {
            const double aided = result.report.median(task, "cnn_prox+uwa", "transformer-aided",
                                                      0.0, false);
            const double ideal = result.report.median(task, "cnn_prox+uwa", "ideal", 0.0, false);
            CHECK(aided == ideal);  // bit-identical branch
        }
    }

    SUBCASE("pass-through holds at the pipeline ratio") {
        CHECK(result.pipeline_counters.pass_through_violations == 0);
        CHECK(result.impute_pass_through_ok);
        CHECK(result.pipeline_counters.forecaster_calls > 0);
    }

    SUBCASE("MAE never exceeds RMSE in any row") {
        for (const MetricsRow& row : result.report.rows) {
            CHECK(row.mae <= row.rmse + 1e-15);
            CHECK(std::isfinite(row.mae));
        }
    }

    SUBCASE("reruns are bit-identical") {
        const std::string out2 = (fs::temp_directory_path() / "dsse_smoke_b").string();
        fs::remove_all(out2);
        ExperimentConfig cfg2 = smoke_config(out2);
        ReproduceResult r2 = reproduce_all(cfg2);
        CHECK(read_file(out1 + "/report.csv") == read_file(out2 + "/report.csv"));
        CHECK(read_file(out1 + "/tables/table_forecasting.csv") ==
              read_file(out2 + "/tables/table_forecasting.csv"));
        CHECK(read_file(out1 + "/tables/table_datasource_angle.csv") ==
              read_file(out2 + "/tables/table_datasource_angle.csv"));
        fs::remove_all(out2);
    }

    fs::remove_all(out1);
}
