#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dsse/data.hpp"
#include "dsse/estimator.hpp"
#include "dsse/forecaster.hpp"
#include "dsse/grid.hpp"

namespace dsse::harness {

// Everything a run needs, loadable from one JSON file. CLI flags override
// file values; file values override the defaults below.
struct ExperimentConfig {
    // dataset
    std::string network_path;  // load a network file instead of generating
    std::string feeder_name = "f15";
    int buses = 15;
    std::uint64_t feeder_seed = 7;
    double sensor_fraction = 0.6;
    std::uint64_t sensor_seed = 3;
    int steps = 3000;
    std::uint64_t profile_seed = 11;
    double measurement_noise_rel = 0.0;

    // corruption / windowing / split
    std::vector<double> missing_ratios = {0.1, 0.2, 0.3, 0.4, 0.5};
    double train_missing_ratio = 0.5;  // forecasters train against this ratio
    double pipeline_ratio = 0.5;       // data-source comparison tables use this
    std::uint64_t corrupt_seed = 5;
    int lookback = 96;
    data::SplitSpec split{0.5, 0.1, 0.4};

    // forecasters
    std::vector<std::string> forecasters = {"persistence", "recurrent", "transformer"};
    int transformer_layers = 2;
    int transformer_heads = 4;
    int transformer_width = 48;
    int transformer_ff = 0;  // 0 = 4x width
    int prompt_length = 16;
    bool frozen_body = false;
    int recurrent_hidden = 48;
    double forecaster_lr = 1e-4;
    int forecaster_epochs = 15;
    int forecaster_batch = 8;
    int forecaster_windows_per_epoch = 256;
    int forecaster_eval_windows = 400;  // per-ratio evaluation subsample (0 = all)

    // estimators
    std::vector<std::string> estimators = {"mlp", "proxlinear", "resnetd", "cnn_prox"};
    std::vector<std::string> schemes = {"stl", "mix", "us", "uwa"};
    int trunk_width = 96;
    int trunk_blocks = 3;
    int head_width = 64;
    int conv_channels = 8;
    int conv_kernel = 3;
    int estimator_train_steps = 0;  // cap on training timesteps (0 = full split)
    bool estimator_center_only_targets = true;  // keep state targets on physical scale
    double estimator_lr = 1e-3;
    int estimator_epochs = 30;
    int estimator_batch = 16;
    int estimator_samples_per_epoch = 0;  // 0 = all

    // run
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "out";

    static ExperimentConfig from_file(const std::string& path);
    std::string canonical_json() const;  // out_dir excluded
    std::uint64_t hash() const;          // FNV-1a of canonical_json()
    void validate() const;
};

// ---------------------------------------------------------------------------
// Metrics

double mae(const std::vector<double>& truth, const std::vector<double>& predicted);
double rmse(const std::vector<double>& truth, const std::vector<double>& predicted);

struct MetricsRow {
    std::string task;    // "magnitude" / "angle" / "forecast"
    std::string model;   // estimator "arch+scheme" or forecaster variant
    std::string source;  // "ideal", "real", "<variant>-aided", "forecast"
    double ratio = 0.0;
    std::uint64_t seed = 0;
    double mae = 0.0;
    double rmse = 0.0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    void to_csv(const std::string& path) const;  // deterministic bytes
    static MetricsReport from_csv(const std::string& path);

    // Median across seeds of one metric for matching rows; throws if none.
    double median(const std::string& task, const std::string& model, const std::string& source,
                  double ratio, bool use_rmse) const;
    bool empty() const { return rows.empty(); }
};

// ---------------------------------------------------------------------------
// Pipeline evaluation

struct PipelineCounters {
    std::size_t steps = 0;
    std::size_t forecaster_calls = 0;  // imputation invocations per forecaster
    std::size_t direct_calls = 0;      // complete frames handed straight to the estimator
    std::size_t pass_through_violations = 0;  // observed cells changed by imputation
};

struct PipelineArtifacts {
    std::map<std::string, forecast::ForecastModel> forecasters;       // by variant name
    std::map<std::string, estimator::TrainedEstimator> estimators;    // by arch name
};

// Walks the test split once per data source: ideal, real (zero-filled), and
// one "<variant>-aided" source per forecaster, estimating states with every
// supplied estimator. Emits one row per (task, estimator, source).
void run_pipeline_eval(MetricsReport& report, const data::TimeSeriesDataset& clean_test,
                       const data::TimeSeriesDataset& corrupted_test,
                       const forecast::ForecastSeries& test_fs, const PipelineArtifacts& artifacts,
                       double ratio, std::uint64_t seed, const std::string& estimator_scheme_tag,
                       PipelineCounters* counters = nullptr);

// One file per table analog (CSV plus aligned text), medians across seeds.
void emit_tables(const MetricsReport& report, const ExperimentConfig& cfg,
                 const std::string& out_dir);

// ---------------------------------------------------------------------------
// Full driver

struct StageTimes {
    double data_s = 0.0;
    double forecaster_s = 0.0;
    double estimator_s = 0.0;
    double pipeline_s = 0.0;
    double total_s = 0.0;
};

struct ReproduceResult {
    MetricsReport report;
    StageTimes times;
    std::string out_dir;
    std::uint64_t config_hash = 0;
    PipelineCounters ratio_zero_counters;    // pipeline run at ratio 0
    PipelineCounters pipeline_counters;      // pipeline run at pipeline_ratio
    bool impute_pass_through_ok = true;      // observed cells bit-exact after imputation
};

// generate -> corrupt -> train forecasters -> train estimators -> evaluate,
// writing checkpoints, histories, report.csv, tables and a manifest.
ReproduceResult reproduce_all(const ExperimentConfig& cfg);

// Individual stages used by the CLI subcommands.
void run_generate(const ExperimentConfig& cfg);
void run_corrupt(const ExperimentConfig& cfg, double ratio, std::uint64_t seed);

}  // namespace dsse::harness
