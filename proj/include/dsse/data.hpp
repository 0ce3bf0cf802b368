#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsse/grid.hpp"

namespace dsse::data {

// Uniform 15-minute resolution throughout.
constexpr int kStepsPerDay = 96;
constexpr int kStepsPerWeek = 7 * kStepsPerDay;

// Aligned measurement frames and true states; the timestamp of row t is
// t * 15 minutes from a Monday-midnight origin.
struct TimeSeriesDataset {
    std::vector<grid::MeasurementDescriptor> descriptors;
    std::vector<grid::MeasurementFrame> frames;
    std::vector<grid::StateVector> states;

    std::size_t steps() const { return frames.size(); }
    std::size_t channels() const { return descriptors.size(); }
    int bus_count() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }
    void validate() const;
};

struct WindowSpec {
    int lookback = kStepsPerDay;
    int stride = 1;
};

struct SplitSpec {
    double train = 0.5;
    double val = 0.1;
    double test = 0.4;
};

struct Splits {
    TimeSeriesDataset train, val, test;
};

// Per-channel training-split statistics. Constant channels fall back to
// std = 1 and are flagged.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<std::uint8_t> constant;

    std::size_t channels() const { return mean.size(); }
    double to_norm(std::size_t c, double v) const { return (v - mean[c]) / std[c]; }
    double to_raw(std::size_t c, double v) const { return v * std[c] + mean[c]; }

    // Observed (masked-in) cells only.
    static NormalizationStats fit_frames(const TimeSeriesDataset& ds);
    // Column-wise over dense rows (used for state targets).
    static NormalizationStats fit_columns(const std::vector<std::vector<double>>& rows);
};

struct ProfileOptions {
    double base_load_min = 0.008;  // pu
    double base_load_max = 0.030;
    double renewable_fraction = 0.4;  // share of non-slack buses with generation
    double load_noise = 0.20;         // relative AR(1) noise on the load shape
    double load_noise_rho = 0.15;      // AR(1) autocorrelation of that noise
    double pv_noise = 0.25;           // relative intra-day AR(1) noise on generation
    double measurement_noise_rel = 0.0;  // additive sensor noise; off by default
};

// Seeded synthetic load/generation profiles solved through the power flow at
// every step. Throws ConvergenceError annotated with the failing step index.
TimeSeriesDataset synthesize_profiles(const grid::Network& net,
                                      const std::vector<grid::MeasurementDescriptor>& descriptors,
                                      int steps, std::uint64_t seed, ProfileOptions opts = {});

// Masks exactly llround(ratio * steps * channels) cells, uniformly without
// replacement. Masked cells carry NaN; observed cells are untouched bits.
TimeSeriesDataset corrupt_missing(const TimeSeriesDataset& ds, double ratio, std::uint64_t seed);

// Same overall budget, but per channel and in contiguous runs with the given
// mean length (for outage-style gaps rather than isolated cells).
TimeSeriesDataset corrupt_missing_bursts(const TimeSeriesDataset& ds, double ratio,
                                         double mean_run_length, std::uint64_t seed);

// Target step indices t for windows [t-lookback+1 .. t]; count is
// steps - lookback + 1 for stride 1.
std::vector<int> make_windows(const TimeSeriesDataset& ds, const WindowSpec& spec);

// Contiguous chronological segments train -> val -> test. Segments with a
// nonzero fraction must hold at least min_segment steps.
Splits split(const TimeSeriesDataset& ds, const SplitSpec& spec, int min_segment = 0);

TimeSeriesDataset normalize(const TimeSeriesDataset& ds, const NormalizationStats& stats);
TimeSeriesDataset denormalize(const TimeSeriesDataset& ds, const NormalizationStats& stats);

// CSV time series: header of descriptor ids, one row per step, missing cells
// as the literal NaN. State CSV columns are V_0..V_{n-1},theta_0..theta_{n-1}.
void export_csv(const TimeSeriesDataset& ds, const std::string& measurements_path,
                const std::string& states_path, const std::string& descriptor_path);
TimeSeriesDataset ingest_csv(const std::string& measurements_path, const std::string& states_path,
                             const std::string& descriptor_path);

}  // namespace dsse::data
