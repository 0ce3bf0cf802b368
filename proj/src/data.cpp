#include "dsse/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace dsse::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_cell(const std::string& cell, const char* what, std::size_t row) {
    if (cell.empty() || cell == "NaN") return kNaN;
    double v = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw IoError(std::string(what) + ": unparseable cell '" + cell + "' in row " +
                      std::to_string(row));
    return v;
}

}  // namespace

void TimeSeriesDataset::validate() const {
    if (frames.size() != states.size())
        throw ValueError("dataset: frames and states length mismatch");
    for (const auto& f : frames) {
        if (f.values.size() != descriptors.size() || f.mask.size() != descriptors.size())
            throw ValueError("dataset: frame width does not match descriptor list");
    }
    if (!states.empty()) {
        const std::size_t n = states[0].size();
        for (const auto& s : states)
            if (s.size() != n) throw ValueError("dataset: ragged state vectors");
    }
}

NormalizationStats NormalizationStats::fit_frames(const TimeSeriesDataset& ds) {
    const std::size_t m = ds.channels();
    NormalizationStats stats;
    stats.mean.assign(m, 0.0);
    stats.std.assign(m, 1.0);
    stats.constant.assign(m, 0);
    for (std::size_t c = 0; c < m; ++c) {
        double sum = 0.0, sum2 = 0.0;
        std::size_t count = 0;
        for (const auto& f : ds.frames) {
            if (!f.mask[c]) continue;
            sum += f.values[c];
            sum2 += f.values[c] * f.values[c];
            ++count;
        }
        if (count == 0) {
            stats.constant[c] = 1;
            continue;
        }
        const double mu = sum / static_cast<double>(count);
        const double var = std::max(0.0, sum2 / static_cast<double>(count) - mu * mu);
        stats.mean[c] = mu;
        if (var < 1e-24) {
            stats.constant[c] = 1;
            std::cerr << "[dsse] warning: channel " << c << " is constant; std fixed to 1\n";
        } else {
            stats.std[c] = std::sqrt(var);
        }
    }
    return stats;
}

NormalizationStats NormalizationStats::fit_columns(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ValueError("fit_columns: no rows");
    const std::size_t m = rows[0].size();
    NormalizationStats stats;
    stats.mean.assign(m, 0.0);
    stats.std.assign(m, 1.0);
    stats.constant.assign(m, 0);
    for (std::size_t c = 0; c < m; ++c) {
        double sum = 0.0, sum2 = 0.0;
        for (const auto& r : rows) {
            sum += r[c];
            sum2 += r[c] * r[c];
        }
        const double mu = sum / static_cast<double>(rows.size());
        const double var = std::max(0.0, sum2 / static_cast<double>(rows.size()) - mu * mu);
        stats.mean[c] = mu;
        if (var < 1e-24) {
            stats.constant[c] = 1;
        } else {
            stats.std[c] = std::sqrt(var);
        }
    }
    return stats;
}

// --------------------------------------------------------------- synthesis

TimeSeriesDataset synthesize_profiles(const grid::Network& net,
                                      const std::vector<grid::MeasurementDescriptor>& descriptors,
                                      int steps, std::uint64_t seed, ProfileOptions opts) {
    if (steps < 1) throw ValueError("synthesize_profiles: steps must be >= 1");
    net.validate();
    const int n = net.bus_count;
    RandomSource master(seed);

    // static per-bus characteristics
    RandomSource bus_rng = master.fork(1);
    std::vector<double> base(n, 0.0), phase(n, 0.0), tan_phi(n, 0.0), pv_cap(n, 0.0);
    for (int b = 0; b < n; ++b) {
        if (b == net.slack_bus) continue;  // the feeder head carries no local load
        base[b] = bus_rng.uniform(opts.base_load_min, opts.base_load_max);
        phase[b] = bus_rng.uniform(-0.6, 0.6);
        tan_phi[b] = bus_rng.uniform(0.3, 0.5);
        if (bus_rng.uniform01() < opts.renewable_fraction)
            pv_cap[b] = base[b] * bus_rng.uniform(0.5, 1.2);
    }

    // per-bus AR(1) load and generation noise, one independent stream per bus
    std::vector<std::vector<double>> noise(n, std::vector<double>(steps, 0.0));
    std::vector<std::vector<double>> pv_jitter(n, std::vector<double>(steps, 0.0));
    for (int b = 0; b < n; ++b) {
        if (b == net.slack_bus) continue;
        RandomSource r = master.fork(1000 + static_cast<std::uint64_t>(b));
        const double innov = opts.load_noise * std::sqrt(1.0 - opts.load_noise_rho *
                                                                   opts.load_noise_rho);
        double state = 0.0;
        for (int t = 0; t < steps; ++t) {
            state = opts.load_noise_rho * state + r.gaussian(0.0, innov);
            noise[b][t] = std::clamp(state, -0.5, 0.5);
        }
        RandomSource rp = master.fork(3000 + static_cast<std::uint64_t>(b));
        double pstate = 0.0;
        for (int t = 0; t < steps; ++t) {
            pstate = 0.5 * pstate + rp.gaussian(0.0, opts.pv_noise * 0.866);
            pv_jitter[b][t] = std::clamp(pstate, -0.6, 0.6);
        }
    }

    auto daily = [](int t, double ph) {
        const double frac = static_cast<double>(t % kStepsPerDay) / kStepsPerDay;
        return 0.5 * (1.0 - std::cos(2.0 * M_PI * frac + ph));  // trough at midnight
    };
    auto weekly = [](int t) {
        const int day = (t / kStepsPerDay) % 7;
        return day < 5 ? 1.0 : 0.82;
    };
    auto pv_bell = [](int t) {
        const double hour = static_cast<double>(t % kStepsPerDay) / 4.0;
        if (hour < 6.0 || hour > 18.0) return 0.0;
        return std::sin(M_PI * (hour - 6.0) / 12.0);
    };

    TimeSeriesDataset ds;
    ds.descriptors = descriptors;
    ds.frames.reserve(steps);
    ds.states.reserve(steps);

    RandomSource meas_rng = master.fork(2);
    for (int t = 0; t < steps; ++t) {
        grid::InjectionSpec spec = grid::InjectionSpec::zeros(n);
        const int day = t / kStepsPerDay;
        for (int b = 0; b < n; ++b) {
            if (b == net.slack_bus) continue;
            const double load =
                base[b] * (0.45 + 0.55 * daily(t, phase[b])) * weekly(t) * (1.0 + noise[b][t]);
            double pv = 0.0;
            if (pv_cap[b] > 0.0) {
                RandomSource cloud = master.fork(500000 + static_cast<std::uint64_t>(b) * 4096 +
                                                 static_cast<std::uint64_t>(day));
                pv = pv_cap[b] * pv_bell(t) * (0.4 + 0.6 * cloud.uniform01()) *
                     (1.0 + pv_jitter[b][t]);
            }
            spec.p[b] = -load + pv;
            spec.q[b] = -load * tan_phi[b];
        }
        grid::PowerFlowResult pf;
        try {
            pf = grid::solve_power_flow(net, spec);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(
                "synthesize_profiles: power flow diverged at step " + std::to_string(t) + ": " +
                    e.what(),
                e.final_residual);
        }
        grid::MeasurementFrame frame = grid::measurement_function(net, pf.state, descriptors);
        if (opts.measurement_noise_rel > 0.0) {
            for (double& v : frame.values)
                v += opts.measurement_noise_rel * std::abs(v) * meas_rng.gaussian();
        }
        ds.frames.push_back(std::move(frame));
        ds.states.push_back(pf.state);
    }
    return ds;
}

// -------------------------------------------------------------- corruption

TimeSeriesDataset corrupt_missing(const TimeSeriesDataset& ds, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw ValueError("corrupt_missing: ratio must be in [0, 1]");
    TimeSeriesDataset out = ds;
    const std::size_t total = ds.steps() * ds.channels();
    const std::size_t k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
    if (k == 0) return out;
    RandomSource rng = RandomSource(seed).fork(0x636f727275707401ull);
    const auto hits = rng.sample_indices(total, k);
    const std::size_t m = ds.channels();
    for (std::size_t cell : hits) {
        const std::size_t t = cell / m;
        const std::size_t c = cell % m;
        out.frames[t].values[c] = kNaN;
        out.frames[t].mask[c] = 0;
    }
    return out;
}

TimeSeriesDataset corrupt_missing_bursts(const TimeSeriesDataset& ds, double ratio,
                                         double mean_run_length, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw ValueError("corrupt_missing_bursts: ratio outside [0, 1]");
    if (mean_run_length < 1.0) throw ValueError("corrupt_missing_bursts: mean run length < 1");
    TimeSeriesDataset out = ds;
    const std::size_t steps = ds.steps();
    const std::size_t per_channel =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(steps)));
    if (per_channel == 0) return out;
    const double p_stop = 1.0 / mean_run_length;
    RandomSource base = RandomSource(seed).fork(0x6275727374730001ull);
    for (std::size_t c = 0; c < ds.channels(); ++c) {
        RandomSource rng = base.fork(c);
        std::size_t masked = 0;
        while (masked < per_channel) {
            const std::size_t start = static_cast<std::size_t>(rng.below(steps));
            std::size_t len = 1;
            while (rng.uniform01() > p_stop) ++len;
            for (std::size_t t = start; t < std::min(start + len, steps) && masked < per_channel;
                 ++t) {
                if (!out.frames[t].mask[c]) continue;  // runs may overlap
                out.frames[t].values[c] = kNaN;
                out.frames[t].mask[c] = 0;
                ++masked;
            }
        }
    }
    return out;
}

std::vector<int> make_windows(const TimeSeriesDataset& ds, const WindowSpec& spec) {
    if (spec.lookback < 1) throw ValueError("make_windows: lookback must be >= 1");
    if (spec.stride < 1) throw ValueError("make_windows: stride must be >= 1");
    if (ds.steps() < static_cast<std::size_t>(spec.lookback))
        throw ValueError("make_windows: series shorter than the lookback window");
    std::vector<int> targets;
    for (int t = spec.lookback - 1; t < static_cast<int>(ds.steps()); t += spec.stride)
        targets.push_back(t);
    return targets;
}

Splits split(const TimeSeriesDataset& ds, const SplitSpec& spec, int min_segment) {
    if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw ValueError("split: fractions must be nonnegative and sum to 1");
    const std::size_t total = ds.steps();
    const std::size_t n_train = static_cast<std::size_t>(std::llround(spec.train * total));
    const std::size_t n_train_val = static_cast<std::size_t>(std::llround((spec.train + spec.val) * total));
    auto slice = [&](std::size_t lo, std::size_t hi) {
        TimeSeriesDataset part;
        part.descriptors = ds.descriptors;
        part.frames.assign(ds.frames.begin() + lo, ds.frames.begin() + hi);
        part.states.assign(ds.states.begin() + lo, ds.states.begin() + hi);
        return part;
    };
    Splits out{slice(0, n_train), slice(n_train, n_train_val), slice(n_train_val, total)};
    auto enforce = [&](double fraction, const TimeSeriesDataset& part, const char* name) {
        if (fraction > 0 && static_cast<int>(part.steps()) < min_segment)
            throw ValueError(std::string("split: ") + name + " segment shorter than the window (" +
                             std::to_string(part.steps()) + " < " + std::to_string(min_segment) +
                             " steps)");
    };
    enforce(spec.train, out.train, "train");
    enforce(spec.val, out.val, "val");
    enforce(spec.test, out.test, "test");
    return out;
}

// ------------------------------------------------------------ normalization

TimeSeriesDataset normalize(const TimeSeriesDataset& ds, const NormalizationStats& stats) {
    if (stats.channels() != ds.channels()) throw ShapeError("normalize: channel count mismatch");
    TimeSeriesDataset out = ds;
    for (auto& f : out.frames)
        for (std::size_t c = 0; c < f.values.size(); ++c)
            if (f.mask[c]) f.values[c] = stats.to_norm(c, f.values[c]);
    return out;
}

TimeSeriesDataset denormalize(const TimeSeriesDataset& ds, const NormalizationStats& stats) {
    if (stats.channels() != ds.channels()) throw ShapeError("denormalize: channel count mismatch");
    TimeSeriesDataset out = ds;
    for (auto& f : out.frames)
        for (std::size_t c = 0; c < f.values.size(); ++c)
            if (f.mask[c]) f.values[c] = stats.to_raw(c, f.values[c]);
    return out;
}

// ---------------------------------------------------------------------- CSV

void export_csv(const TimeSeriesDataset& ds, const std::string& measurements_path,
                const std::string& states_path, const std::string& descriptor_path) {
    grid::descriptors_to_file(ds.descriptors, descriptor_path);

    std::ofstream ms(measurements_path);
    if (!ms) throw IoError("export_csv: cannot write " + measurements_path);
    for (std::size_t c = 0; c < ds.descriptors.size(); ++c)
        ms << (c ? "," : "") << ds.descriptors[c].id();
    ms << "\n";
    char buf[64];
    for (const auto& f : ds.frames) {
        for (std::size_t c = 0; c < f.values.size(); ++c) {
            if (c) ms << ",";
            if (!f.mask[c]) {
                ms << "NaN";
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", f.values[c]);
                ms << buf;
            }
        }
        ms << "\n";
    }

    std::ofstream ss(states_path);
    if (!ss) throw IoError("export_csv: cannot write " + states_path);
    const int n = ds.bus_count();
    for (int i = 0; i < n; ++i) ss << (i ? "," : "") << "V_" << i;
    for (int i = 0; i < n; ++i) ss << ",theta_" << i;
    ss << "\n";
    for (const auto& s : ds.states) {
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", s.v[i]);
            ss << (i ? "," : "") << buf;
        }
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", s.theta[i]);
            ss << "," << buf;
        }
        ss << "\n";
    }
}

TimeSeriesDataset ingest_csv(const std::string& measurements_path, const std::string& states_path,
                             const std::string& descriptor_path) {
    TimeSeriesDataset ds;
    ds.descriptors = grid::descriptors_from_file(descriptor_path);
    const std::size_t m = ds.descriptors.size();

    std::ifstream ms(measurements_path);
    if (!ms) throw IoError("ingest_csv: cannot open " + measurements_path);
    std::string line;
    if (!std::getline(ms, line)) throw IoError("ingest_csv: empty measurement file");
    if (split_csv_row(line).size() != m)
        throw IoError("ingest_csv: measurement column count does not match descriptor list");
    std::size_t row = 1;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_row(line);
        if (cells.size() != m)
            throw IoError("ingest_csv: ragged measurement row " + std::to_string(row));
        grid::MeasurementFrame f;
        f.values.reserve(m);
        f.mask.reserve(m);
        for (const auto& cell : cells) {
            const double v = parse_cell(cell, "ingest_csv", row);
            f.values.push_back(v);
            f.mask.push_back(std::isnan(v) ? 0 : 1);
        }
        ds.frames.push_back(std::move(f));
        ++row;
    }

    std::ifstream ss(states_path);
    if (!ss) throw IoError("ingest_csv: cannot open " + states_path);
    if (!std::getline(ss, line)) throw IoError("ingest_csv: empty state file");
    const std::size_t state_cols = split_csv_row(line).size();
    if (state_cols % 2 != 0) throw IoError("ingest_csv: state file needs V and theta column pairs");
    const std::size_t n = state_cols / 2;
    row = 1;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_row(line);
        if (cells.size() != state_cols)
            throw IoError("ingest_csv: ragged state row " + std::to_string(row));
        grid::StateVector s;
        for (std::size_t i = 0; i < n; ++i)
            s.v.push_back(parse_cell(cells[i], "ingest_csv states", row));
        for (std::size_t i = 0; i < n; ++i)
            s.theta.push_back(parse_cell(cells[n + i], "ingest_csv states", row));
        ds.states.push_back(std::move(s));
        ++row;
    }
    ds.validate();
    return ds;
}

}  // namespace dsse::data
