#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsse/data.hpp"
#include "dsse/tensor.hpp"

namespace dsse::estimator {

using ad::NamedParams;
using ad::Tensor;

enum class Architecture { mlp, proxlinear, resnetd, cnn_prox };
enum class Scheme { stl, mix, uniform_scaling, uwa };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);
std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

struct EstimatorConfig {
    Architecture arch = Architecture::cnn_prox;
    int trunk_width = 96;
    int trunk_blocks = 3;
    int head_width = 64;
    int conv_channels = 8;   // cnn_prox only
    int conv_kernel = 3;     // cnn_prox only
};

// Loss combination policy. For uwa the trainable log-variances live in
// TrainedEstimator; lambda weights apply to uniform_scaling.
struct TaskWeighting {
    Scheme scheme = Scheme::uwa;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
};

// One unrolled solver-style iteration: activation(state*W_u + z*W_z + b).
// The measurement z re-enters at every depth.
Tensor proxlinear_block(const Tensor& state, const Tensor& z, const Tensor& w_state,
                        const Tensor& w_meas, const Tensor& bias);

// exp(-s1)/2 * L1 + exp(-s2)/2 * L2 + (s1 + s2)/2 with s_i = log sigma_i^2;
// differentiable in every argument and positive-variance by construction.
Tensor uwa_loss(const Tensor& l1, const Tensor& l2, const Tensor& s1, const Tensor& s2);

// stl / mix take a single already-formed task loss in `l1` (passing `l2` is an
// error); uniform_scaling forms lambda1*L1 + lambda2*L2; uwa defers to
// uwa_loss with the provided log-variance tensors.
Tensor combined_loss(const TaskWeighting& weighting, const Tensor& l1, const Tensor& l2 = {},
                     const Tensor& s1 = {}, const Tensor& s2 = {});

// Which outputs a single network instance produces.
enum class TaskRole { both, magnitude, angle, mixed };

struct Outputs {
    Tensor v;      // [1 x n] normalized, defined for roles both/magnitude
    Tensor theta;  // [1 x n] normalized, defined for roles both/angle
    Tensor mixed;  // [1 x 2n], defined for role mixed
};

// Shared trunk (mlp / proxlinear / resnetd / conv + proxlinear) with
// task-specific heads.
class EstimatorModel {
public:
    EstimatorModel(EstimatorConfig cfg, TaskRole role, int channels, int buses,
                   std::uint64_t seed, std::string prefix);

    // values/mask: [1 x m] normalized zero-filled values and mask bits.
    Outputs forward(const Tensor& values, const Tensor& mask) const;
    // Per-block trunk activations, for sensitivity checks.
    std::vector<Tensor> trunk_trace(const Tensor& values, const Tensor& mask) const;

    NamedParams parameters() const;
    const EstimatorConfig& config() const { return cfg_; }
    TaskRole role() const { return role_; }
    int buses() const { return buses_; }
    int channels() const { return channels_; }

private:
    Tensor trunk(const Tensor& values, const Tensor& mask, std::vector<Tensor>* trace) const;

    EstimatorConfig cfg_;
    TaskRole role_;
    int channels_ = 0;
    int buses_ = 0;
    std::string prefix_;

    Tensor conv_kernel_;                    // cnn_prox
    Tensor in_w_, in_b_;                    // mlp first layer / resnetd projection
    struct TrunkBlock {
        Tensor w_state, w_meas, bias;       // proxlinear
        Tensor w1, b1, w2, b2;              // resnetd / mlp hidden
    };
    std::vector<TrunkBlock> blocks_;
    struct Head {
        Tensor w1, b1, w2, b2;
    };
    Head head_v_, head_t_, head_mixed_;
};

// Per-bus state normalization fitted on the training split.
struct StateScaler {
    data::NormalizationStats v_stats;
    data::NormalizationStats theta_stats;
    // center_only keeps targets on their physical scale (mean removed, std 1),
    // preserving the natural imbalance between the two tasks.
    static StateScaler fit(const data::TimeSeriesDataset& train, bool center_only = false);
};

// Dense per-timestep training rows.
struct EstimatorDataset {
    std::vector<std::vector<double>> inputs;        // m, normalized, zero-filled
    std::vector<std::vector<double>> masks;         // m, 1.0 observed / 0.0 missing
    std::vector<std::vector<double>> v_targets;     // n, normalized
    std::vector<std::vector<double>> theta_targets; // n, normalized
    int slack_bus = 0;

    std::size_t size() const { return inputs.size(); }
    static EstimatorDataset build(const data::TimeSeriesDataset& ds,
                                  const data::NormalizationStats& meas_stats,
                                  const StateScaler& scaler, int slack_bus);
};

struct EstimationResult {
    std::vector<double> v;      // pu
    std::vector<double> theta;  // radians, slack entry fixed at 0
    double sigma1 = 0.0;        // populated for uwa
    double sigma2 = 0.0;
};

// A trained estimator under one weighting scheme (two separate networks for
// stl, one shared network otherwise).
struct TrainedEstimator {
    Scheme scheme = Scheme::uwa;
    EstimatorConfig config;
    std::shared_ptr<EstimatorModel> joint;  // both / mixed roles
    std::shared_ptr<EstimatorModel> mag;    // stl
    std::shared_ptr<EstimatorModel> ang;    // stl
    Tensor s1, s2;                          // uwa log-variances
    data::NormalizationStats meas_stats;
    StateScaler state_scaler;
    int slack_bus = 0;
    int bus_count = 0;

    EstimationResult estimate(const grid::MeasurementFrame& raw_frame) const;
    NamedParams parameters() const;  // includes s1/s2 under uwa
};

struct EstimatorTrainConfig {
    double learning_rate = 1e-3;
    int epochs = 40;
    int batch = 16;
    int max_samples_per_epoch = 0;  // 0 = all
    double huber_delta = 1.0;
    std::uint64_t seed = 1;
};

struct EstimatorHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> s1_track;  // uwa only, one entry per epoch
    std::vector<double> s2_track;
    int best_epoch = -1;
    bool diverged = false;
};

// Huber task losses combined per the scheme; validation-best parameters are
// restored on return. The slack-bus angle is excluded from the angle loss.
TrainedEstimator train_estimator(const EstimatorConfig& cfg, const TaskWeighting& weighting,
                                 const EstimatorDataset& train, const EstimatorDataset& val,
                                 const data::NormalizationStats& meas_stats,
                                 const StateScaler& scaler, int bus_count,
                                 const EstimatorTrainConfig& tc, EstimatorHistory* history_out);

void export_sigma_csv(const EstimatorHistory& history, const std::string& path);

void save_estimator(const TrainedEstimator& est, const std::string& prefix);
TrainedEstimator load_estimator(const std::string& prefix);

}  // namespace dsse::estimator
