#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsse/data.hpp"
#include "dsse/tensor.hpp"

namespace dsse::forecast {

using ad::NamedParams;
using ad::Tensor;

// ---------------------------------------------------------------------------
// Model configuration

struct EmbeddingConfig {
    int width = 64;      // embedding dimension D
    int seq_len = 96;    // measurement rows L_s (= window lookback)
    int prompt_len = 0;  // prompt rows L_p; 0 disables the prompt path
    int out_len = 0;     // forecast channels L_o (= m)
};

struct TransformerConfig {
    int layers = 2;
    int heads = 4;
    int ff_width = 0;         // 0 means 4 * width
    bool frozen_body = false; // train only layer norms, embeddings, output head
};

// ---------------------------------------------------------------------------
// Prompt: a word-level template rendered per window. Static slots describe the
// feeder and its measurement mix; the day-of-week and hour slots follow the
// window's target timestep. The vocabulary is closed over the template words
// and every slot's domain.

struct PromptTemplate {
    std::string feeder_name = "feeder";
    int length = 0;  // L_p after deterministic pad/truncation
};

class PromptCodec {
public:
    PromptCodec() = default;  // length 0: prompt disabled
    PromptCodec(PromptTemplate tpl, const data::TimeSeriesDataset& clean_train);

    int length() const { return tpl_.length; }
    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const PromptTemplate& rendered_template() const { return tpl_; }

    std::vector<std::string> render(int absolute_step) const;
    std::vector<int> encode(int absolute_step) const;  // rendered + padded token ids
    int token_id(const std::string& word) const;       // throws on out-of-vocabulary

    const std::vector<std::string>& vocabulary() const { return vocab_; }
    // Rebuild from persisted pieces.
    static PromptCodec restore(PromptTemplate tpl, std::vector<std::string> vocab,
                               std::vector<std::string> static_tokens);
    const std::vector<std::string>& static_tokens() const { return static_tokens_; }

private:
    PromptTemplate tpl_;
    std::vector<std::string> vocab_;
    std::vector<std::string> static_tokens_;
};

// ---------------------------------------------------------------------------
// Window assembly. Holds normalized corrupted inputs and normalized clean
// targets; inputs are zero-filled at masked cells with the mask appended as
// extra channels, so two windows differing only at missing cells embed
// identically.

struct ForecastSeries {
    data::TimeSeriesDataset corrupted_norm;
    data::TimeSeriesDataset clean_norm;
    data::NormalizationStats stats;
    int lookback = data::kStepsPerDay;
    int absolute_offset = 0;  // step index of row 0 within the full series
    std::vector<int> window_targets;

    static ForecastSeries build(const data::TimeSeriesDataset& corrupted_raw,
                                const data::TimeSeriesDataset& clean_raw,
                                const data::NormalizationStats& stats, int lookback,
                                int absolute_offset);

    std::size_t channels() const { return clean_norm.channels(); }
    // [lookback x 2m] row-major: normalized zero-filled values then mask bits.
    Tensor window_input(int target) const;
    std::vector<double> target_row(int target) const;  // clean, normalized
};

// ---------------------------------------------------------------------------
// Forecasters

// Fills each missing channel with its most recent observation inside the
// window; channels never observed fall back to the training mean (0 in
// normalized space). Observed channels pass through.
std::vector<double> persistence_complete(const ForecastSeries& fs, int target);

// Single-layer gated recurrent network over the window, final hidden state
// projected to the channel count.
class RecurrentForecaster {
public:
    RecurrentForecaster(int channels, int hidden, std::uint64_t seed);

    Tensor forward(const Tensor& window) const;  // [k x 2m] -> [1 x m]
    NamedParams parameters() const;
    int hidden_size() const { return hidden_; }
    int channels() const { return channels_; }

private:
    int channels_ = 0;
    int hidden_ = 0;
    Tensor wz_, uz_, bz_, wr_, ur_, br_, wh_, uh_, bh_, w_out_, b_out_;
};

// Causal multi-head self-attention with per-head projections and a combined
// output transform.
class MultiHeadAttention {
public:
    MultiHeadAttention(int width, int heads, RandomSource& rng, const std::string& prefix);

    Tensor forward(const Tensor& x) const;  // [L x D] -> [L x D]
    NamedParams parameters() const;
    // Attention weights of one head for the given input (test/inspection aid).
    Tensor attention_weights(const Tensor& x, int head) const;

    Tensor& query_weight(int head) { return wq_[head]; }
    Tensor& key_weight(int head) { return wk_[head]; }
    Tensor& value_weight(int head) { return wv_[head]; }
    Tensor& output_weight() { return wo_; }

private:
    int width_ = 0, heads_ = 0, head_dim_ = 0;
    std::string prefix_;
    std::vector<Tensor> wq_, wk_, wv_;
    Tensor wo_, bo_;
};

// Decoder-only stack: pre-norm residual blocks (attention, then feed-forward),
// a final layer norm, and a linear head reading the last sequence position.
class DecoderTransformer {
public:
    DecoderTransformer(EmbeddingConfig ecfg, TransformerConfig tcfg, int vocab_size,
                       std::uint64_t seed);

    // window: [L_s x 2m]; prompt_ids length must equal prompt_len.
    Tensor forward(const Tensor& window, const std::vector<int>& prompt_ids) const;  // [1 x m]
    // Full final representation [(L_p+L_s) x D]; used by causality checks.
    Tensor forward_sequence(const Tensor& window, const std::vector<int>& prompt_ids) const;

    // Embedding stages, exposed for composition tests.
    Tensor embed_measurements(const Tensor& window) const;             // E_z [L_s x D]
    Tensor embed_prompt(const std::vector<int>& prompt_ids) const;     // E_p [L_p x D]
    Tensor concat_and_adjust(const Tensor& e_p, const Tensor& e_z) const;
    Tensor decode(const Tensor& e_adj) const;                          // pre-norm blocks + final LN
    Tensor output_head(const Tensor& h_last) const;                    // [1 x D] -> [1 x m]

    NamedParams parameters() const;
    NamedParams trainable_parameters() const;  // honors frozen_body

    const EmbeddingConfig& embedding_config() const { return ecfg_; }
    const TransformerConfig& transformer_config() const { return tcfg_; }
    MultiHeadAttention& attention(int layer) { return *blocks_[layer].attn; }
    Tensor& adjust_scale() { return adjust_scale_; }
    Tensor& adjust_shift() { return adjust_shift_; }

private:
    struct Block {
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        std::shared_ptr<MultiHeadAttention> attn;
        Tensor w1, b1, w2, b2;
    };

    EmbeddingConfig ecfg_;
    TransformerConfig tcfg_;
    Tensor w_in_, b_in_;       // measurement embedding
    Tensor prompt_table_;      // [vocab x D], undefined when prompt disabled
    Tensor pos_z_, pos_p_;     // fixed sinusoidal encodings
    Tensor adjust_scale_, adjust_shift_;
    std::vector<Block> blocks_;
    Tensor lnf_g_, lnf_b_;
    Tensor w_out_, b_out_;
};

// ---------------------------------------------------------------------------
// Variant wrapper used by the pipeline.

enum class Variant { persistence, recurrent, transformer };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ForecastModel {
    Variant variant = Variant::persistence;
    std::shared_ptr<RecurrentForecaster> recurrent;
    std::shared_ptr<DecoderTransformer> transformer;
    PromptCodec prompt;
    data::NormalizationStats stats;
    int lookback = data::kStepsPerDay;

    // Normalized completed row for the window ending at `target`.
    std::vector<double> complete_row(const ForecastSeries& fs, int target) const;
    NamedParams parameters() const;
    NamedParams trainable_parameters() const;
};

// Observed entries pass through bit-exact; missing entries take the model
// forecast, denormalized. The output mask is all-true.
grid::MeasurementFrame forecast_impute(const ForecastModel& model, const ForecastSeries& fs,
                                       const grid::MeasurementFrame& raw_frame, int target);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 1e-4;
    int epochs = 20;
    int batch = 8;
    int max_windows_per_epoch = 0;  // 0 = every window, else a seeded subsample
    int max_val_windows = 256;
    std::uint64_t seed = 1;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
    bool diverged = false;
};

// Mean-squared-error training with per-epoch validation; the model is left at
// the epoch with the lowest validation loss. Non-finite losses abort with
// `diverged` set and the best snapshot restored.
TrainHistory train_forecaster(ForecastModel& model, const ForecastSeries& train,
                              const ForecastSeries& val, const TrainConfig& cfg);

void export_history_csv(const TrainHistory& history, const std::string& path);

struct ForecastEval {
    double mae = 0.0;
    double rmse = 0.0;
    std::size_t missing_cells = 0;
};

// Raw-scale error over the cells that were actually missing. max_windows > 0
// evaluates a deterministic strided subsample of the windows.
ForecastEval evaluate_forecaster(const ForecastModel& model, const ForecastSeries& test,
                                 int max_windows = 0);

// Checkpoint + JSON sidecar (configs, vocabulary, stats).
void save_forecaster(const ForecastModel& model, const std::string& prefix);
ForecastModel load_forecaster(const std::string& prefix);

}  // namespace dsse::forecast
