#include "dsse/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

namespace dsse::forecast {

namespace {

using nlohmann::json;

const char* kDayWords[7] = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
constexpr const char* kPadWord = "<pad>";

Tensor sinusoidal_encoding(int length, int width) {
    Tensor pe = Tensor::zeros({static_cast<std::size_t>(length), static_cast<std::size_t>(width)});
    auto& v = pe.values();
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < width; i += 2) {
            const double rate = std::pow(10000.0, -static_cast<double>(i) / width);
            v[pos * width + i] = std::sin(pos * rate);
            if (i + 1 < width) v[pos * width + i + 1] = std::cos(pos * rate);
        }
    }
    return pe;
}

std::string kind_word(grid::MeasurementKind k) {
    switch (k) {
        case grid::MeasurementKind::P_inj: return "pinj";
        case grid::MeasurementKind::Q_inj: return "qinj";
        case grid::MeasurementKind::P_flow: return "pflow";
        case grid::MeasurementKind::Q_flow: return "qflow";
    }
    return "?";
}

}  // namespace

// ------------------------------------------------------------- PromptCodec

PromptCodec::PromptCodec(PromptTemplate tpl, const data::TimeSeriesDataset& clean_train)
    : tpl_(std::move(tpl)) {
    if (tpl_.length <= 0) {
        tpl_.length = 0;
        return;
    }
    std::vector<std::string> kinds;
    for (const auto& d : clean_train.descriptors) {
        const std::string w = kind_word(d.kind);
        if (std::find(kinds.begin(), kinds.end(), w) == kinds.end()) kinds.push_back(w);
    }
    double mean_abs = 0.0;
    std::size_t count = 0;
    for (const auto& f : clean_train.frames)
        for (std::size_t c = 0; c < f.values.size(); ++c)
            if (f.mask[c]) {
                mean_abs += std::abs(f.values[c]);
                ++count;
            }
    mean_abs = count ? mean_abs / static_cast<double>(count) : 0.0;
    const int bucket =
        std::clamp(static_cast<int>(std::floor(std::log10(std::max(mean_abs, 1e-9)))), -6, 3);

    static_tokens_ = {"impute", "feeder", tpl_.feeder_name, "kinds"};
    static_tokens_.insert(static_tokens_.end(), kinds.begin(), kinds.end());
    static_tokens_.push_back("width");
    static_tokens_.push_back("w" + std::to_string(clean_train.channels()));
    static_tokens_.push_back("mag");
    static_tokens_.push_back("m" + std::to_string(bucket));

    std::set<std::string> words(static_tokens_.begin(), static_tokens_.end());
    words.insert(kPadWord);
    words.insert("day");
    words.insert("hour");
    for (const char* d : kDayWords) words.insert(d);
    for (int h = 0; h < 24; ++h) words.insert("h" + std::to_string(h));
    vocab_.assign(words.begin(), words.end());
}

PromptCodec PromptCodec::restore(PromptTemplate tpl, std::vector<std::string> vocab,
                                 std::vector<std::string> static_tokens) {
    PromptCodec codec;
    codec.tpl_ = std::move(tpl);
    codec.vocab_ = std::move(vocab);
    codec.static_tokens_ = std::move(static_tokens);
    return codec;
}

int PromptCodec::token_id(const std::string& word) const {
    const auto it = std::lower_bound(vocab_.begin(), vocab_.end(), word);
    if (it == vocab_.end() || *it != word)
        throw ValueError("prompt: token '" + word + "' is out of vocabulary");
    return static_cast<int>(it - vocab_.begin());
}

std::vector<std::string> PromptCodec::render(int absolute_step) const {
    if (tpl_.length == 0) return {};
    std::vector<std::string> words = static_tokens_;
    const int day = (absolute_step / data::kStepsPerDay) % 7;
    const int hour = (absolute_step % data::kStepsPerDay) / 4;
    words.push_back("day");
    words.push_back(kDayWords[day]);
    words.push_back("hour");
    words.push_back("h" + std::to_string(hour));
    while (static_cast<int>(words.size()) < tpl_.length) words.push_back(kPadWord);
    words.resize(tpl_.length);
    return words;
}

std::vector<int> PromptCodec::encode(int absolute_step) const {
    std::vector<int> ids;
    for (const auto& w : render(absolute_step)) ids.push_back(token_id(w));
    return ids;
}

// ---------------------------------------------------------- ForecastSeries

ForecastSeries ForecastSeries::build(const data::TimeSeriesDataset& corrupted_raw,
                                     const data::TimeSeriesDataset& clean_raw,
                                     const data::NormalizationStats& stats, int lookback,
                                     int absolute_offset) {
    if (corrupted_raw.steps() != clean_raw.steps())
        throw ValueError("ForecastSeries: corrupted/clean length mismatch");
    ForecastSeries fs;
    fs.corrupted_norm = data::normalize(corrupted_raw, stats);
    fs.clean_norm = data::normalize(clean_raw, stats);
    fs.stats = stats;
    fs.lookback = lookback;
    fs.absolute_offset = absolute_offset;
    fs.window_targets = data::make_windows(fs.corrupted_norm, {lookback, 1});
    return fs;
}

Tensor ForecastSeries::window_input(int target) const {
    const int k = lookback;
    const std::size_t m = channels();
    Tensor win = Tensor::zeros({static_cast<std::size_t>(k), 2 * m});
    auto& v = win.values();
    for (int r = 0; r < k; ++r) {
        const auto& f = corrupted_norm.frames[target - k + 1 + r];
        for (std::size_t c = 0; c < m; ++c) {
            v[r * 2 * m + c] = f.mask[c] ? f.values[c] : 0.0;  // zero-filled missing cells
            v[r * 2 * m + m + c] = f.mask[c] ? 1.0 : 0.0;
        }
    }
    return win;
}

std::vector<double> ForecastSeries::target_row(int target) const {
    return clean_norm.frames[target].values;
}

// ------------------------------------------------------------- persistence

std::vector<double> persistence_complete(const ForecastSeries& fs, int target) {
    const std::size_t m = fs.channels();
    std::vector<double> out(m, 0.0);  // normalized train mean fallback
    for (std::size_t c = 0; c < m; ++c) {
        for (int t = target; t > target - fs.lookback; --t) {
            if (fs.corrupted_norm.frames[t].mask[c]) {
                out[c] = fs.corrupted_norm.frames[t].values[c];
                break;
            }
        }
    }
    return out;
}

// --------------------------------------------------------------- recurrent

RecurrentForecaster::RecurrentForecaster(int channels, int hidden, std::uint64_t seed)
    : channels_(channels), hidden_(hidden) {
    RandomSource rng = RandomSource(seed).fork(0x6772750001ull);
    const std::size_t in = 2 * static_cast<std::size_t>(channels);
    const std::size_t h = static_cast<std::size_t>(hidden);
    const double si = 1.0 / std::sqrt(static_cast<double>(in));
    const double sh = 1.0 / std::sqrt(static_cast<double>(h));
    auto w_in = [&]() { return ad::random_normal({in, h}, si, rng); };
    auto w_hid = [&]() { return ad::random_normal({h, h}, sh, rng); };
    wz_ = w_in(); uz_ = w_hid(); bz_ = Tensor::zeros({h}, true);
    wr_ = w_in(); ur_ = w_hid(); br_ = Tensor::zeros({h}, true);
    wh_ = w_in(); uh_ = w_hid(); bh_ = Tensor::zeros({h}, true);
    w_out_ = ad::random_normal({h, static_cast<std::size_t>(channels)}, sh, rng);
    b_out_ = Tensor::zeros({static_cast<std::size_t>(channels)}, true);
}

Tensor RecurrentForecaster::forward(const Tensor& window) const {
    using namespace ad;
    if (window.cols() != 2 * static_cast<std::size_t>(channels_))
        throw ShapeError("recurrent forward: window width mismatch");
    const std::size_t k = window.rows();
    Tensor h = Tensor::zeros({1, static_cast<std::size_t>(hidden_)});
    Tensor ones = Tensor::full({1, static_cast<std::size_t>(hidden_)}, 1.0);
    for (std::size_t t = 0; t < k; ++t) {
        Tensor x = row(window, t);
        Tensor z = sigmoid(add(add(matmul(x, wz_), matmul(h, uz_)), bz_));
        Tensor r = sigmoid(add(add(matmul(x, wr_), matmul(h, ur_)), br_));
        Tensor cand = ad::tanh(add(add(matmul(x, wh_), matmul(mul(r, h), uh_)), bh_));
        h = add(mul(sub(ones, z), h), mul(z, cand));
    }
    return add(matmul(h, w_out_), b_out_);
}

NamedParams RecurrentForecaster::parameters() const {
    return {{"gru.wz", wz_}, {"gru.uz", uz_}, {"gru.bz", bz_},
            {"gru.wr", wr_}, {"gru.ur", ur_}, {"gru.br", br_},
            {"gru.wh", wh_}, {"gru.uh", uh_}, {"gru.bh", bh_},
            {"gru.w_out", w_out_}, {"gru.b_out", b_out_}};
}

// --------------------------------------------------------------- attention

MultiHeadAttention::MultiHeadAttention(int width, int heads, RandomSource& rng,
                                       const std::string& prefix)
    : width_(width), heads_(heads), prefix_(prefix) {
    if (heads <= 0 || width % heads != 0)
        throw ShapeError("attention: width must be divisible by the head count");
    head_dim_ = width / heads;
    const std::size_t d = static_cast<std::size_t>(width);
    const std::size_t dk = static_cast<std::size_t>(head_dim_);
    for (int h = 0; h < heads; ++h) {
        wq_.push_back(ad::random_normal({d, dk}, 0.02, rng));
        wk_.push_back(ad::random_normal({d, dk}, 0.02, rng));
        wv_.push_back(ad::random_normal({d, dk}, 0.02, rng));
    }
    wo_ = ad::random_normal({d, d}, 0.02, rng);
    bo_ = Tensor::zeros({d}, true);
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
    using namespace ad;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    std::vector<Tensor> heads;
    heads.reserve(heads_);
    for (int h = 0; h < heads_; ++h) {
        Tensor q = matmul(x, wq_[h]);
        Tensor k = matmul(x, wk_[h]);
        Tensor v = matmul(x, wv_[h]);
        Tensor scores = mul(matmul(q, transpose(k)), scale);
        Tensor weights = causal_softmax(scores);
        heads.push_back(matmul(weights, v));
    }
    Tensor merged = heads_ == 1 ? heads[0] : concat_cols(heads);
    return add(matmul(merged, wo_), bo_);
}

Tensor MultiHeadAttention::attention_weights(const Tensor& x, int head) const {
    using namespace ad;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    Tensor q = matmul(x, wq_[head]);
    Tensor k = matmul(x, wk_[head]);
    return causal_softmax(mul(matmul(q, transpose(k)), scale));
}

NamedParams MultiHeadAttention::parameters() const {
    NamedParams p;
    for (int h = 0; h < heads_; ++h) {
        const std::string tag = prefix_ + ".h" + std::to_string(h);
        p.emplace_back(tag + ".wq", wq_[h]);
        p.emplace_back(tag + ".wk", wk_[h]);
        p.emplace_back(tag + ".wv", wv_[h]);
    }
    p.emplace_back(prefix_ + ".wo", wo_);
    p.emplace_back(prefix_ + ".bo", bo_);
    return p;
}

// -------------------------------------------------------------- transformer

DecoderTransformer::DecoderTransformer(EmbeddingConfig ecfg, TransformerConfig tcfg,
                                       int vocab_size, std::uint64_t seed)
    : ecfg_(ecfg), tcfg_(tcfg) {
    if (ecfg_.width <= 0 || ecfg_.seq_len <= 0 || ecfg_.out_len <= 0)
        throw ValueError("transformer: bad embedding config");
    if (tcfg_.ff_width <= 0) tcfg_.ff_width = 4 * ecfg_.width;
    if (ecfg_.prompt_len > 0 && vocab_size <= 0)
        throw ValueError("transformer: prompt enabled but vocabulary is empty");

    RandomSource rng = RandomSource(seed).fork(0x7472616e73666f01ull);
    const std::size_t d = static_cast<std::size_t>(ecfg_.width);
    const std::size_t m2 = 2 * static_cast<std::size_t>(ecfg_.out_len);
    const std::size_t total_len = static_cast<std::size_t>(ecfg_.prompt_len + ecfg_.seq_len);

    w_in_ = ad::random_normal({m2, d}, 1.0 / std::sqrt(static_cast<double>(m2)), rng);
    b_in_ = Tensor::zeros({d}, true);
    if (ecfg_.prompt_len > 0)
        prompt_table_ = ad::random_normal({static_cast<std::size_t>(vocab_size), d}, 0.02, rng);
    pos_z_ = sinusoidal_encoding(ecfg_.seq_len, ecfg_.width);
    pos_p_ = sinusoidal_encoding(ecfg_.prompt_len, ecfg_.width);
    adjust_scale_ = Tensor::full({total_len, d}, 1.0, true);
    adjust_shift_ = Tensor::zeros({total_len, d}, true);

    const std::size_t f = static_cast<std::size_t>(tcfg_.ff_width);
    blocks_.reserve(tcfg_.layers);
    for (int l = 0; l < tcfg_.layers; ++l) {
        Block b;
        b.ln1_g = Tensor::full({d}, 1.0, true);
        b.ln1_b = Tensor::zeros({d}, true);
        b.attn = std::make_shared<MultiHeadAttention>(ecfg_.width, tcfg_.heads, rng,
                                                      "block" + std::to_string(l) + ".attn");
        b.ln2_g = Tensor::full({d}, 1.0, true);
        b.ln2_b = Tensor::zeros({d}, true);
        b.w1 = ad::random_normal({d, f}, 0.02, rng);
        b.b1 = Tensor::zeros({f}, true);
        b.w2 = ad::random_normal({f, d}, 0.02, rng);
        b.b2 = Tensor::zeros({d}, true);
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = Tensor::full({d}, 1.0, true);
    lnf_b_ = Tensor::zeros({d}, true);
    w_out_ = ad::random_normal({d, static_cast<std::size_t>(ecfg_.out_len)}, 0.02, rng);
    b_out_ = Tensor::zeros({static_cast<std::size_t>(ecfg_.out_len)}, true);
}

Tensor DecoderTransformer::embed_measurements(const Tensor& window) const {
    using namespace ad;
    if (window.rows() != static_cast<std::size_t>(ecfg_.seq_len) ||
        window.cols() != 2 * static_cast<std::size_t>(ecfg_.out_len))
        throw ShapeError("embed_measurements: window shape mismatch");
    return add(add(matmul(window, w_in_), b_in_), pos_z_);
}

Tensor DecoderTransformer::embed_prompt(const std::vector<int>& prompt_ids) const {
    using namespace ad;
    if (static_cast<int>(prompt_ids.size()) != ecfg_.prompt_len)
        throw ShapeError("embed_prompt: prompt length mismatch");
    if (ecfg_.prompt_len == 0) return {};
    return add(embedding_lookup(prompt_table_, prompt_ids), pos_p_);
}

Tensor DecoderTransformer::concat_and_adjust(const Tensor& e_p, const Tensor& e_z) const {
    using namespace ad;
    Tensor e = e_p.defined() ? concat_rows({e_p, e_z}) : e_z;
    if (e.rows() != adjust_scale_.rows())
        throw ShapeError("concat_and_adjust: sequence length mismatch");
    return add(mul(e, adjust_scale_), adjust_shift_);
}

Tensor DecoderTransformer::decode(const Tensor& e_adj) const {
    using namespace ad;
    Tensor x = e_adj;
    for (const Block& b : blocks_) {
        x = add(x, b.attn->forward(layer_norm(x, b.ln1_g, b.ln1_b)));
        Tensor h = layer_norm(x, b.ln2_g, b.ln2_b);
        Tensor ffn = add(matmul(gelu(add(matmul(h, b.w1), b.b1)), b.w2), b.b2);
        x = add(x, ffn);
    }
    return layer_norm(x, lnf_g_, lnf_b_);
}

Tensor DecoderTransformer::output_head(const Tensor& h_last) const {
    using namespace ad;
    return add(matmul(h_last, w_out_), b_out_);
}

Tensor DecoderTransformer::forward_sequence(const Tensor& window,
                                            const std::vector<int>& prompt_ids) const {
    Tensor e_z = embed_measurements(window);
    Tensor e_p = embed_prompt(prompt_ids);
    return decode(concat_and_adjust(e_p, e_z));
}

Tensor DecoderTransformer::forward(const Tensor& window, const std::vector<int>& prompt_ids) const {
    Tensor h = forward_sequence(window, prompt_ids);
    return output_head(ad::row(h, h.rows() - 1));
}

NamedParams DecoderTransformer::parameters() const {
    NamedParams p;
    p.emplace_back("embed.w_in", w_in_);
    p.emplace_back("embed.b_in", b_in_);
    if (prompt_table_.defined()) p.emplace_back("prompt.table", prompt_table_);
    p.emplace_back("adjust.scale", adjust_scale_);
    p.emplace_back("adjust.shift", adjust_shift_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string tag = "block" + std::to_string(l);
        const Block& b = blocks_[l];
        p.emplace_back(tag + ".ln1.g", b.ln1_g);
        p.emplace_back(tag + ".ln1.b", b.ln1_b);
        for (auto& [n, t] : b.attn->parameters()) p.emplace_back(n, t);
        p.emplace_back(tag + ".ln2.g", b.ln2_g);
        p.emplace_back(tag + ".ln2.b", b.ln2_b);
        p.emplace_back(tag + ".ffn.w1", b.w1);
        p.emplace_back(tag + ".ffn.b1", b.b1);
        p.emplace_back(tag + ".ffn.w2", b.w2);
        p.emplace_back(tag + ".ffn.b2", b.b2);
    }
    p.emplace_back("final_ln.g", lnf_g_);
    p.emplace_back("final_ln.b", lnf_b_);
    p.emplace_back("head.w", w_out_);
    p.emplace_back("head.b", b_out_);
    return p;
}

NamedParams DecoderTransformer::trainable_parameters() const {
    if (!tcfg_.frozen_body) return parameters();
    NamedParams p;
    for (auto& [name, t] : parameters()) {
        const bool keep = name.rfind("embed.", 0) == 0 || name.rfind("prompt.", 0) == 0 ||
                          name.rfind("adjust.", 0) == 0 || name.rfind("head.", 0) == 0 ||
                          name.find(".ln1.") != std::string::npos ||
                          name.find(".ln2.") != std::string::npos ||
                          name.rfind("final_ln.", 0) == 0;
        if (keep) p.emplace_back(name, t);
    }
    return p;
}

// ------------------------------------------------------------ ForecastModel

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::persistence: return "persistence";
        case Variant::recurrent: return "recurrent";
        case Variant::transformer: return "transformer";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "persistence") return Variant::persistence;
    if (name == "recurrent") return Variant::recurrent;
    if (name == "transformer") return Variant::transformer;
    throw ValueError("unknown forecaster variant '" + name + "'");
}

std::vector<double> ForecastModel::complete_row(const ForecastSeries& fs, int target) const {
    switch (variant) {
        case Variant::persistence:
            return persistence_complete(fs, target);
        case Variant::recurrent: {
            Tensor out = recurrent->forward(fs.window_input(target));
            return out.values();
        }
        case Variant::transformer: {
            const std::vector<int> ids =
                prompt.length() > 0 ? prompt.encode(fs.absolute_offset + target) : std::vector<int>{};
            Tensor out = transformer->forward(fs.window_input(target), ids);
            return out.values();
        }
    }
    throw ValueError("complete_row: bad variant");
}

NamedParams ForecastModel::parameters() const {
    switch (variant) {
        case Variant::persistence: return {};
        case Variant::recurrent: return recurrent->parameters();
        case Variant::transformer: return transformer->parameters();
    }
    return {};
}

NamedParams ForecastModel::trainable_parameters() const {
    if (variant == Variant::transformer) return transformer->trainable_parameters();
    return parameters();
}

grid::MeasurementFrame forecast_impute(const ForecastModel& model, const ForecastSeries& fs,
                                       const grid::MeasurementFrame& raw_frame, int target) {
    grid::MeasurementFrame out;
    const std::size_t m = raw_frame.size();
    out.values.resize(m);
    out.mask.assign(m, 1);
    if (raw_frame.complete()) {
        out.values = raw_frame.values;  // untouched, bit for bit
        return out;
    }
    const std::vector<double> pred = model.complete_row(fs, target);
    for (std::size_t c = 0; c < m; ++c) {
        out.values[c] = raw_frame.mask[c] ? raw_frame.values[c] : fs.stats.to_raw(c, pred[c]);
    }
    return out;
}

// ----------------------------------------------------------------- training

namespace {

Tensor predict(const ForecastModel& model, const ForecastSeries& fs, int target) {
    if (model.variant == Variant::recurrent) return model.recurrent->forward(fs.window_input(target));
    const std::vector<int> ids = model.prompt.length() > 0
                                     ? model.prompt.encode(fs.absolute_offset + target)
                                     : std::vector<int>{};
    return model.transformer->forward(fs.window_input(target), ids);
}

double validation_loss(const ForecastModel& model, const ForecastSeries& val, int max_windows) {
    const auto& targets = val.window_targets;
    if (targets.empty()) return 0.0;
    std::size_t stride = 1;
    if (max_windows > 0 && targets.size() > static_cast<std::size_t>(max_windows))
        stride = targets.size() / static_cast<std::size_t>(max_windows);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < targets.size(); i += stride) {
        const int t = targets[i];
        Tensor pred = predict(model, val, t);
        Tensor target = Tensor::from(val.target_row(t), pred.shape());
        total += ad::mse_loss(pred, target).item();
        ++count;
    }
    return total / static_cast<double>(count);
}

std::vector<std::vector<double>> snapshot(const NamedParams& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& [n, t] : params) out.push_back(t.values());
    return out;
}

void restore(const NamedParams& params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        t.values() = snap[i];
    }
}

}  // namespace

TrainHistory train_forecaster(ForecastModel& model, const ForecastSeries& train,
                              const ForecastSeries& val, const TrainConfig& cfg) {
    TrainHistory history;
    if (model.variant == Variant::persistence) {
        history.best_epoch = 0;
        return history;
    }
    const NamedParams trainable = model.trainable_parameters();
    const NamedParams all_params = model.parameters();
    ad::AdamOptimizer opt({cfg.learning_rate});
    RandomSource order_rng = RandomSource(cfg.seed).fork(0x73687566666c6501ull);

    auto best = snapshot(all_params);
    double best_val = validation_loss(model, val, cfg.max_val_windows);
    history.best_epoch = -1;  // initial model unless an epoch improves on it

    std::vector<int> targets = train.window_targets;
    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            order_rng.shuffle(targets);
            std::size_t use = targets.size();
            if (cfg.max_windows_per_epoch > 0)
                use = std::min(use, static_cast<std::size_t>(cfg.max_windows_per_epoch));

            double epoch_loss = 0.0;
            std::size_t in_batch = 0;
            opt.zero_grad(trainable);
            for (std::size_t i = 0; i < use; ++i) {
                const int t = targets[i];
                ad::Tape tape;
                {
                    ad::Tape::Scope scope(tape);
                    Tensor pred = predict(model, train, t);
                    Tensor target = Tensor::from(train.target_row(t), pred.shape());
                    Tensor loss = ad::mse_loss(pred, target);
                    epoch_loss += loss.item();
                    // scale so the accumulated gradient is the batch mean
                    Tensor scaled = ad::mul(loss, 1.0 / cfg.batch);
                    tape.backward(scaled);
                }
                if (++in_batch == static_cast<std::size_t>(cfg.batch) || i + 1 == use) {
                    opt.step(trainable);
                    opt.zero_grad(trainable);
                    in_batch = 0;
                }
            }
            history.train_loss.push_back(use ? epoch_loss / static_cast<double>(use) : 0.0);

            const double vloss = validation_loss(model, val, cfg.max_val_windows);
            history.val_loss.push_back(vloss);
            if (vloss < best_val) {
                best_val = vloss;
                best = snapshot(all_params);
                history.best_epoch = epoch;
            }
        }
    } catch (const NumericError&) {
        history.diverged = true;
    }
    restore(all_params, best);
    return history;
}

void export_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("history: cannot write " + path);
    os << "epoch,train_loss,val_loss\n";
    char buf[96];
    for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g\n", e, history.train_loss[e],
                      history.val_loss[e]);
        os << buf;
    }
}

ForecastEval evaluate_forecaster(const ForecastModel& model, const ForecastSeries& test,
                                 int max_windows) {
    ForecastEval eval;
    double abs_sum = 0.0, sq_sum = 0.0;
    std::vector<int> targets = test.window_targets;
    if (max_windows > 0 && targets.size() > static_cast<std::size_t>(max_windows)) {
        const std::size_t stride = targets.size() / static_cast<std::size_t>(max_windows);
        std::vector<int> picked;
        for (std::size_t i = 0; i < targets.size(); i += stride) picked.push_back(targets[i]);
        targets = std::move(picked);
    }
    for (const int t : targets) {
        const auto& frame = test.corrupted_norm.frames[t];
        if (frame.complete()) continue;
        const std::vector<double> pred = model.complete_row(test, t);
        const auto& truth = test.clean_norm.frames[t];
        for (std::size_t c = 0; c < frame.mask.size(); ++c) {
            if (frame.mask[c]) continue;
            const double err = (pred[c] - truth.values[c]) * test.stats.std[c];
            abs_sum += std::abs(err);
            sq_sum += err * err;
            ++eval.missing_cells;
        }
    }
    if (eval.missing_cells > 0) {
        eval.mae = abs_sum / static_cast<double>(eval.missing_cells);
        eval.rmse = std::sqrt(sq_sum / static_cast<double>(eval.missing_cells));
    }
    return eval;
}

// ------------------------------------------------------------- persistence IO

void save_forecaster(const ForecastModel& model, const std::string& prefix) {
    json j;
    j["variant"] = variant_name(model.variant);
    j["lookback"] = model.lookback;
    j["stats"] = {{"mean", model.stats.mean},
                  {"std", model.stats.std},
                  {"constant", model.stats.constant}};
    if (model.variant == Variant::recurrent) {
        j["recurrent"] = {{"channels", model.recurrent->channels()},
                          {"hidden", model.recurrent->hidden_size()}};
    }
    if (model.variant == Variant::transformer) {
        const auto& e = model.transformer->embedding_config();
        const auto& t = model.transformer->transformer_config();
        j["embedding"] = {{"width", e.width},
                          {"seq_len", e.seq_len},
                          {"prompt_len", e.prompt_len},
                          {"out_len", e.out_len}};
        j["transformer"] = {{"layers", t.layers},
                            {"heads", t.heads},
                            {"ff_width", t.ff_width},
                            {"frozen_body", t.frozen_body}};
        j["prompt"] = {{"feeder_name", model.prompt.rendered_template().feeder_name},
                       {"length", model.prompt.rendered_template().length},
                       {"vocab", model.prompt.vocabulary()},
                       {"static_tokens", model.prompt.static_tokens()}};
    }
    std::ofstream os(prefix + ".json");
    if (!os) throw IoError("save_forecaster: cannot write " + prefix + ".json");
    os << j.dump(2) << "\n";
    ad::save_checkpoint(prefix + ".ckpt", model.parameters());
}

ForecastModel load_forecaster(const std::string& prefix) {
    std::ifstream is(prefix + ".json");
    if (!is) throw IoError("load_forecaster: cannot open " + prefix + ".json");
    json j;
    is >> j;

    ForecastModel model;
    model.variant = variant_from_name(j.at("variant").get<std::string>());
    model.lookback = j.at("lookback").get<int>();
    model.stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
    model.stats.std = j.at("stats").at("std").get<std::vector<double>>();
    model.stats.constant = j.at("stats").at("constant").get<std::vector<std::uint8_t>>();

    if (model.variant == Variant::recurrent) {
        model.recurrent = std::make_shared<RecurrentForecaster>(
            j.at("recurrent").at("channels").get<int>(), j.at("recurrent").at("hidden").get<int>(),
            0);
    }
    if (model.variant == Variant::transformer) {
        EmbeddingConfig e;
        e.width = j.at("embedding").at("width").get<int>();
        e.seq_len = j.at("embedding").at("seq_len").get<int>();
        e.prompt_len = j.at("embedding").at("prompt_len").get<int>();
        e.out_len = j.at("embedding").at("out_len").get<int>();
        TransformerConfig t;
        t.layers = j.at("transformer").at("layers").get<int>();
        t.heads = j.at("transformer").at("heads").get<int>();
        t.ff_width = j.at("transformer").at("ff_width").get<int>();
        t.frozen_body = j.at("transformer").at("frozen_body").get<bool>();
        PromptTemplate tpl;
        tpl.feeder_name = j.at("prompt").at("feeder_name").get<std::string>();
        tpl.length = j.at("prompt").at("length").get<int>();
        model.prompt = PromptCodec::restore(
            tpl, j.at("prompt").at("vocab").get<std::vector<std::string>>(),
            j.at("prompt").at("static_tokens").get<std::vector<std::string>>());
        model.transformer =
            std::make_shared<DecoderTransformer>(e, t, model.prompt.vocab_size(), 0);
    }

    const NamedParams loaded = ad::load_checkpoint(prefix + ".ckpt");
    NamedParams live = model.parameters();
    if (loaded.size() != live.size())
        throw IoError("load_forecaster: checkpoint/model parameter count mismatch");
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (loaded[i].first != live[i].first)
            throw IoError("load_forecaster: parameter name mismatch at index " +
                          std::to_string(i));
        live[i].second.assign(loaded[i].second);
    }
    return model;
}

}  // namespace dsse::forecast
