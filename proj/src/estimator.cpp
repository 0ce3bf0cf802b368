#include "dsse/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace dsse::estimator {

namespace {

using nlohmann::json;

Tensor dense(std::size_t in, std::size_t out, RandomSource& rng) {
    return ad::random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor bias(std::size_t n) { return Tensor::zeros({n}, true); }

}  // namespace

std::string architecture_name(Architecture a) {
    switch (a) {
        case Architecture::mlp: return "mlp";
        case Architecture::proxlinear: return "proxlinear";
        case Architecture::resnetd: return "resnetd";
        case Architecture::cnn_prox: return "cnn_prox";
    }
    return "?";
}

Architecture architecture_from_name(const std::string& name) {
    if (name == "mlp") return Architecture::mlp;
    if (name == "proxlinear") return Architecture::proxlinear;
    if (name == "resnetd") return Architecture::resnetd;
    if (name == "cnn_prox") return Architecture::cnn_prox;
    throw ValueError("unknown estimator architecture '" + name + "'");
}

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::stl: return "stl";
        case Scheme::mix: return "mix";
        case Scheme::uniform_scaling: return "us";
        case Scheme::uwa: return "uwa";
    }
    return "?";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "stl") return Scheme::stl;
    if (name == "mix") return Scheme::mix;
    if (name == "us" || name == "uniform_scaling") return Scheme::uniform_scaling;
    if (name == "uwa") return Scheme::uwa;
    throw ValueError("unknown weighting scheme '" + name + "'");
}

// ------------------------------------------------------------------- losses

Tensor proxlinear_block(const Tensor& state, const Tensor& z, const Tensor& w_state,
                        const Tensor& w_meas, const Tensor& bias) {
    using namespace ad;
    return relu(add(add(matmul(state, w_state), matmul(z, w_meas)), bias));
}

Tensor uwa_loss(const Tensor& l1, const Tensor& l2, const Tensor& s1, const Tensor& s2) {
    using namespace ad;
    Tensor w1 = mul(exp(mul(s1, -1.0)), 0.5);
    Tensor w2 = mul(exp(mul(s2, -1.0)), 0.5);
    Tensor penalty = mul(add(s1, s2), 0.5);
    return add(add(mul(l1, w1), mul(l2, w2)), penalty);
}

Tensor combined_loss(const TaskWeighting& weighting, const Tensor& l1, const Tensor& l2,
                     const Tensor& s1, const Tensor& s2) {
    using namespace ad;
    switch (weighting.scheme) {
        case Scheme::stl:
        case Scheme::mix:
            if (l2.defined())
                throw ValueError("combined_loss: stl/mix take a single task loss");
            return l1;
        case Scheme::uniform_scaling:
            if (!l2.defined()) throw ValueError("combined_loss: uniform scaling needs both losses");
            return add(mul(l1, weighting.lambda1), mul(l2, weighting.lambda2));
        case Scheme::uwa:
            if (!l2.defined() || !s1.defined() || !s2.defined())
                throw ValueError("combined_loss: uwa needs both losses and both log-variances");
            return uwa_loss(l1, l2, s1, s2);
    }
    throw ValueError("combined_loss: bad scheme");
}

// ------------------------------------------------------------ EstimatorModel

EstimatorModel::EstimatorModel(EstimatorConfig cfg, TaskRole role, int channels, int buses,
                               std::uint64_t seed, std::string prefix)
    : cfg_(cfg), role_(role), channels_(channels), buses_(buses), prefix_(std::move(prefix)) {
    if (cfg_.conv_kernel % 2 == 0) throw ValueError("estimator: conv kernel width must be odd");
    RandomSource rng = RandomSource(seed).fork(0x657374696d617401ull);
    const std::size_t m = static_cast<std::size_t>(channels);
    const std::size_t w = static_cast<std::size_t>(cfg_.trunk_width);
    const std::size_t n = static_cast<std::size_t>(buses);

    std::size_t zdim = m;
    switch (cfg_.arch) {
        case Architecture::mlp: {
            in_w_ = dense(m, w, rng);
            in_b_ = bias(w);
            for (int b = 1; b < cfg_.trunk_blocks; ++b) {
                TrunkBlock blk;
                blk.w1 = dense(w, w, rng);
                blk.b1 = bias(w);
                blocks_.push_back(std::move(blk));
            }
            break;
        }
        case Architecture::resnetd: {
            in_w_ = dense(m, w, rng);
            in_b_ = bias(w);
            for (int b = 0; b < cfg_.trunk_blocks; ++b) {
                TrunkBlock blk;
                blk.w1 = dense(w, w, rng);
                blk.b1 = bias(w);
                blk.w2 = dense(w, w, rng);
                blk.b2 = bias(w);
                blocks_.push_back(std::move(blk));
            }
            break;
        }
        case Architecture::cnn_prox: {
            const std::size_t c = static_cast<std::size_t>(cfg_.conv_channels);
            const std::size_t kw = static_cast<std::size_t>(cfg_.conv_kernel);
            conv_kernel_ = ad::random_normal({c, 2, kw}, 1.0 / std::sqrt(2.0 * kw), rng);
            zdim = c * m;
            [[fallthrough]];
        }
        case Architecture::proxlinear: {
            for (int b = 0; b < cfg_.trunk_blocks; ++b) {
                TrunkBlock blk;
                if (b > 0) blk.w_state = dense(w, w, rng);
                blk.w_meas = dense(zdim, w, rng);
                blk.bias = bias(w);
                blocks_.push_back(std::move(blk));
            }
            break;
        }
    }

    const std::size_t hw = static_cast<std::size_t>(cfg_.head_width);
    auto make_head = [&](std::size_t out) {
        Head h;
        h.w1 = dense(w, hw, rng);
        h.b1 = bias(hw);
        h.w2 = dense(hw, out, rng);
        h.b2 = bias(out);
        return h;
    };
    if (role_ == TaskRole::both || role_ == TaskRole::magnitude) head_v_ = make_head(n);
    if (role_ == TaskRole::both || role_ == TaskRole::angle) head_t_ = make_head(n);
    if (role_ == TaskRole::mixed) head_mixed_ = make_head(2 * n);
}

Tensor EstimatorModel::trunk(const Tensor& values, const Tensor& mask,
                             std::vector<Tensor>* trace) const {
    using namespace ad;
    if (values.cols() != static_cast<std::size_t>(channels_))
        throw ShapeError("estimator: input width mismatch");
    auto note = [&](const Tensor& t) {
        if (trace) trace->push_back(t);
    };
    switch (cfg_.arch) {
        case Architecture::mlp: {
            Tensor h = relu(add(matmul(values, in_w_), in_b_));
            note(h);
            for (const TrunkBlock& b : blocks_) {
                h = relu(add(matmul(h, b.w1), b.b1));
                note(h);
            }
            return h;
        }
        case Architecture::resnetd: {
            Tensor h = relu(add(matmul(values, in_w_), in_b_));
            note(h);
            for (const TrunkBlock& b : blocks_) {
                Tensor inner = relu(add(matmul(h, b.w1), b.b1));
                h = relu(add(h, add(matmul(inner, b.w2), b.b2)));
                note(h);
            }
            return h;
        }
        case Architecture::proxlinear:
        case Architecture::cnn_prox: {
            Tensor z = values;
            if (cfg_.arch == Architecture::cnn_prox) {
                Tensor stacked = concat_rows({values, mask});  // [2 x m]
                Tensor conv = relu(conv1d(stacked, conv_kernel_, (cfg_.conv_kernel - 1) / 2));
                z = reshape(conv, {1, conv.size()});
            }
            Tensor u;
            for (std::size_t b = 0; b < blocks_.size(); ++b) {
                const TrunkBlock& blk = blocks_[b];
                if (b == 0) {
                    u = relu(add(matmul(z, blk.w_meas), blk.bias));
                } else {
                    u = proxlinear_block(u, z, blk.w_state, blk.w_meas, blk.bias);
                }
                note(u);
            }
            return u;
        }
    }
    throw ValueError("estimator: bad architecture");
}

Outputs EstimatorModel::forward(const Tensor& values, const Tensor& mask) const {
    using namespace ad;
    Tensor feat = trunk(values, mask, nullptr);
    auto run_head = [&](const Head& h) {
        Tensor hidden = relu(add(matmul(feat, h.w1), h.b1));
        return add(matmul(hidden, h.w2), h.b2);
    };
    Outputs out;
    if (role_ == TaskRole::both || role_ == TaskRole::magnitude) out.v = run_head(head_v_);
    if (role_ == TaskRole::both || role_ == TaskRole::angle) out.theta = run_head(head_t_);
    if (role_ == TaskRole::mixed) out.mixed = run_head(head_mixed_);
    return out;
}

std::vector<Tensor> EstimatorModel::trunk_trace(const Tensor& values, const Tensor& mask) const {
    std::vector<Tensor> trace;
    trunk(values, mask, &trace);
    return trace;
}

NamedParams EstimatorModel::parameters() const {
    NamedParams p;
    auto put = [&](const std::string& name, const Tensor& t) {
        if (t.defined()) p.emplace_back(prefix_ + name, t);
    };
    put(".conv.kernel", conv_kernel_);
    put(".trunk.in_w", in_w_);
    put(".trunk.in_b", in_b_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string tag = ".trunk.block" + std::to_string(b);
        put(tag + ".w_state", blocks_[b].w_state);
        put(tag + ".w_meas", blocks_[b].w_meas);
        put(tag + ".bias", blocks_[b].bias);
        put(tag + ".w1", blocks_[b].w1);
        put(tag + ".b1", blocks_[b].b1);
        put(tag + ".w2", blocks_[b].w2);
        put(tag + ".b2", blocks_[b].b2);
    }
    auto put_head = [&](const char* tag, const Head& h) {
        if (!h.w1.defined()) return;
        put(std::string(tag) + ".w1", h.w1);
        put(std::string(tag) + ".b1", h.b1);
        put(std::string(tag) + ".w2", h.w2);
        put(std::string(tag) + ".b2", h.b2);
    };
    put_head(".head_v", head_v_);
    put_head(".head_t", head_t_);
    put_head(".head_mixed", head_mixed_);
    return p;
}

// ---------------------------------------------------------------- datasets

StateScaler StateScaler::fit(const data::TimeSeriesDataset& train, bool center_only) {
    if (train.states.empty()) throw ValueError("StateScaler: empty training split");
    std::vector<std::vector<double>> v_rows, t_rows;
    v_rows.reserve(train.states.size());
    for (const auto& s : train.states) {
        v_rows.push_back(s.v);
        t_rows.push_back(s.theta);
    }
    StateScaler scaler;
    scaler.v_stats = data::NormalizationStats::fit_columns(v_rows);
    scaler.theta_stats = data::NormalizationStats::fit_columns(t_rows);
    if (center_only) {
        std::fill(scaler.v_stats.std.begin(), scaler.v_stats.std.end(), 1.0);
        std::fill(scaler.theta_stats.std.begin(), scaler.theta_stats.std.end(), 1.0);
    }
    return scaler;
}

EstimatorDataset EstimatorDataset::build(const data::TimeSeriesDataset& ds,
                                         const data::NormalizationStats& meas_stats,
                                         const StateScaler& scaler, int slack_bus) {
    EstimatorDataset out;
    out.slack_bus = slack_bus;
    const std::size_t m = ds.channels();
    const std::size_t n = ds.states.empty() ? 0 : ds.states[0].size();
    out.inputs.reserve(ds.steps());
    for (std::size_t t = 0; t < ds.steps(); ++t) {
        const auto& f = ds.frames[t];
        std::vector<double> in(m, 0.0), mk(m, 0.0);
        for (std::size_t c = 0; c < m; ++c) {
            if (f.mask[c]) {
                in[c] = meas_stats.to_norm(c, f.values[c]);
                mk[c] = 1.0;
            }
        }
        out.inputs.push_back(std::move(in));
        out.masks.push_back(std::move(mk));
        std::vector<double> vt(n), tt(n);
        for (std::size_t i = 0; i < n; ++i) {
            vt[i] = scaler.v_stats.to_norm(i, ds.states[t].v[i]);
            tt[i] = scaler.theta_stats.to_norm(i, ds.states[t].theta[i]);
        }
        out.v_targets.push_back(std::move(vt));
        out.theta_targets.push_back(std::move(tt));
    }
    return out;
}

// ----------------------------------------------------------------- training

namespace {

struct SampleLoss {
    Tensor combined;
    double l1 = 0.0;
    double l2 = 0.0;
};

// Per-sample loss under a scheme. The slack angle is excluded via weights.
SampleLoss sample_loss(const TrainedEstimator& est, const TaskWeighting& weighting,
                       const EstimatorDataset& ds, std::size_t idx, double delta,
                       const Tensor& theta_weights, const Tensor& mixed_weights) {
    using namespace ad;
    Tensor in = Tensor::from(ds.inputs[idx], {1, ds.inputs[idx].size()});
    Tensor mk = Tensor::from(ds.masks[idx], {1, ds.masks[idx].size()});
    SampleLoss out;
    switch (weighting.scheme) {
        case Scheme::stl: {
            Outputs ov = est.mag->forward(in, mk);
            Outputs ot = est.ang->forward(in, mk);
            Tensor l1 = huber_loss(ov.v, Tensor::from(ds.v_targets[idx], ov.v.shape()), delta);
            Tensor l2 = huber_loss(ot.theta, Tensor::from(ds.theta_targets[idx], ot.theta.shape()),
                                   delta, theta_weights);
            out.l1 = l1.item();
            out.l2 = l2.item();
            out.combined = add(l1, l2);  // independent parameter sets; grads stay separated
            return out;
        }
        case Scheme::mix: {
            Outputs o = est.joint->forward(in, mk);
            std::vector<double> target = ds.v_targets[idx];
            target.insert(target.end(), ds.theta_targets[idx].begin(),
                          ds.theta_targets[idx].end());
            Tensor l = huber_loss(o.mixed, Tensor::from(target, o.mixed.shape()), delta,
                                  mixed_weights);
            out.l1 = l.item();
            out.combined = combined_loss(weighting, l);
            return out;
        }
        case Scheme::uniform_scaling:
        case Scheme::uwa: {
            Outputs o = est.joint->forward(in, mk);
            Tensor l1 = huber_loss(o.v, Tensor::from(ds.v_targets[idx], o.v.shape()), delta);
            Tensor l2 = huber_loss(o.theta, Tensor::from(ds.theta_targets[idx], o.theta.shape()),
                                   delta, theta_weights);
            out.l1 = l1.item();
            out.l2 = l2.item();
            out.combined = combined_loss(weighting, l1, l2, est.s1, est.s2);
            return out;
        }
    }
    throw ValueError("sample_loss: bad scheme");
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

TrainedEstimator train_estimator(const EstimatorConfig& cfg, const TaskWeighting& weighting,
                                 const EstimatorDataset& train, const EstimatorDataset& val,
                                 const data::NormalizationStats& meas_stats,
                                 const StateScaler& scaler, int bus_count,
                                 const EstimatorTrainConfig& tc, EstimatorHistory* history_out) {
    if (train.size() == 0) throw ValueError("train_estimator: empty training set");
    const int channels = static_cast<int>(train.inputs[0].size());

    TrainedEstimator est;
    est.scheme = weighting.scheme;
    est.config = cfg;
    est.meas_stats = meas_stats;
    est.state_scaler = scaler;
    est.slack_bus = train.slack_bus;
    est.bus_count = bus_count;
    switch (weighting.scheme) {
        case Scheme::stl:
            est.mag = std::make_shared<EstimatorModel>(cfg, TaskRole::magnitude, channels,
                                                       bus_count, tc.seed, "mag");
            est.ang = std::make_shared<EstimatorModel>(cfg, TaskRole::angle, channels, bus_count,
                                                       tc.seed + 1, "ang");
            break;
        case Scheme::mix:
            est.joint = std::make_shared<EstimatorModel>(cfg, TaskRole::mixed, channels, bus_count,
                                                         tc.seed, "joint");
            break;
        case Scheme::uniform_scaling:
        case Scheme::uwa:
            est.joint = std::make_shared<EstimatorModel>(cfg, TaskRole::both, channels, bus_count,
                                                         tc.seed, "joint");
            break;
    }
    if (weighting.scheme == Scheme::uwa) {
        est.s1 = Tensor::scalar(0.0, true);
        est.s2 = Tensor::scalar(0.0, true);
    }

    // angle weights: drop the slack entry; mixed weights: ones ++ angle weights
    std::vector<double> tw(bus_count, 1.0);
    tw[train.slack_bus] = 0.0;
    Tensor theta_weights = Tensor::from(tw, {1, static_cast<std::size_t>(bus_count)});
    std::vector<double> mw(bus_count, 1.0);
    mw.insert(mw.end(), tw.begin(), tw.end());
    Tensor mixed_weights = Tensor::from(mw, {1, static_cast<std::size_t>(2 * bus_count)});

    const NamedParams params = est.parameters();
    ad::AdamOptimizer opt({tc.learning_rate});
    RandomSource order_rng = RandomSource(tc.seed).fork(0x657374736875660aull);

    EstimatorHistory history;
    auto val_loss = [&]() {
        if (val.size() == 0) return 0.0;
        double total = 0.0;
        for (std::size_t i = 0; i < val.size(); ++i)
            total += sample_loss(est, weighting, val, i, tc.huber_delta, theta_weights,
                                 mixed_weights)
                         .combined.item();
        return total / static_cast<double>(val.size());
    };

    auto best = snapshot(params);
    double best_val = val_loss();
    history.best_epoch = -1;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    try {
        for (int epoch = 0; epoch < tc.epochs; ++epoch) {
            order_rng.shuffle(order);
            std::size_t use = order.size();
            if (tc.max_samples_per_epoch > 0)
                use = std::min(use, static_cast<std::size_t>(tc.max_samples_per_epoch));
            double epoch_loss = 0.0;
            std::size_t in_batch = 0;
            opt.zero_grad(params);
            for (std::size_t i = 0; i < use; ++i) {
                ad::Tape tape;
                {
                    ad::Tape::Scope scope(tape);
                    SampleLoss sl = sample_loss(est, weighting, train, order[i], tc.huber_delta,
                                                theta_weights, mixed_weights);
                    epoch_loss += sl.combined.item();
                    tape.backward(ad::mul(sl.combined, 1.0 / tc.batch));
                }
                if (++in_batch == static_cast<std::size_t>(tc.batch) || i + 1 == use) {
                    opt.step(params);
                    opt.zero_grad(params);
                    in_batch = 0;
                }
            }
            history.train_loss.push_back(use ? epoch_loss / static_cast<double>(use) : 0.0);
            const double vl = val_loss();
            history.val_loss.push_back(vl);
            if (weighting.scheme == Scheme::uwa) {
                history.s1_track.push_back(est.s1.item());
                history.s2_track.push_back(est.s2.item());
            }
            if (vl < best_val) {
                best_val = vl;
                best = snapshot(params);
                history.best_epoch = epoch;
            }
        }
    } catch (const NumericError&) {
        history.diverged = true;
    }
    restore(params, best);
    if (history_out) *history_out = history;
    return est;
}

// --------------------------------------------------------------- inference

EstimationResult TrainedEstimator::estimate(const grid::MeasurementFrame& raw_frame) const {
    using namespace ad;
    const std::size_t m = raw_frame.size();
    if (m != meas_stats.channels()) throw ShapeError("estimate: frame width mismatch");
    std::vector<double> in(m, 0.0), mk(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
        if (raw_frame.mask[c]) {
            in[c] = meas_stats.to_norm(c, raw_frame.values[c]);
            mk[c] = 1.0;
        }
    }
    Tensor values = Tensor::from(in, {1, m});
    Tensor mask = Tensor::from(mk, {1, m});

    std::vector<double> v_norm, t_norm;
    if (scheme == Scheme::stl) {
        v_norm = mag->forward(values, mask).v.values();
        t_norm = ang->forward(values, mask).theta.values();
    } else if (scheme == Scheme::mix) {
        std::vector<double> both = joint->forward(values, mask).mixed.values();
        v_norm.assign(both.begin(), both.begin() + bus_count);
        t_norm.assign(both.begin() + bus_count, both.end());
    } else {
        Outputs o = joint->forward(values, mask);
        v_norm = o.v.values();
        t_norm = o.theta.values();
    }

    EstimationResult result;
    result.v.resize(bus_count);
    result.theta.resize(bus_count);
    for (int i = 0; i < bus_count; ++i) {
        result.v[i] = state_scaler.v_stats.to_raw(i, v_norm[i]);
        result.theta[i] = state_scaler.theta_stats.to_raw(i, t_norm[i]);
    }
    result.theta[slack_bus] = 0.0;
    if (scheme == Scheme::uwa) {
        result.sigma1 = std::sqrt(std::exp(s1.item()));
        result.sigma2 = std::sqrt(std::exp(s2.item()));
    }
    return result;
}

NamedParams TrainedEstimator::parameters() const {
    NamedParams p;
    if (mag)
        for (auto& kv : mag->parameters()) p.push_back(kv);
    if (ang)
        for (auto& kv : ang->parameters()) p.push_back(kv);
    if (joint)
        for (auto& kv : joint->parameters()) p.push_back(kv);
    if (s1.defined()) p.emplace_back("uwa.s1", s1);
    if (s2.defined()) p.emplace_back("uwa.s2", s2);
    return p;
}

void export_sigma_csv(const EstimatorHistory& history, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("sigma history: cannot write " + path);
    os << "epoch,s1,s2,sigma1,sigma2\n";
    char buf[128];
    for (std::size_t e = 0; e < history.s1_track.size(); ++e) {
        const double s1 = history.s1_track[e], s2 = history.s2_track[e];
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g\n", e, s1, s2,
                      std::sqrt(std::exp(s1)), std::sqrt(std::exp(s2)));
        os << buf;
    }
}

// ------------------------------------------------------------- persistence

void save_estimator(const TrainedEstimator& est, const std::string& prefix) {
    json j;
    j["scheme"] = scheme_name(est.scheme);
    j["config"] = {{"arch", architecture_name(est.config.arch)},
                   {"trunk_width", est.config.trunk_width},
                   {"trunk_blocks", est.config.trunk_blocks},
                   {"head_width", est.config.head_width},
                   {"conv_channels", est.config.conv_channels},
                   {"conv_kernel", est.config.conv_kernel}};
    j["bus_count"] = est.bus_count;
    j["slack_bus"] = est.slack_bus;
    j["channels"] = est.meas_stats.channels();
    j["meas_stats"] = {{"mean", est.meas_stats.mean},
                       {"std", est.meas_stats.std},
                       {"constant", est.meas_stats.constant}};
    j["state_scaler"] = {{"v_mean", est.state_scaler.v_stats.mean},
                         {"v_std", est.state_scaler.v_stats.std},
                         {"v_constant", est.state_scaler.v_stats.constant},
                         {"t_mean", est.state_scaler.theta_stats.mean},
                         {"t_std", est.state_scaler.theta_stats.std},
                         {"t_constant", est.state_scaler.theta_stats.constant}};
    std::ofstream os(prefix + ".json");
    if (!os) throw IoError("save_estimator: cannot write " + prefix + ".json");
    os << j.dump(2) << "\n";
    ad::save_checkpoint(prefix + ".ckpt", est.parameters());
}

TrainedEstimator load_estimator(const std::string& prefix) {
    std::ifstream is(prefix + ".json");
    if (!is) throw IoError("load_estimator: cannot open " + prefix + ".json");
    json j;
    is >> j;

    TrainedEstimator est;
    est.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    est.config.arch = architecture_from_name(j.at("config").at("arch").get<std::string>());
    est.config.trunk_width = j.at("config").at("trunk_width").get<int>();
    est.config.trunk_blocks = j.at("config").at("trunk_blocks").get<int>();
    est.config.head_width = j.at("config").at("head_width").get<int>();
    est.config.conv_channels = j.at("config").at("conv_channels").get<int>();
    est.config.conv_kernel = j.at("config").at("conv_kernel").get<int>();
    est.bus_count = j.at("bus_count").get<int>();
    est.slack_bus = j.at("slack_bus").get<int>();
    const int channels = j.at("channels").get<int>();
    est.meas_stats.mean = j.at("meas_stats").at("mean").get<std::vector<double>>();
    est.meas_stats.std = j.at("meas_stats").at("std").get<std::vector<double>>();
    est.meas_stats.constant = j.at("meas_stats").at("constant").get<std::vector<std::uint8_t>>();
    est.state_scaler.v_stats.mean = j.at("state_scaler").at("v_mean").get<std::vector<double>>();
    est.state_scaler.v_stats.std = j.at("state_scaler").at("v_std").get<std::vector<double>>();
    est.state_scaler.v_stats.constant =
        j.at("state_scaler").at("v_constant").get<std::vector<std::uint8_t>>();
    est.state_scaler.theta_stats.mean =
        j.at("state_scaler").at("t_mean").get<std::vector<double>>();
    est.state_scaler.theta_stats.std = j.at("state_scaler").at("t_std").get<std::vector<double>>();
    est.state_scaler.theta_stats.constant =
        j.at("state_scaler").at("t_constant").get<std::vector<std::uint8_t>>();

    switch (est.scheme) {
        case Scheme::stl:
            est.mag = std::make_shared<EstimatorModel>(est.config, TaskRole::magnitude, channels,
                                                       est.bus_count, 0, "mag");
            est.ang = std::make_shared<EstimatorModel>(est.config, TaskRole::angle, channels,
                                                       est.bus_count, 0, "ang");
            break;
        case Scheme::mix:
            est.joint = std::make_shared<EstimatorModel>(est.config, TaskRole::mixed, channels,
                                                         est.bus_count, 0, "joint");
            break;
        case Scheme::uniform_scaling:
        case Scheme::uwa:
            est.joint = std::make_shared<EstimatorModel>(est.config, TaskRole::both, channels,
                                                         est.bus_count, 0, "joint");
            break;
    }
    if (est.scheme == Scheme::uwa) {
        est.s1 = Tensor::scalar(0.0, true);
        est.s2 = Tensor::scalar(0.0, true);
    }

    const NamedParams loaded = ad::load_checkpoint(prefix + ".ckpt");
    NamedParams live = est.parameters();
    if (loaded.size() != live.size())
        throw IoError("load_estimator: checkpoint/model parameter count mismatch");
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (loaded[i].first != live[i].first)
            throw IoError("load_estimator: parameter name mismatch at index " + std::to_string(i));
        live[i].second.assign(loaded[i].second);
    }
    return est;
}

}  // namespace dsse::estimator
