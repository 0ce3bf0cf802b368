#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsse/error.hpp"
#include "dsse/random.hpp"

namespace dsse::ad {

// Dense 64-bit float tensor with reverse-mode automatic differentiation.
//
// Tensor is a value-semantic handle over shared storage: copies alias the
// same buffer, which is what lets recorded tape nodes and optimizers refer
// to the same parameters the model holds. Operations are free functions
// (add, matmul, ...) that record their backward closure on the active Tape
// whenever an input requires gradients.
class Tensor {
public:
    struct Data {
        std::vector<std::size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;  // allocated lazily, same length as values
        bool requires_grad = false;
    };

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<double> values, std::vector<std::size_t> shape,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return d_->shape; }
    std::size_t size() const { return d_->values.size(); }
    std::size_t rank() const { return d_->shape.size(); }

    // 2-D helpers; a 1-D tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool grad_allocated() const { return !d_->grad.empty(); }
    std::vector<double>& grad();              // allocates zeros on first use
    const std::vector<double>& grad() const;  // throws if never allocated
    void zero_grad();

    double item() const;  // single-element tensors only
    double at(std::size_t i) const { return d_->values[i]; }
    double at(std::size_t r, std::size_t c) const { return d_->values[r * cols() + c]; }

    // Detached deep copy (no grad, no tape history).
    Tensor clone() const;
    // Overwrite values in place, keeping identity. Shapes must match.
    void assign(const Tensor& other);

    // Stable identity for optimizer state maps.
    const Data* id() const { return d_.get(); }

private:
    explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}
    std::shared_ptr<Data> d_;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Records executed operations in topological order. One backward() walks the
// list in reverse exactly once; recording after backward() requires clear().
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    // RAII activation. Ops record onto the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

    // `touched` lists every tensor the node reads or writes gradients for;
    // their grads are finiteness-checked after the backward pass.
    void record(std::function<void()> backward, std::vector<Tensor> touched);

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Seeds d(loss)/d(loss) = 1 and runs every node once, newest first.
    // Gradient accumulation is additive; callers zero leaf grads between steps.
    void backward(const Tensor& loss);

    void clear();

private:
    struct Node {
        std::function<void()> backward;
        std::vector<Tensor> touched;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations. All throw ShapeError on operand mismatch and NumericError if an
// output (or, after backward, a gradient) is non-finite.

// Elementwise; shapes must match, or `b` may be a scalar tensor, or `b` may be
// a length-cols vector broadcast across the rows of a 2-D `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);

// Same element order, new shape; gradient passes through untouched.
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Cross-correlation with zero padding. x: [in_ch x length],
// kernel: [out_ch x in_ch x width]. Output: [out_ch x (length + 2p - width + 1)].
Tensor conv1d(const Tensor& x, const Tensor& kernel, int padding);

// Softmax along the last axis, computed max-subtracted.
Tensor softmax(const Tensor& x);
// Row i is a softmax over columns 0..i only; future columns get exactly zero.
Tensor causal_softmax(const Tensor& scores);

// Per-row normalization over the last axis, then elementwise gain/bias
// (both of length cols). Epsilon sits inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Reductions to scalars.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Losses. `weights`, when defined, must match pred's shape; the result is the
// weighted mean sum(w*l)/sum(w). Targets and weights never receive gradients.
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& weights = {});
Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta,
                  const Tensor& weights = {});

// Structural ops.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor row(const Tensor& a, std::size_t index);  // -> [1 x cols]
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// ---------------------------------------------------------------------------
// Adam with bias correction. Moment buffers are keyed by parameter identity
// and created on first step.
struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const NamedParams& params);
    void zero_grad(const NamedParams& params);
    long step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    long step_count_ = 0;
    std::unordered_map<const Tensor::Data*, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Parameter checkpoints: little-endian binary, format-version header.
void save_checkpoint(const std::string& path, const NamedParams& params);
NamedParams load_checkpoint(const std::string& path);

// Utilities.
void check_finite(const Tensor& t, const char* what);
Tensor random_normal(std::vector<std::size_t> shape, double std, RandomSource& rng,
                     bool requires_grad = true);

}  // namespace dsse::ad
