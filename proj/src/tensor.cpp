#include "dsse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace dsse::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr || g_active_tape->consumed()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void record(std::function<void()> fn, std::vector<Tensor> touched) {
    g_active_tape->record(std::move(fn), std::move(touched));
}

enum class Broadcast { same, scalar_rhs, row_vector_rhs };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.size() == 1) return Broadcast::scalar_rhs;
    if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) return Broadcast::row_vector_rhs;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ----------------------------------------------------------------- Tensor

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto d = std::make_shared<Data>();
    d->values.assign(numel(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(std::vector<double> values, std::vector<std::size_t> shape,
                    bool requires_grad) {
    if (values.size() != numel(shape))
        throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    auto d = std::make_shared<Data>();
    d->values = std::move(values);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({value}, {1}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return from(std::move(values), {n}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return d_->shape[0];
    throw ShapeError("rows(): tensor has rank " + std::to_string(rank()));
}

std::size_t Tensor::cols() const {
    if (rank() == 1) return d_->shape[0];
    if (rank() == 2) return d_->shape[1];
    throw ShapeError("cols(): tensor has rank " + std::to_string(rank()));
}

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) throw ValueError("grad(): no gradient has been recorded");
    return d_->grad;
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return d_->values[0];
}

Tensor Tensor::clone() const {
    return Tensor::from(d_->values, d_->shape, false);
}

void Tensor::assign(const Tensor& other) {
    if (d_->shape != other.shape())
        throw ShapeError("assign: shape mismatch " + shape_str(d_->shape) + " vs " +
                         shape_str(other.shape()));
    d_->values = other.values();
}

void check_finite(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw NumericError(std::string(what) + ": non-finite value produced");
    }
}

// ------------------------------------------------------------------- Tape

Tape::~Tape() = default;

Tape::Scope::Scope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward, std::vector<Tensor> touched) {
    if (consumed_)
        throw ValueError("Tape::record: tape already consumed by backward(); clear() first");
    nodes_.push_back(Node{std::move(backward), std::move(touched)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar");
    if (consumed_) throw ValueError("backward: tape already consumed; clear() first");
    consumed_ = true;
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
    for (const Node& node : nodes_) {
        for (const Tensor& t : node.touched) {
            if (!t.grad_allocated()) continue;
            for (double g : t.grad()) {
                if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
            }
        }
    }
}

void Tape::clear() {
    nodes_.clear();
    consumed_ = false;
}

// --------------------------------------------------------- elementwise ops

namespace {

Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                 double (*fwd)(double, double), double (*dfa)(double, double),
                 double (*dfb)(double, double)) {
    const Broadcast bc = classify(a, b, name);
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    const std::size_t c = (bc == Broadcast::row_vector_rhs) ? a.cols() : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double bi = bc == Broadcast::same       ? bv[i]
                          : bc == Broadcast::scalar_rhs ? bv[0]
                                                        : bv[i % c];
        out[i] = fwd(av[i], bi);
    }
    const bool rec = want_grad({&a, &b});
    Tensor result = Tensor::from(std::move(out), a.shape(), rec);
    check_finite(result, name);
    if (rec) {
        Tensor ac = a, bc_t = b, oc = result;
        record(
            [ac, bc_t, oc, bc, c, dfa, dfb]() mutable {
                const auto& go = oc.grad();
                const auto& av = ac.values();
                const auto& bv = bc_t.values();
                const std::size_t n = av.size();
                if (ac.requires_grad()) {
                    auto& ga = ac.grad();
                    for (std::size_t i = 0; i < n; ++i) {
                        const double bi = bc == Broadcast::same       ? bv[i]
                                          : bc == Broadcast::scalar_rhs ? bv[0]
                                                                        : bv[i % c];
                        ga[i] += go[i] * dfa(av[i], bi);
                    }
                }
                if (bc_t.requires_grad()) {
                    auto& gb = bc_t.grad();
                    for (std::size_t i = 0; i < n; ++i) {
                        const double bi = bc == Broadcast::same       ? bv[i]
                                          : bc == Broadcast::scalar_rhs ? bv[0]
                                                                        : bv[i % c];
                        const std::size_t j = bc == Broadcast::same       ? i
                                              : bc == Broadcast::scalar_rhs ? 0
                                                                            : i % c;
                        gb[j] += go[i] * dfb(av[i], bi);
                    }
                }
            },
            {a, b, result});
    }
    return result;
}

Tensor unary_op(const Tensor& a, const char* name, double (*fwd)(double),
                double (*grad_from_in_out)(double, double)) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    const bool rec = want_grad({&a});
    Tensor result = Tensor::from(std::move(out), a.shape(), rec);
    check_finite(result, name);
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc, grad_from_in_out]() mutable {
                const auto& go = oc.grad();
                const auto& av = ac.values();
                const auto& ov = oc.values();
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < av.size(); ++i)
                    ga[i] += go[i] * grad_from_in_out(av[i], ov[i]);
            },
            {a, result});
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

Tensor square(const Tensor& a) {
    return unary_op(
        a, "square", [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    return unary_op(
        a, "gelu",
        [](double x) {
            const double u = kGeluC * (x + kGeluA * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(u));
        },
        [](double x, double) {
            const double u = kGeluC * (x + kGeluA * x * x * x);
            const double t = std::tanh(u);
            const double sech2 = 1.0 - t * t;
            return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != a.size()) throw ShapeError("reshape: element count mismatch");
    const bool rec = want_grad({&a});
    Tensor result = Tensor::from(a.values(), std::move(shape), rec);
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc]() mutable {
                const auto& go = oc.grad();
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
            },
            {a, result});
    }
    return result;
}

// ------------------------------------------------------------ linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols();
    const std::size_t k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av_il = av[i * k + l];
            if (av_il == 0.0) continue;
            const double* brow = bv.data() + l * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av_il * brow[j];
        }
    }
    const bool rec = want_grad({&a, &b});
    Tensor result = Tensor::from(std::move(out), {m, n}, rec);
    check_finite(result, "matmul");
    if (rec) {
        Tensor ac = a, bc = b, oc = result;
        record(
            [ac, bc, oc, m, k, n]() mutable {
                const auto& go = oc.grad();
                if (ac.requires_grad()) {
                    auto& ga = ac.grad();
                    const auto& bv = bc.values();
                    // dA = dC * B^T
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t l = 0; l < k; ++l) {
                            const double* grow = go.data() + i * n;
                            const double* brow = bv.data() + l * n;
                            double acc = 0.0;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + l] += acc;
                        }
                    }
                }
                if (bc.requires_grad()) {
                    auto& gb = bc.grad();
                    const auto& av = ac.values();
                    // dB = A^T * dC
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t l = 0; l < k; ++l) {
                            const double av_il = av[i * k + l];
                            if (av_il == 0.0) continue;
                            const double* grow = go.data() + i * n;
                            double* gbrow = gb.data() + l * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av_il * grow[j];
                        }
                    }
                }
            },
            {a, b, result});
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto& av = a.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    const bool rec = want_grad({&a});
    Tensor result = Tensor::from(std::move(out), {c, r}, rec);
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc, r, c]() mutable {
                const auto& go = oc.grad();
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
            },
            {a, result});
    }
    return result;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, int padding) {
    if (x.rank() != 2 || kernel.rank() != 3)
        throw ShapeError("conv1d: expected x [in_ch x len] and kernel [out_ch x in_ch x width]");
    if (padding < 0) throw ValueError("conv1d: negative padding");
    const std::size_t in_ch = x.shape()[0], len = x.shape()[1];
    const std::size_t out_ch = kernel.shape()[0], k_in = kernel.shape()[1],
                      width = kernel.shape()[2];
    if (k_in != in_ch)
        throw ShapeError("conv1d: kernel expects " + std::to_string(k_in) + " input channels, got " +
                         std::to_string(in_ch));
    const std::size_t padded = len + 2 * static_cast<std::size_t>(padding);
    if (width > padded) throw ShapeError("conv1d: kernel wider than padded input");
    const std::size_t out_len = padded - width + 1;

    std::vector<double> out(out_ch * out_len, 0.0);
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    auto x_at = [&](std::size_t c, long p) -> double {
        const long t = p - padding;
        if (t < 0 || t >= static_cast<long>(len)) return 0.0;
        return xv[c * len + static_cast<std::size_t>(t)];
    };
    for (std::size_t oc = 0; oc < out_ch; ++oc)
        for (std::size_t t = 0; t < out_len; ++t) {
            double acc = 0.0;
            for (std::size_t ic = 0; ic < in_ch; ++ic)
                for (std::size_t w = 0; w < width; ++w)
                    acc += kv[(oc * in_ch + ic) * width + w] * x_at(ic, static_cast<long>(t + w));
            out[oc * out_len + t] = acc;
        }

    const bool rec = want_grad({&x, &kernel});
    Tensor result = Tensor::from(std::move(out), {out_ch, out_len}, rec);
    check_finite(result, "conv1d");
    if (rec) {
        Tensor xc = x, kc = kernel, ocn = result;
        record(
            [xc, kc, ocn, in_ch, len, out_ch, width, out_len, padding]() mutable {
                const auto& go = ocn.grad();
                const auto& xv = xc.values();
                const auto& kv = kc.values();
                const bool gx = xc.requires_grad();
                const bool gk = kc.requires_grad();
                for (std::size_t oc = 0; oc < out_ch; ++oc)
                    for (std::size_t t = 0; t < out_len; ++t) {
                        const double g = go[oc * out_len + t];
                        if (g == 0.0) continue;
                        for (std::size_t ic = 0; ic < in_ch; ++ic)
                            for (std::size_t w = 0; w < width; ++w) {
                                const long src = static_cast<long>(t + w) - padding;
                                if (src < 0 || src >= static_cast<long>(len)) continue;
                                const std::size_t xi = ic * len + static_cast<std::size_t>(src);
                                const std::size_t ki = (oc * in_ch + ic) * width + w;
                                if (gx) xc.grad()[xi] += g * kv[ki];
                                if (gk) kc.grad()[ki] += g * xv[xi];
                            }
                    }
            },
            {x, kernel, result});
    }
    return result;
}

// -------------------------------------------------------------- normalizers

Tensor softmax(const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw ShapeError("softmax: empty axis");
    std::vector<double> out(r * c);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        const double* xr = xv.data() + i * c;
        double mx = xr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(xr[j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    const bool rec = want_grad({&x});
    Tensor result = Tensor::from(std::move(out), x.shape(), rec);
    check_finite(result, "softmax");
    if (rec) {
        Tensor xc = x, ocn = result;
        record(
            [xc, ocn, r, c]() mutable {
                const auto& go = ocn.grad();
                const auto& yv = ocn.values();
                auto& gx = xc.grad();
                for (std::size_t i = 0; i < r; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * yv[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                        gx[i * c + j] += yv[i * c + j] * (go[i * c + j] - dot);
                }
            },
            {x, result});
    }
    return result;
}

Tensor causal_softmax(const Tensor& scores) {
    if (scores.rank() != 2) throw ShapeError("causal_softmax: expected a 2-D score matrix");
    const std::size_t r = scores.rows(), c = scores.cols();
    if (c == 0) throw ShapeError("causal_softmax: empty axis");
    std::vector<double> out(r * c, 0.0);
    const auto& xv = scores.values();
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t lim = std::min(i + 1, c);  // columns 0..i allowed
        const double* xr = xv.data() + i * c;
        double mx = xr[0];
        for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < lim; ++j) {
            out[i * c + j] = std::exp(xr[j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < lim; ++j) out[i * c + j] /= denom;
    }
    const bool rec = want_grad({&scores});
    Tensor result = Tensor::from(std::move(out), scores.shape(), rec);
    check_finite(result, "causal_softmax");
    if (rec) {
        Tensor xc = scores, ocn = result;
        record(
            [xc, ocn, r, c]() mutable {
                const auto& go = ocn.grad();
                const auto& yv = ocn.values();
                auto& gx = xc.grad();
                for (std::size_t i = 0; i < r; ++i) {
                    const std::size_t lim = std::min(i + 1, c);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < lim; ++j) dot += go[i * c + j] * yv[i * c + j];
                    for (std::size_t j = 0; j < lim; ++j)
                        gx[i * c + j] += yv[i * c + j] * (go[i * c + j] - dot);
                }
            },
            {scores, result});
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.size() != c || bias.size() != c)
        throw ShapeError("layer_norm: gain/bias must match the normalized dimension");
    std::vector<double> out(r * c), xhat(r * c), inv_std(r);
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    for (std::size_t i = 0; i < r; ++i) {
        const double* xr = xv.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xr[j] - mu) * is;
            out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
        }
    }
    const bool rec = want_grad({&x, &gain, &bias});
    Tensor result = Tensor::from(std::move(out), x.shape(), rec);
    check_finite(result, "layer_norm");
    if (rec) {
        Tensor xc = x, gc = gain, bc = bias, ocn = result;
        auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
        auto inv_s = std::make_shared<std::vector<double>>(std::move(inv_std));
        record(
            [xc, gc, bc, ocn, xhat_s, inv_s, r, c]() mutable {
                const auto& go = ocn.grad();
                const auto& gv = gc.values();
                const auto& xh = *xhat_s;
                for (std::size_t i = 0; i < r; ++i) {
                    if (gc.requires_grad()) {
                        auto& gg = gc.grad();
                        for (std::size_t j = 0; j < c; ++j)
                            gg[j] += go[i * c + j] * xh[i * c + j];
                    }
                    if (bc.requires_grad()) {
                        auto& gb = bc.grad();
                        for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
                    }
                    if (xc.requires_grad()) {
                        auto& gx = xc.grad();
                        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                            const double dxh = go[i * c + j] * gv[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh[i * c + j];
                        }
                        mean_dxhat /= static_cast<double>(c);
                        mean_dxhat_xhat /= static_cast<double>(c);
                        for (std::size_t j = 0; j < c; ++j) {
                            const double dxh = go[i * c + j] * gv[j];
                            gx[i * c + j] += (*inv_s)[i] * (dxh - mean_dxhat -
                                                            xh[i * c + j] * mean_dxhat_xhat);
                        }
                    }
                }
            },
            {x, gain, bias, result});
    }
    return result;
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    const auto& av = a.values();
    double s = std::accumulate(av.begin(), av.end(), 0.0);
    const bool rec = want_grad({&a});
    Tensor result = Tensor::scalar(s, rec);
    check_finite(result, "sum");
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc]() mutable {
                const double g = oc.grad()[0];
                auto& ga = ac.grad();
                for (double& gi : ga) gi += g;
            },
            {a, result});
    }
    return result;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    const auto& av = a.values();
    const double n = static_cast<double>(a.size());
    double s = std::accumulate(av.begin(), av.end(), 0.0) / n;
    const bool rec = want_grad({&a});
    Tensor result = Tensor::scalar(s, rec);
    check_finite(result, "mean");
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc, n]() mutable {
                const double g = oc.grad()[0] / n;
                auto& ga = ac.grad();
                for (double& gi : ga) gi += g;
            },
            {a, result});
    }
    return result;
}

// -------------------------------------------------------------------- losses

namespace {

Tensor weighted_pointwise_loss(const Tensor& pred, const Tensor& target, const Tensor& weights,
                               const char* name, const std::function<double(double)>& loss_of_r,
                               const std::function<double(double)>& dloss_dr) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(name) + ": pred/target shape mismatch");
    if (weights.defined() && weights.shape() != pred.shape())
        throw ShapeError(std::string(name) + ": weights shape mismatch");
    const std::size_t n = pred.size();
    if (n == 0) throw ShapeError(std::string(name) + ": empty input");
    const auto& pv = pred.values();
    const auto& tv = target.values();
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.defined() ? weights.values()[i] : 1.0;
        wsum += w;
        acc += w * loss_of_r(pv[i] - tv[i]);
    }
    if (wsum <= 0.0) throw ValueError(std::string(name) + ": weights sum to zero");
    const bool rec = want_grad({&pred});
    Tensor result = Tensor::scalar(acc / wsum, rec);
    check_finite(result, name);
    if (rec) {
        Tensor pc = pred, tc = target, wc = weights, oc = result;
        record(
            [pc, tc, wc, oc, wsum, dloss_dr]() mutable {
                const double g = oc.grad()[0] / wsum;
                const auto& pv = pc.values();
                const auto& tv = tc.values();
                auto& gp = pc.grad();
                for (std::size_t i = 0; i < pv.size(); ++i) {
                    const double w = wc.defined() ? wc.values()[i] : 1.0;
                    gp[i] += g * w * dloss_dr(pv[i] - tv[i]);
                }
            },
            {pred, result});
    }
    return result;
}

}  // namespace

Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& weights) {
    return weighted_pointwise_loss(
        pred, target, weights, "mse_loss", [](double r) { return r * r; },
        [](double r) { return 2.0 * r; });
}

Tensor huber_loss(const Tensor& pred, const Tensor& target, double delta, const Tensor& weights) {
    if (delta <= 0.0) throw ValueError("huber_loss: delta must be positive");
    return weighted_pointwise_loss(
        pred, target, weights, "huber_loss",
        [delta](double r) {
            const double a = std::abs(r);
            return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
        },
        [delta](double r) {
            const double a = std::abs(r);
            return a <= delta ? r : (r > 0 ? delta : -delta);
        });
}

// ---------------------------------------------------------------- structural

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t c = parts[0].cols();
    std::size_t total_rows = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
        total_rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(total_rows * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    const bool rec = any && Tape::active() != nullptr && !Tape::active()->consumed();
    Tensor result = Tensor::from(std::move(out), {total_rows, c}, rec);
    if (rec) {
        std::vector<Tensor> caps = parts;
        Tensor oc = result;
        std::vector<Tensor> touched = parts;
        touched.push_back(result);
        record(
            [caps, oc, c]() mutable {
                const auto& go = oc.grad();
                std::size_t offset = 0;
                for (Tensor& p : caps) {
                    const std::size_t len = p.size();
                    if (p.requires_grad()) {
                        auto& gp = p.grad();
                        for (std::size_t i = 0; i < len; ++i) gp[i] += go[offset + i];
                    }
                    offset += len;
                }
            },
            std::move(touched));
    }
    return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t r = parts[0].rows();
    std::size_t total_cols = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        total_cols += p.cols();
    }
    std::vector<double> out(r * total_cols);
    std::size_t col_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j)
                out[i * total_cols + col_off + j] = p.values()[i * pc + j];
        col_off += pc;
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    const bool rec = any && Tape::active() != nullptr && !Tape::active()->consumed();
    Tensor result = Tensor::from(std::move(out), {r, total_cols}, rec);
    if (rec) {
        std::vector<Tensor> caps = parts;
        Tensor oc = result;
        std::vector<Tensor> touched = parts;
        touched.push_back(result);
        record(
            [caps, oc, r, total_cols]() mutable {
                const auto& go = oc.grad();
                std::size_t col_off = 0;
                for (Tensor& p : caps) {
                    const std::size_t pc = p.cols();
                    if (p.requires_grad()) {
                        auto& gp = p.grad();
                        for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < pc; ++j)
                                gp[i * pc + j] += go[i * total_cols + col_off + j];
                    }
                    col_off += pc;
                }
            },
            std::move(touched));
    }
    return result;
}

Tensor row(const Tensor& a, std::size_t index) {
    const std::size_t r = a.rows(), c = a.cols();
    if (index >= r) throw ShapeError("row: index out of range");
    std::vector<double> out(a.values().begin() + index * c, a.values().begin() + (index + 1) * c);
    const bool rec = want_grad({&a});
    Tensor result = Tensor::from(std::move(out), {1, c}, rec);
    if (rec) {
        Tensor ac = a, oc = result;
        record(
            [ac, oc, index, c]() mutable {
                const auto& go = oc.grad();
                auto& ga = ac.grad();
                for (std::size_t j = 0; j < c; ++j) ga[index * c + j] += go[j];
            },
            {a, result});
    }
    return result;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw ValueError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table.values().begin() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.begin() + i * d);
    }
    const bool rec = want_grad({&table});
    Tensor result = Tensor::from(std::move(out), {ids.size(), d}, rec);
    if (rec) {
        Tensor tc = table, oc = result;
        std::vector<int> ids_c = ids;
        record(
            [tc, oc, ids_c, d]() mutable {
                const auto& go = oc.grad();
                auto& gt = tc.grad();
                for (std::size_t i = 0; i < ids_c.size(); ++i) {
                    double* dst = gt.data() + static_cast<std::size_t>(ids_c[i]) * d;
                    const double* src = go.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            },
            {table, result});
    }
    return result;
}

// ---------------------------------------------------------------------- Adam

void AdamOptimizer::step(const NamedParams& params) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (const auto& [name, p] : params) {
        Tensor param = p;
        auto& values = param.values();
        auto& g = param.grad();  // zero-allocated if backward never reached it
        Moments& mom = moments_[param.id()];
        if (mom.m.empty()) {
            mom.m.assign(values.size(), 0.0);
            mom.v.assign(values.size(), 0.0);
        }
        if (mom.m.size() != values.size())
            throw ShapeError("adam: parameter '" + name + "' changed size");
        for (std::size_t i = 0; i < values.size(); ++i) {
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            values[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            if (!std::isfinite(values[i])) throw NumericError("adam: non-finite parameter update");
        }
    }
}

void AdamOptimizer::zero_grad(const NamedParams& params) {
    for (const auto& [name, p] : params) {
        (void)name;
        Tensor param = p;
        param.zero_grad();
    }
}

// --------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'S', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u64(os, params.size());
    for (const auto& [name, t] : params) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) put_u64(os, d);
        for (double v : t.values()) put_f64(os, v);
    }
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

NamedParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw IoError("load_checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t count = get_u64(is);
    NamedParams params;
    params.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::size_t>(get_u64(is));
            n *= shape[d];
        }
        std::vector<double> values(n);
        for (std::size_t j = 0; j < n; ++j) values[j] = get_f64(is);
        if (!is) throw IoError("load_checkpoint: truncated file " + path);
        params.emplace_back(std::move(name), Tensor::from(std::move(values), std::move(shape)));
    }
    return params;
}

Tensor random_normal(std::vector<std::size_t> shape, double std, RandomSource& rng,
                     bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = rng.gaussian(0.0, std);
    return t;
}

}  // namespace dsse::ad
