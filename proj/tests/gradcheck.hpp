#pragma once

// Finite-difference gradient checking used by both the unit tests and the
// acceptance suite. The numeric side never touches the tape: it re-runs the
// forward pass with perturbed inputs, so it stays independent of the
// reverse-mode path it validates.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dsse/random.hpp"
#include "dsse/tensor.hpp"

namespace gradcheck {

using dsse::RandomSource;
using dsse::ad::Tensor;

// Random tensor whose entries keep |v| >= min_abs (to stay clear of kinks in
// relu / huber when finite differences straddle them).
inline Tensor random_tensor(std::vector<std::size_t> shape, RandomSource& rng, double scale = 1.0,
                            double min_abs = 0.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.values()) {
        do {
            v = rng.gaussian(0.0, scale);
        } while (std::abs(v) < min_abs);
    }
    return t;
}

// Max relative error between reverse-mode and central-difference gradients of
// dot(f(inputs), probe) over every entry of every input with requires_grad.
inline double max_rel_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                            std::vector<Tensor>& inputs, RandomSource& rng, double h = 1e-5) {
    using namespace dsse::ad;

    Tensor shape_probe = f(inputs);  // no tape active: pure evaluation
    std::vector<double> w(shape_probe.size());
    for (double& x : w) x = rng.uniform(0.5, 1.5) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);

    auto scalar_eval = [&]() {
        Tensor o = f(inputs);
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s += o.values()[i] * w[i];
        return s;
    };

    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor out = f(inputs);
        Tensor probe = Tensor::from(w, out.shape());
        Tensor s = sum(mul(out, probe));
        tape.backward(s);
    }

    double worst = 0.0;
    for (Tensor& in : inputs) {
        if (!in.requires_grad()) continue;
        auto& vals = in.values();
        const auto& g = in.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double fp = scalar_eval();
            vals[i] = keep - h;
            const double fm = scalar_eval();
            vals[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = std::abs(numeric - g[i]) /
                               std::max({1e-3, std::abs(numeric), std::abs(g[i])});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

struct OpCheck {
    std::string name;
    std::function<double(RandomSource&)> run_case;  // one random case -> max rel error
};

// One entry per registered differentiable operation. Kept in a single list so
// the unit test and the acceptance criterion exercise the same coverage.
inline std::vector<OpCheck> op_checks() {
    using namespace dsse::ad;
    std::vector<OpCheck> checks;
    auto push = [&](std::string name, std::function<double(RandomSource&)> fn) {
        checks.push_back({std::move(name), std::move(fn)});
    };

    push("add", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return add(t[0], t[1]); }, in, rng);
    });
    push("add_scalar", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({1}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return add(t[0], t[1]); }, in, rng);
    });
    push("add_row_vector", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return add(t[0], t[1]); }, in, rng);
    });
    push("sub", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return sub(t[0], t[1]); }, in, rng);
    });
    push("mul", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return mul(t[0], t[1]); }, in, rng);
    });
    push("mul_row_vector", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return mul(t[0], t[1]); }, in, rng);
    });
    push("square", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 3}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return square(t[0]); }, in, rng);
    });
    push("relu", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 4}, rng, 1.0, 0.05)};
        return max_rel_error([](const std::vector<Tensor>& t) { return relu(t[0]); }, in, rng);
    });
    push("gelu", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return gelu(t[0]); }, in, rng);
    });
    push("sigmoid", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 5}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return sigmoid(t[0]); }, in, rng);
    });
    push("tanh", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 5}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return tanh(t[0]); }, in, rng);
    });
    push("exp", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng, 0.8)};
        return max_rel_error([](const std::vector<Tensor>& t) { return exp(t[0]); }, in, rng);
    });
    push("reshape", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng)};
        return max_rel_error(
            [](const std::vector<Tensor>& t) { return reshape(t[0], {2, 6}); }, in, rng);
    });
    push("matmul", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return matmul(t[0], t[1]); }, in,
                             rng);
    });
    push("transpose", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return transpose(t[0]); }, in, rng);
    });
    push("conv1d", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({2, 5}, rng), random_tensor({3, 2, 3}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return conv1d(t[0], t[1], 1); }, in,
                             rng);
    });
    push("softmax", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng, 2.0)};
        return max_rel_error([](const std::vector<Tensor>& t) { return softmax(t[0]); }, in, rng);
    });
    push("causal_softmax", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 4}, rng, 2.0)};
        return max_rel_error([](const std::vector<Tensor>& t) { return causal_softmax(t[0]); }, in,
                             rng);
    });
    push("layer_norm", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 6}, rng), random_tensor({6}, rng),
                                  random_tensor({6}, rng)};
        return max_rel_error(
            [](const std::vector<Tensor>& t) { return layer_norm(t[0], t[1], t[2]); }, in, rng);
    });
    push("sum", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 3}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return sum(t[0]); }, in, rng);
    });
    push("mean", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 3}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return mean(t[0]); }, in, rng);
    });
    push("mse_loss", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 4}, rng)};
        Tensor target = random_tensor({3, 4}, rng);
        target.set_requires_grad(false);
        return max_rel_error(
            [target](const std::vector<Tensor>& t) { return mse_loss(t[0], target); }, in, rng);
    });
    push("huber_loss", [](RandomSource& rng) {
        // keep residuals away from the |r| = delta kink
        Tensor pred = Tensor::zeros({3, 4}, true);
        Tensor target = Tensor::zeros({3, 4});
        for (double& v : pred.values()) {
            do {
                v = rng.gaussian(0.0, 1.2);
            } while (std::abs(std::abs(v) - 1.0) < 0.05);
        }
        std::vector<Tensor> in = {pred};
        return max_rel_error(
            [target](const std::vector<Tensor>& t) { return huber_loss(t[0], target, 1.0); }, in,
            rng);
    });
    push("huber_loss_weighted", [](RandomSource& rng) {
        Tensor pred = Tensor::zeros({2, 5}, true);
        Tensor target = Tensor::zeros({2, 5});
        for (double& v : pred.values()) {
            do {
                v = rng.gaussian(0.0, 1.2);
            } while (std::abs(std::abs(v) - 1.0) < 0.05);
        }
        Tensor w = Tensor::zeros({2, 5});
        for (double& v : w.values()) v = rng.uniform01() < 0.3 ? 0.0 : 1.0;
        w.values()[0] = 1.0;  // keep the weight sum positive
        std::vector<Tensor> in = {pred};
        return max_rel_error(
            [target, w](const std::vector<Tensor>& t) { return huber_loss(t[0], target, 1.0, w); },
            in, rng);
    });
    push("concat_rows", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)};
        return max_rel_error(
            [](const std::vector<Tensor>& t) { return concat_rows({t[0], t[1]}); }, in, rng);
    });
    push("concat_cols", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)};
        return max_rel_error(
            [](const std::vector<Tensor>& t) { return concat_cols({t[0], t[1]}); }, in, rng);
    });
    push("row", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({4, 5}, rng)};
        return max_rel_error([](const std::vector<Tensor>& t) { return row(t[0], 2); }, in, rng);
    });
    push("embedding_lookup", [](RandomSource& rng) {
        std::vector<Tensor> in = {random_tensor({5, 3}, rng)};
        std::vector<int> ids = {0, 2, 2, 4};  // repeated id exercises scatter-add
        return max_rel_error(
            [ids](const std::vector<Tensor>& t) { return embedding_lookup(t[0], ids); }, in, rng);
    });

    return checks;
}

}  // namespace gradcheck
