#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "viq/error.hpp"
#include "viq/random.hpp"

namespace viq {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 1024;  // batch_size >= N means full-batch gradient descent
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t early_stop_patience = 0;  // 0 disables early stopping
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(learning_rate > 0.0 && std::isfinite(learning_rate),
                        "train config: learning_rate must be positive");
        detail::require(epochs >= 1, "train config: epochs must be >= 1");
        detail::require(batch_size >= 1, "train config: batch_size must be >= 1");
        detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                        "train config: Adam betas must lie in [0, 1)");
    }
};

struct LossPoint {
    std::size_t epoch = 0;
    double loss = 0.0;
};

/// One optimisation trajectory with two checkpoints: the lowest full
/// training loss and the lowest validation loss. Epoch 0 is the initial point.
struct TrainOutcome {
    std::vector<double> best_train_params;
    std::size_t best_train_epoch = 0;
    double best_train_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_val_params;
    std::size_t best_val_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<LossPoint> train_curve;
    std::vector<LossPoint> val_curve;
};

/// An objective over N samples. `loss_grad` returns the summed loss of the
/// listed samples and accumulates their summed gradient; `loss` returns the
/// mean loss over all samples, summed in index order.
template <typename T>
concept SampleObjective = requires(T& obj, std::span<const std::size_t> idx,
                                   std::span<const double> theta, std::span<double> grad) {
    { obj.size() } -> std::convertible_to<std::size_t>;
    { obj.loss_grad(idx, theta, grad) } -> std::convertible_to<double>;
    { obj.loss(theta) } -> std::convertible_to<double>;
};

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> theta, std::span<const double> grad) {
        ++t_;
        if (cfg_.optimizer == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg_.learning_rate * grad[i];
            return;
        }
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
            v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
            const double mh = m_[i] / c1;
            const double vh = v_[i] / c2;
            theta[i] -= cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.adam_eps);
        }
    }

private:
    TrainConfig cfg_;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0;
};

namespace detail {
inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}
}  // namespace detail

/// Mini-batch minimisation of a mean per-sample loss. In full-batch mode the
/// loss computed alongside each gradient is exactly the full training loss at
/// that point, so no separate evaluation pass is needed.
template <SampleObjective Train, SampleObjective Val = Train>
TrainOutcome minimize(Train& train, std::vector<double> theta, const TrainConfig& cfg,
                      Val* val = nullptr) {
    cfg.validate();
    const std::size_t n = train.size();
    detail::require(n > 0, "minimize: empty training set");
    const std::size_t P = theta.size();
    const bool full_batch = cfg.batch_size >= n;

    TrainOutcome out;
    std::vector<double> grad(P);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Optimizer opt(cfg, P);
    RandomStream shuffle_rng(mix64(cfg.seed ^ 0x5u));

    auto record_train = [&](std::size_t epoch, double loss, const std::vector<double>& th) {
        if (!std::isfinite(loss))
            throw TrainingDiagnostic("non-finite training loss", epoch, 0);
        out.train_curve.push_back({epoch, loss});
        if (loss < out.best_train_loss) {
            out.best_train_loss = loss;
            out.best_train_epoch = epoch;
            out.best_train_params = th;
        }
    };
    auto record_val = [&](std::size_t epoch, const std::vector<double>& th) {
        if (!val) return;
        const double loss = val->loss(th);
        out.val_curve.push_back({epoch, loss});
        if (loss < out.best_val_loss) {
            out.best_val_loss = loss;
            out.best_val_epoch = epoch;
            out.best_val_params = th;
        }
    };
    auto check_grad = [&](std::size_t epoch, std::size_t batch, double loss) {
        if (!std::isfinite(loss)) throw TrainingDiagnostic("non-finite training loss", epoch, batch);
        if (!detail::all_finite(grad)) throw TrainingDiagnostic("non-finite gradient", epoch, batch);
    };

    std::size_t since_improve = 0;
    auto stalled = [&](bool improved) {
        since_improve = improved ? 0 : since_improve + 1;
        return cfg.early_stop_patience > 0 && since_improve >= cfg.early_stop_patience;
    };

    if (full_batch) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = train.loss_grad(order, theta, grad) * inv_n;
            check_grad(epoch, 0, loss);
            const double prev_best = val ? out.best_val_loss : out.best_train_loss;
            record_train(epoch - 1, loss, theta);
            record_val(epoch - 1, theta);
            const double now_best = val ? out.best_val_loss : out.best_train_loss;
            if (epoch > 1 && stalled(now_best < prev_best)) {
                return out;
            }
            for (double& g : grad) g *= inv_n;
            opt.step(theta, grad);
        }
        record_train(cfg.epochs, train.loss(theta), theta);
        record_val(cfg.epochs, theta);
        return out;
    }

    record_train(0, train.loss(theta), theta);
    record_val(0, theta);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        RandomStream er = shuffle_rng.split(epoch);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[er.uniform_index(i)]);
        std::size_t batch = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const double inv_b = 1.0 / static_cast<double>(idx.size());
            const double loss = train.loss_grad(idx, theta, grad) * inv_b;
            check_grad(epoch, batch, loss);
            for (double& g : grad) g *= inv_b;
            opt.step(theta, grad);
        }
        const double prev_best = val ? out.best_val_loss : out.best_train_loss;
        record_train(epoch, train.loss(theta), theta);
        record_val(epoch, theta);
        const double now_best = val ? out.best_val_loss : out.best_train_loss;
        if (stalled(now_best < prev_best)) break;
    }
    return out;
}

}  // namespace viq
