#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "viq/error.hpp"
#include "viq/imaging.hpp"
#include "viq/observers.hpp"

namespace viq {

/// A value in nats tagged with the split it was computed on.
struct NatsValue {
    double value = 0.0;
    Split split = Split::Train;
    bool clamped = false;  // a per-sample probability fell below kProbClamp
};

inline constexpr double kProbClamp = 1e-12;

/// Entropy with 0 log 0 = 0, natural log.
inline NatsValue label_entropy(const ProbVector& priors) {
    detail::require(priors.valid(), "label_entropy: priors are not a distribution");
    double h = 0.0;
    for (double p : priors.entries())
        if (p > 0.0) h -= p * std::log(p);
    return {h, Split::Train, false};
}

/// Mean -log v[x](y) over the dataset; logs are floored at log(kProbClamp)
/// unless `clamp` is false.
inline NatsValue v_conditional_entropy(const TrainedObserver& obs, const LabeledDataset& data,
                                       bool clamp = true) {
    detail::require(!data.empty(), "v_conditional_entropy: empty dataset");
    detail::require(obs.family.num_classes == data.num_classes,
                    "v_conditional_entropy: class count mismatch");
    ObserverEvaluator ev(obs);
    const double floor = std::log(kProbClamp);
    NatsValue out{0.0, data.split, false};
    double total = 0.0;
    for (const auto& s : data.samples) {
        double lp = ev.log_prob(s.image, s.label);
        if (clamp && lp < floor) {
            lp = floor;
            out.clamped = true;
        }
        total -= lp;
    }
    out.value = total / static_cast<double>(data.size());
    return out;
}

/// H(Y) - H_V(Y|X). Priors default to the dataset's empirical frequencies.
inline NatsValue v_information(const TrainedObserver& obs, const LabeledDataset& data,
                               const std::optional<ProbVector>& priors = std::nullopt) {
    const ProbVector p = priors ? *priors : ProbVector(data.empirical_priors());
    detail::require(p.size() == data.num_classes, "v_information: priors size mismatch");
    const NatsValue hv = v_conditional_entropy(obs, data);
    return {label_entropy(p).value - hv.value, data.split, hv.clamped};
}

/// K x L joint distribution over (x, y), row-major.
class JointPMF {
public:
    JointPMF(std::size_t k, std::size_t l, std::vector<double> table)
        : k_(k), l_(l), p_(std::move(table)) {
        detail::require(k >= 1 && l >= 1 && p_.size() == k * l, "JointPMF: table size mismatch");
        double s = 0.0;
        for (double v : p_) {
            detail::require(v >= 0.0 && std::isfinite(v), "JointPMF: negative entry");
            s += v;
        }
        detail::require(std::abs(s - 1.0) <= 1e-12, "JointPMF: entries must sum to 1");
    }

    /// Normalises a nonnegative count table.
    static JointPMF from_counts(std::size_t k, std::size_t l, const std::vector<double>& counts) {
        detail::require(counts.size() == k * l, "JointPMF: table size mismatch");
        double n = 0.0;
        for (double c : counts) {
            detail::require(c >= 0.0, "JointPMF: negative count");
            n += c;
        }
        detail::require(n > 0.0, "JointPMF: empty count table");
        std::vector<double> p(counts.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = counts[i] / n;
        // Renormalise once more so rounding cannot break the sum invariant.
        double s = 0.0;
        for (double v : p) s += v;
        for (double& v : p) v /= s;
        return {k, l, std::move(p)};
    }

    std::size_t rows() const noexcept { return k_; }
    std::size_t cols() const noexcept { return l_; }
    double operator()(std::size_t x, std::size_t y) const { return p_[x * l_ + y]; }
    const std::vector<double>& table() const noexcept { return p_; }

    std::vector<double> marginal_x() const {
        std::vector<double> m(k_, 0.0);
        for (std::size_t x = 0; x < k_; ++x)
            for (std::size_t y = 0; y < l_; ++y) m[x] += (*this)(x, y);
        return m;
    }
    std::vector<double> marginal_y() const {
        std::vector<double> m(l_, 0.0);
        for (std::size_t x = 0; x < k_; ++x)
            for (std::size_t y = 0; y < l_; ++y) m[y] += (*this)(x, y);
        return m;
    }

    /// Joint of (T(X), Y) for a map T from {0..K-1} into {0..K'-1}.
    JointPMF coarsen(const std::vector<std::size_t>& t, std::size_t k_out) const {
        detail::require(t.size() == k_, "JointPMF::coarsen: map size mismatch");
        std::vector<double> q(k_out * l_, 0.0);
        for (std::size_t x = 0; x < k_; ++x) {
            detail::require(t[x] < k_out, "JointPMF::coarsen: map out of range");
            for (std::size_t y = 0; y < l_; ++y) q[t[x] * l_ + y] += (*this)(x, y);
        }
        double s = 0.0;
        for (double v : q) s += v;
        for (double& v : q) v /= s;
        return {k_out, l_, std::move(q)};
    }

private:
    std::size_t k_, l_;
    std::vector<double> p_;
};

/// Direct summation of p log(p / (p_x p_y)); zero cells contribute nothing.
inline NatsValue exact_mi_discrete(const JointPMF& joint) {
    const auto px = joint.marginal_x();
    const auto py = joint.marginal_y();
    double mi = 0.0;
    for (std::size_t x = 0; x < joint.rows(); ++x)
        for (std::size_t y = 0; y < joint.cols(); ++y) {
            const double p = joint(x, y);
            if (p > 0.0) mi += p * std::log(p / (px[x] * py[y]));
        }
    return {mi, Split::Train, false};
}

/// log v[x](y) - log v_0(y) for a constant-family baseline v_0.
inline NatsValue pointwise_v_info(const TrainedObserver& obs, const TrainedObserver& baseline,
                                  const Sample& sample) {
    detail::require(baseline.family.kind == FamilyKind::Constant,
                    "pointwise_v_info: baseline must be a constant-family observer");
    detail::require(obs.family.num_classes == baseline.family.num_classes,
                    "pointwise_v_info: class count mismatch");
    detail::require(sample.label < obs.family.num_classes, "pointwise_v_info: label out of range");
    ObserverEvaluator ev(obs);
    const double lp = ev.log_prob(sample.image, sample.label);
    const double lb = baseline.theta[sample.label] - nn::log_sum_exp(baseline.theta);
    return {lp - lb, Split::Train, false};
}

}  // namespace viq
