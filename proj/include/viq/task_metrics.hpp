#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "viq/error.hpp"
#include "viq/imaging.hpp"
#include "viq/observers.hpp"
#include "viq/tensor.hpp"

namespace viq {

struct ScoreSet {
    std::vector<double> positives;
    std::vector<double> negatives;
};

/// Mann-Whitney AUC: P(s+ > s-) + 0.5 P(s+ == s-), via midranks.
inline double auc(const ScoreSet& scores) {
    const auto& pos = scores.positives;
    const auto& neg = scores.negatives;
    detail::require(!pos.empty() && !neg.empty(), "auc: both classes need scores");
    struct Item {
        double s;
        bool positive;
    };
    std::vector<Item> all;
    all.reserve(pos.size() + neg.size());
    for (double s : pos) {
        detail::require(std::isfinite(s), "auc: non-finite score");
        all.push_back({s, true});
    }
    for (double s : neg) {
        detail::require(std::isfinite(s), "auc: non-finite score");
        all.push_back({s, false});
    }
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.s < b.s; });
    // Twice the rank sum keeps midranks integral.
    std::uint64_t rank2_sum = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].s == all[i].s) ++j;
        const std::uint64_t mid2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 * midrank
        for (std::size_t k = i; k < j; ++k)
            if (all[k].positive) rank2_sum += mid2;
        i = j;
    }
    const auto np = static_cast<std::uint64_t>(pos.size());
    const auto nn = static_cast<std::uint64_t>(neg.size());
    const std::uint64_t u2 = rank2_sum - np * (np + 1);  // 2U
    return static_cast<double>(u2) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

/// Scores for binary AUC: softmax probability of `target_class`.
inline ScoreSet class_scores(const TrainedObserver& obs, const LabeledDataset& data,
                             std::size_t target_class = 1) {
    detail::require(target_class < obs.family.num_classes, "class_scores: class out of range");
    ObserverEvaluator ev(obs);
    ScoreSet out;
    for (const auto& s : data.samples) {
        const double p = ev.predict(s.image)[target_class];
        (s.label == target_class ? out.positives : out.negatives).push_back(p);
    }
    return out;
}

inline double accuracy(const TrainedObserver& obs, const LabeledDataset& data) {
    detail::require(!data.empty(), "accuracy: empty dataset");
    ObserverEvaluator ev(obs);
    std::size_t hits = 0;
    for (const auto& s : data.samples)
        if (ev.predict(s.image).argmax() == s.label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline std::vector<double> gaussian_window_1d() {
    std::vector<double> w(kSsimWindow);
    const double c = static_cast<double>(kSsimWindow / 2);
    double s = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - c;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        s += w[i];
    }
    for (double& v : w) v /= s;
    return w;
}

/// Separable filtering over "valid" positions only.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h,
                                        std::size_t w, const std::vector<double>& k,
                                        std::size_t& oh, std::size_t& ow) {
    const std::size_t n = k.size();
    oh = h - n + 1;
    ow = w - n + 1;
    std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * img[r * w + c + i];
            tmp[r * ow + c] = acc;
        }
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp[(r + i) * ow + c];
            out[r * ow + c] = acc;
        }
    return out;
}

}  // namespace detail

/// Mean local SSIM over all positions where the 11x11 Gaussian window fits.
/// `data_range` <= 0 infers max(a, b) - min(a, b).
inline double ssim(const ImageTensor& a, const ImageTensor& b, double data_range = 0.0) {
    detail::require(a.same_shape(b), "ssim: dimension mismatch");
    detail::require(a.height() >= kSsimWindow && a.width() >= kSsimWindow,
                    "ssim: images smaller than the 11x11 window");
    detail::require(all_finite(a) && all_finite(b), "ssim: non-finite input");
    double L = data_range;
    if (!(L > 0.0)) {
        const auto [alo, ahi] = std::minmax_element(a.data().begin(), a.data().end());
        const auto [blo, bhi] = std::minmax_element(b.data().begin(), b.data().end());
        L = std::max(*ahi, *bhi) - std::min(*alo, *blo);
        if (!(L > 0.0)) return 1.0;  // both images are the same constant
    }
    const double c1 = (kSsimK1 * L) * (kSsimK1 * L);
    const double c2 = (kSsimK2 * L) * (kSsimK2 * L);
    const std::size_t h = a.height(), w = a.width(), n = a.size();
    std::vector<double> x(a.data().begin(), a.data().end()), y(b.data().begin(), b.data().end());
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto k = detail::gaussian_window_1d();
    std::size_t oh = 0, ow = 0;
    const auto mx = detail::filter_valid(x, h, w, k, oh, ow);
    const auto my = detail::filter_valid(y, h, w, k, oh, ow);
    const auto mxx = detail::filter_valid(xx, h, w, k, oh, ow);
    const auto myy = detail::filter_valid(yy, h, w, k, oh, ow);
    const auto mxy = detail::filter_valid(xy, h, w, k, oh, ow);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

/// 10 log10(peak^2 / MSE); +inf when the images are identical.
inline double psnr(const ImageTensor& a, const ImageTensor& b, double peak) {
    detail::require(a.same_shape(b), "psnr: dimension mismatch");
    detail::require(peak > 0.0 && std::isfinite(peak), "psnr: peak must be positive");
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

/// Dynamic range max - min of an image.
inline double dynamic_range(const ImageTensor& img) {
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    return *hi - *lo;
}

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least squares y = slope x + intercept. Constant ys give r^2 = 0.
inline FitResult linear_fit_r2(std::span<const double> xs, std::span<const double> ys) {
    detail::require(xs.size() == ys.size(), "linear_fit_r2: size mismatch");
    detail::require(xs.size() >= 3, "linear_fit_r2: need at least 3 points");
    const auto n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    detail::require(sxx > 0.0, "linear_fit_r2: xs are all equal");
    FitResult f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (syy == 0.0) return f;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (f.slope * xs[i] + f.intercept);
        ss_res += r * r;
    }
    f.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    return f;
}

}  // namespace viq
