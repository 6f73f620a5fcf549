#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "viq/random.hpp"

// Per-sample layer primitives with explicit backward passes. Feature maps are
// flat (channel, row, column) arrays. Every backward routine *accumulates*
// into its gradient outputs.

namespace viq::nn {

struct MapShape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t plane() const noexcept { return height * width; }
    std::size_t size() const noexcept { return channels * height * width; }
};

/// Uniform Glorot initialisation on [-a, a], a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(std::span<double> w, std::size_t fan_in, std::size_t fan_out,
                           RandomStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-a, a);
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, edge-replicate padding. Weight layout [out][in][3][3].

inline std::size_t conv3x3_weights(std::size_t cin, std::size_t cout) { return cout * cin * 9; }

namespace detail {

// Copies one H x W plane into an (H+2) x (W+2) buffer with edge replication.
inline void pad_replicate(const double* x, std::size_t H, std::size_t W, double* p) {
    const std::size_t PW = W + 2;
    for (std::size_t y = 0; y < H; ++y) {
        double* row = p + (y + 1) * PW;
        std::copy(x + y * W, x + (y + 1) * W, row + 1);
        row[0] = row[1];
        row[W + 1] = row[W];
    }
    std::copy(p + PW, p + 2 * PW, p);
    std::copy(p + H * PW, p + (H + 1) * PW, p + (H + 1) * PW);
}

// Adjoint of pad_replicate: folds the border of a padded gradient back in.
inline void unpad_replicate_add(const double* p, std::size_t H, std::size_t W, double* gx) {
    const std::size_t PW = W + 2;
    for (std::size_t y = 0; y < H + 2; ++y) {
        const std::size_t ty = y == 0 ? 0 : (y == H + 1 ? H - 1 : y - 1);
        const double* row = p + y * PW;
        double* out = gx + ty * W;
        out[0] += row[0];
        out[W - 1] += row[W + 1];
        for (std::size_t x = 0; x < W; ++x) out[x] += row[x + 1];
    }
}

}  // namespace detail

// 3x3 cross-correlation with edge-replicate padding.
inline void conv3x3_forward(std::span<const double> in, const MapShape& s, std::size_t cout,
                            std::span<const double> weight, std::span<const double> bias,
                            std::span<double> out) {
    const std::size_t H = s.height, W = s.width, P = s.plane(), PW = W + 2;
    std::vector<double> pad(s.channels * (H + 2) * PW);
    for (std::size_t ci = 0; ci < s.channels; ++ci)
        detail::pad_replicate(in.data() + ci * P, H, W, pad.data() + ci * (H + 2) * PW);
    for (std::size_t co = 0; co < cout; ++co) {
        double* o = out.data() + co * P;
        std::fill(o, o + P, bias.empty() ? 0.0 : bias[co]);
        for (std::size_t ci = 0; ci < s.channels; ++ci) {
            const double* x = pad.data() + ci * (H + 2) * PW;
            const double* k = weight.data() + (co * s.channels + ci) * 9;
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wv = k[ky * 3 + kx];
                    for (std::size_t y = 0; y < H; ++y) {
                        double* orow = o + y * W;
                        const double* xrow = x + (y + ky) * PW + kx;
                        for (std::size_t xx = 0; xx < W; ++xx) orow[xx] += wv * xrow[xx];
                    }
                }
        }
    }
}

/// grad_in may be empty when the input gradient is not needed.
inline void conv3x3_backward(std::span<const double> in, const MapShape& s, std::size_t cout,
                             std::span<const double> weight, std::span<const double> grad_out,
                             std::span<double> grad_in, std::span<double> grad_weight,
                             std::span<double> grad_bias) {
    const std::size_t H = s.height, W = s.width, P = s.plane(), PW = W + 2, PP = (H + 2) * PW;
    std::vector<double> pad(s.channels * PP);
    for (std::size_t ci = 0; ci < s.channels; ++ci)
        detail::pad_replicate(in.data() + ci * P, H, W, pad.data() + ci * PP);
    std::vector<double> gpad(grad_in.empty() ? 0 : s.channels * PP, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        const double* g = grad_out.data() + co * P;
        if (!grad_bias.empty()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < P; ++i) acc += g[i];
            grad_bias[co] += acc;
        }
        for (std::size_t ci = 0; ci < s.channels; ++ci) {
            const double* x = pad.data() + ci * PP;
            const double* k = weight.data() + (co * s.channels + ci) * 9;
            double* gk = grad_weight.data() + (co * s.channels + ci) * 9;
            double* gx = gpad.empty() ? nullptr : gpad.data() + ci * PP;
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wv = k[ky * 3 + kx];
                    double acc = 0.0;
                    for (std::size_t y = 0; y < H; ++y) {
                        const double* grow = g + y * W;
                        const double* xrow = x + (y + ky) * PW + kx;
                        for (std::size_t xx = 0; xx < W; ++xx) acc += grow[xx] * xrow[xx];
                    }
                    gk[ky * 3 + kx] += acc;
                    if (gx) {
                        for (std::size_t y = 0; y < H; ++y) {
                            const double* grow = g + y * W;
                            double* gxrow = gx + (y + ky) * PW + kx;
                            for (std::size_t xx = 0; xx < W; ++xx) gxrow[xx] += wv * grow[xx];
                        }
                    }
                }
        }
    }
    if (!gpad.empty())
        for (std::size_t ci = 0; ci < s.channels; ++ci)
            detail::unpad_replicate_add(gpad.data() + ci * PP, H, W, grad_in.data() + ci * P);
}

// ---------------------------------------------------------------------------
// Instance normalisation with per-channel affine parameters.

inline constexpr double kInstanceNormEps = 1e-5;

struct InstanceNormCache {
    std::vector<double> xhat;
    std::vector<double> inv_std;
};

inline void instance_norm_forward(std::span<const double> in, const MapShape& s,
                                  std::span<const double> gamma, std::span<const double> beta,
                                  std::span<double> out, InstanceNormCache& cache) {
    const std::size_t P = s.plane();
    cache.xhat.resize(s.size());
    cache.inv_std.resize(s.channels);
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* x = in.data() + c * P;
        double mean = 0.0;
        for (std::size_t i = 0; i < P; ++i) mean += x[i];
        mean /= static_cast<double>(P);
        double var = 0.0;
        for (std::size_t i = 0; i < P; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<double>(P);
        const double inv = 1.0 / std::sqrt(var + kInstanceNormEps);
        cache.inv_std[c] = inv;
        double* xh = cache.xhat.data() + c * P;
        double* o = out.data() + c * P;
        for (std::size_t i = 0; i < P; ++i) {
            xh[i] = (x[i] - mean) * inv;
            o[i] = gamma[c] * xh[i] + beta[c];
        }
    }
}

inline void instance_norm_backward(const MapShape& s, std::span<const double> gamma,
                                   const InstanceNormCache& cache, std::span<const double> grad_out,
                                   std::span<double> grad_in, std::span<double> grad_gamma,
                                   std::span<double> grad_beta) {
    const std::size_t P = s.plane();
    const double invP = 1.0 / static_cast<double>(P);
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* g = grad_out.data() + c * P;
        const double* xh = cache.xhat.data() + c * P;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
            sum_g += g[i];
            sum_gx += g[i] * xh[i];
        }
        grad_gamma[c] += sum_gx;
        grad_beta[c] += sum_g;
        const double k = gamma[c] * cache.inv_std[c];
        const double mg = sum_g * invP, mgx = sum_gx * invP;
        double* gi = grad_in.data() + c * P;
        for (std::size_t i = 0; i < P; ++i) gi[i] += k * (g[i] - mg - xh[i] * mgx);
    }
}

// ---------------------------------------------------------------------------
// Softplus log(1 + e^x). The cache keeps e^{-|x|} for the derivative.

inline void softplus_forward(std::span<const double> in, std::span<double> out,
                             std::vector<double>& cache) {
    cache.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in[i];
        const double e = std::exp(-std::abs(x));
        cache[i] = e;
        out[i] = std::max(x, 0.0) + std::log1p(e);
    }
}

inline void softplus_backward(std::span<const double> in, const std::vector<double>& cache,
                              std::span<const double> grad_out, std::span<double> grad_in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double e = cache[i];
        const double sig = in[i] >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
        grad_in[i] += grad_out[i] * sig;
    }
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// ---------------------------------------------------------------------------
// 2x2 average pooling. Maps with an odd (or unit) side are passed through
// unchanged, which keeps the global mean of every channel invariant.

inline bool poolable(const MapShape& s) {
    return s.height % 2 == 0 && s.width % 2 == 0 && s.height >= 2 && s.width >= 2;
}

inline MapShape pooled_shape(const MapShape& s) {
    return poolable(s) ? MapShape{s.channels, s.height / 2, s.width / 2} : s;
}

inline void avgpool2_forward(std::span<const double> in, const MapShape& s, std::span<double> out) {
    if (!poolable(s)) {
        std::copy(in.begin(), in.begin() + static_cast<long>(s.size()), out.begin());
        return;
    }
    const std::size_t H = s.height, W = s.width, h = H / 2, w = W / 2;
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* x = in.data() + c * H * W;
        double* o = out.data() + c * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double* p = x + 2 * y * W + 2 * xx;
                o[y * w + xx] = 0.25 * ((p[0] + p[1]) + (p[W] + p[W + 1]));
            }
    }
}

inline void avgpool2_backward(const MapShape& s, std::span<const double> grad_out,
                              std::span<double> grad_in) {
    if (!poolable(s)) {
        for (std::size_t i = 0; i < s.size(); ++i) grad_in[i] += grad_out[i];
        return;
    }
    const std::size_t H = s.height, W = s.width, h = H / 2, w = W / 2;
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* g = grad_out.data() + c * h * w;
        double* gi = grad_in.data() + c * H * W;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double v = 0.25 * g[y * w + xx];
                double* p = gi + 2 * y * W + 2 * xx;
                p[0] += v;
                p[1] += v;
                p[W] += v;
                p[W + 1] += v;
            }
    }
}

/// Nearest-neighbour 2x upsampling (inverse geometry of avgpool2).
inline void upsample2_forward(std::span<const double> in, const MapShape& small,
                              std::span<double> out) {
    const std::size_t h = small.height, w = small.width, W = 2 * w;
    for (std::size_t c = 0; c < small.channels; ++c) {
        const double* x = in.data() + c * h * w;
        double* o = out.data() + c * 4 * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double v = x[y * w + xx];
                double* p = o + 2 * y * W + 2 * xx;
                p[0] = p[1] = p[W] = p[W + 1] = v;
            }
    }
}

inline void upsample2_backward(const MapShape& small, std::span<const double> grad_out,
                               std::span<double> grad_in) {
    const std::size_t h = small.height, w = small.width, W = 2 * w;
    for (std::size_t c = 0; c < small.channels; ++c) {
        const double* g = grad_out.data() + c * 4 * h * w;
        double* gi = grad_in.data() + c * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double* p = g + 2 * y * W + 2 * xx;
                gi[y * w + xx] += (p[0] + p[1]) + (p[W] + p[W + 1]);
            }
    }
}

// ---------------------------------------------------------------------------
// Log-sum-exp pooling: per channel (1/r) log mean_i exp(r a_i), a smooth
// maximum that tends to the global max as r grows and to the mean as r -> 0.

inline constexpr double kLsePoolSharpness = 8.0;

inline void lse_pool_forward(std::span<const double> in, const MapShape& s, std::span<double> out,
                             std::vector<double>& weights, double r = kLsePoolSharpness) {
    const std::size_t P = s.plane();
    weights.resize(s.size());
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double* a = in.data() + c * P;
        double* w = weights.data() + c * P;
        const double m = *std::max_element(a, a + P);
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
            w[i] = std::exp(r * (a[i] - m));
            acc += w[i];
        }
        for (std::size_t i = 0; i < P; ++i) w[i] /= acc;
        out[c] = m + std::log(acc / static_cast<double>(P)) / r;
    }
}

/// The softmax weights cached by the forward pass are the exact partials.
inline void lse_pool_backward(const MapShape& s, std::span<const double> grad_out,
                              const std::vector<double>& weights, std::span<double> grad_in) {
    const std::size_t P = s.plane();
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double g = grad_out[c];
        const double* w = weights.data() + c * P;
        double* gi = grad_in.data() + c * P;
        for (std::size_t i = 0; i < P; ++i) gi[i] += g * w[i];
    }
}

// ---------------------------------------------------------------------------
// Dense layer y = W x + b, W row-major [out][in].

inline void dense_forward(std::span<const double> x, std::span<const double> weight,
                          std::span<const double> bias, std::span<double> y) {
    const std::size_t nin = x.size();
    for (std::size_t o = 0; o < y.size(); ++o) {
        const double* w = weight.data() + o * nin;
        double acc = bias[o];
        for (std::size_t i = 0; i < nin; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

inline void dense_backward(std::span<const double> x, std::span<const double> weight,
                           std::span<const double> grad_y, std::span<double> grad_x,
                           std::span<double> grad_weight, std::span<double> grad_bias) {
    const std::size_t nin = x.size();
    for (std::size_t o = 0; o < grad_y.size(); ++o) {
        const double g = grad_y[o];
        grad_bias[o] += g;
        double* gw = grad_weight.data() + o * nin;
        for (std::size_t i = 0; i < nin; ++i) gw[i] += g * x[i];
        if (!grad_x.empty()) {
            const double* w = weight.data() + o * nin;
            for (std::size_t i = 0; i < nin; ++i) grad_x[i] += g * w[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy.

inline double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - m);
    return m + std::log(acc);
}

inline void softmax(std::span<const double> z, std::span<double> p) {
    const double lse = log_sum_exp(z);
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
}

/// Returns -log softmax(z)[label]; if grad is nonempty, accumulates
/// scale * (softmax(z) - onehot(label)) into it.
inline double softmax_nll(std::span<const double> z, std::size_t label, std::span<double> grad,
                          double scale = 1.0) {
    const double lse = log_sum_exp(z);
    if (!grad.empty())
        for (std::size_t i = 0; i < z.size(); ++i)
            grad[i] += scale * (std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
    return lse - z[label];
}

}  // namespace viq::nn
