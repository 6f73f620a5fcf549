#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "viq/error.hpp"
#include "viq/tensor.hpp"

namespace viq {

/// SplitMix64 finaliser. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// FNV-1a over the bytes of `s`.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Order-sensitive combination of a running hash with one more word.
constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
    return mix64(h ^ mix64(v + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2)));
}

/// Seed for one (base, run, condition, family) job. Adding new conditions or
/// families never changes the seed of an existing key.
inline std::uint64_t hash64(std::uint64_t base_seed, std::uint64_t run_index,
                            std::string_view condition, std::string_view family) noexcept {
    std::uint64_t h = mix64(base_seed);
    h = hash_combine(h, run_index);
    h = hash_combine(h, fnv1a64(condition));
    h = hash_combine(h, fnv1a64(family));
    return h;
}

/// Counter-based generator: draw i is a pure function of (seed, i), so
/// streams are reproducible on every platform and cheap to split.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) noexcept : seed_(seed), key_(mix64(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Independent child stream for parallel work item `index`.
    RandomStream split(std::uint64_t index) const noexcept {
        return RandomStream(hash_combine(key_, index));
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t c = counter_++;
        return mix64(mix64(c + key_) ^ key_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling removes modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) {
        detail::require(n > 0, "uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Poisson draw by Knuth multiplication, applied in chunks of mean <= 16
    /// so exp(-mean) never underflows.
    std::uint64_t poisson(double mean) {
        detail::require(mean >= 0.0 && std::isfinite(mean), "poisson: mean must be >= 0");
        std::uint64_t total = 0;
        while (mean > 0.0) {
            const double chunk = std::min(mean, 16.0);
            mean -= chunk;
            const double limit = std::exp(-chunk);
            double p = uniform();
            while (p > limit) {
                ++total;
                p *= uniform();
            }
        }
        return total;
    }

private:
    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// i.i.d. N(0, sigma^2) image.
inline ImageTensor gaussian_tensor(std::size_t h, std::size_t w, double sigma, RandomStream& rng) {
    detail::require(sigma >= 0.0 && std::isfinite(sigma), "gaussian_tensor: sigma must be >= 0");
    ImageTensor out(h, w);
    if (sigma == 0.0) return out;
    for (double& v : out.data()) v = sigma * rng.normal();
    return out;
}

/// Complex tensor whose real and imaginary parts are each i.i.d. N(0, sigma^2).
inline ComplexSpectrum complex_gaussian_tensor(std::size_t h, std::size_t w, double sigma,
                                               RandomStream& rng) {
    detail::require(sigma >= 0.0 && std::isfinite(sigma),
                    "complex_gaussian_tensor: sigma must be >= 0");
    ComplexSpectrum out(h, w);
    if (sigma == 0.0) return out;
    for (auto& v : out.data()) {
        const double re = sigma * rng.normal();
        const double im = sigma * rng.normal();
        v = {re, im};
    }
    return out;
}

}  // namespace viq
