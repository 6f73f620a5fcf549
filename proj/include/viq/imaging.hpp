#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "viq/error.hpp"
#include "viq/fourier.hpp"
#include "viq/random.hpp"
#include "viq/tensor.hpp"

// Virtual imaging: lumpy backgrounds, compact Gaussian lesions, and the
// stylised low-field acquisition (k-space truncation plus complex noise).
// Pixel (row r, column c) sits at spatial coordinate (x, y) = (c, r).

namespace viq {

struct SignalSpec {
    double amplitude = 0.1;
    double x0 = 0.0;
    double y0 = 0.0;
    double sigma = 3.0;

    double support_radius() const noexcept { return 3.0 * sigma; }
};

struct Range {
    double low = 0.0;
    double high = 0.0;
};

struct BackgroundConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    double blob_count_mean = 10.0;
    Range blob_amplitude_range{0.2, 1.0};
    Range blob_sigma_range{4.0, 10.0};
    double base_level = 0.2;

    void validate() const {
        detail::require(height > 0 && width > 0, "background: dimensions must be positive");
        detail::require(blob_count_mean >= 0.0 && std::isfinite(blob_count_mean),
                        "background: blob_count_mean must be >= 0");
        detail::require(blob_amplitude_range.low <= blob_amplitude_range.high,
                        "background: amplitude range low > high");
        detail::require(blob_sigma_range.low <= blob_sigma_range.high,
                        "background: sigma range low > high");
        detail::require(blob_sigma_range.low > 0.0, "background: blob sigma must be positive");
    }
};

enum class Reconstruction { Magnitude, RealPart };

struct DegradationConfig {
    std::size_t mask_height = 32;
    std::size_t mask_width = 32;
    double noise_sigma = 0.05;  // per real/imaginary component, unitary k-space units
    Reconstruction reconstruction = Reconstruction::Magnitude;

    void validate(std::size_t h, std::size_t w) const {
        detail::require(mask_height > 0 && mask_width > 0, "degradation: mask must be nonempty");
        detail::require(mask_height <= h && mask_width <= w,
                        "degradation: mask larger than image");
        detail::require(noise_sigma >= 0.0 && std::isfinite(noise_sigma),
                        "degradation: noise_sigma must be >= 0");
    }
};

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

struct Sample {
    ImageTensor image;
    std::size_t label = 0;
};

struct LabeledDataset {
    std::vector<Sample> samples;
    std::size_t num_classes = 2;
    Split split = Split::Train;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (const auto& s : samples) ++counts.at(s.label);
        return counts;
    }

    std::vector<double> empirical_priors() const {
        detail::require(!samples.empty(), "empirical_priors: empty dataset");
        auto counts = class_counts();
        std::vector<double> p(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i)
            p[i] = static_cast<double>(counts[i]) / static_cast<double>(samples.size());
        return p;
    }

    void validate() const {
        detail::require(num_classes >= 2, "dataset: need at least two classes");
        for (const auto& s : samples)
            detail::require(s.label < num_classes, "dataset: label out of range");
    }
};

/// base_level plus a Poisson number of isotropic Gaussian blobs with
/// uniform amplitudes, widths, and centres in [0, W) x [0, H).
inline ImageTensor generate_background(const BackgroundConfig& cfg, RandomStream& rng) {
    cfg.validate();
    ImageTensor img(cfg.height, cfg.width, cfg.base_level);
    const std::uint64_t count = rng.poisson(cfg.blob_count_mean);
    std::vector<double> ex(cfg.width), ey(cfg.height);
    for (std::uint64_t b = 0; b < count; ++b) {
        const double amp = rng.uniform(cfg.blob_amplitude_range.low, cfg.blob_amplitude_range.high);
        const double s = rng.uniform(cfg.blob_sigma_range.low, cfg.blob_sigma_range.high);
        const double cx = rng.uniform(0.0, static_cast<double>(cfg.width));
        const double cy = rng.uniform(0.0, static_cast<double>(cfg.height));
        const double inv = 1.0 / (2.0 * s * s);
        for (std::size_t c = 0; c < cfg.width; ++c) {
            const double d = static_cast<double>(c) - cx;
            ex[c] = std::exp(-d * d * inv);
        }
        for (std::size_t r = 0; r < cfg.height; ++r) {
            const double d = static_cast<double>(r) - cy;
            ey[r] = amp * std::exp(-d * d * inv);
        }
        for (std::size_t r = 0; r < cfg.height; ++r)
            for (std::size_t c = 0; c < cfg.width; ++c) img(r, c) += ey[r] * ex[c];
    }
    return img;
}

/// Rescales to [0, 1]. Constant images are returned unchanged.
inline ImageTensor normalize_unit_range(ImageTensor img) {
    const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
    const double lo = *lo_it, span = *hi_it - *lo_it;
    if (!(span > 0.0)) return img;
    for (double& v : img.data()) v = (v - lo) / span;
    return img;
}

inline void validate_signal(const SignalSpec& spec, std::size_t h, std::size_t w) {
    detail::require(spec.amplitude > 0.0, "signal: amplitude must be positive");
    detail::require(spec.sigma > 0.0, "signal: sigma must be positive");
    detail::require(spec.x0 >= 0.0 && spec.x0 <= static_cast<double>(w - 1) && spec.y0 >= 0.0 &&
                        spec.y0 <= static_cast<double>(h - 1),
                    "signal: centre outside image bounds");
}

/// A_s exp(-r^2 / (2 sigma^2)) on the closed disk r <= 3 sigma, zero elsewhere.
inline ImageTensor make_signal(const SignalSpec& spec, std::size_t h, std::size_t w) {
    validate_signal(spec, h, w);
    ImageTensor out(h, w);
    const double radius = spec.support_radius();
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    for (std::size_t r = 0; r < h; ++r) {
        const double dy = static_cast<double>(r) - spec.y0;
        for (std::size_t c = 0; c < w; ++c) {
            const double dx = static_cast<double>(c) - spec.x0;
            const double d2 = dx * dx + dy * dy;
            if (std::sqrt(d2) <= radius) out(r, c) = spec.amplitude * std::exp(-d2 * inv);
        }
    }
    return out;
}

inline bool supports_overlap(const SignalSpec& a, const SignalSpec& b) {
    const double dx = a.x0 - b.x0, dy = a.y0 - b.y0;
    return std::sqrt(dx * dx + dy * dy) <= a.support_radius() + b.support_radius();
}

/// Background plus each signal, pixelwise. Supports must be pairwise disjoint.
inline ImageTensor insert_signals(const ImageTensor& bg, const std::vector<SignalSpec>& specs) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        validate_signal(specs[i], bg.height(), bg.width());
        for (std::size_t j = 0; j < i; ++j)
            detail::require(!supports_overlap(specs[i], specs[j]),
                            "insert_signals: signal supports overlap");
    }
    ImageTensor out = bg;
    for (const auto& spec : specs) {
        const ImageTensor s = make_signal(spec, bg.height(), bg.width());
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += s.data()[i];
    }
    return out;
}

/// DFT, keep the centred mask block, add complex noise to the kept block,
/// zero-pad back, inverse DFT, then magnitude (or real part).
inline ImageTensor simulate_low_field(const ImageTensor& img, const DegradationConfig& cfg,
                                      RandomStream& rng) {
    cfg.validate(img.height(), img.width());
    ComplexSpectrum block = center_crop(fftshift(dft2(img)), cfg.mask_height, cfg.mask_width);
    if (cfg.noise_sigma > 0.0) {
        const ComplexSpectrum noise =
            complex_gaussian_tensor(cfg.mask_height, cfg.mask_width, cfg.noise_sigma, rng);
        for (std::size_t i = 0; i < block.size(); ++i) block.data()[i] += noise.data()[i];
    }
    const ComplexSpectrum recon =
        idft2(ifftshift(zero_pad_center(block, img.height(), img.width())));
    return cfg.reconstruction == Reconstruction::Magnitude ? magnitude(recon) : real_part(recon);
}

enum class Task { Binary, ThreeClass };

inline const char* to_string(Task t) { return t == Task::Binary ? "binary" : "three_class"; }

struct SignalConfig {
    double amplitude = 0.1;
    double sigma = 3.0;
    // Signal centres are drawn uniformly from [x_min, x_max) x [y_min, y_max).
    double x_min = 12.0, x_max = 52.0;
    double y_min = 12.0, y_max = 52.0;
};

struct DatasetConfig {
    Task task = Task::Binary;
    std::vector<std::size_t> class_counts{100, 100};
    BackgroundConfig background;
    SignalConfig signal;
    DegradationConfig degradation;
    bool normalize_background = true;
    std::uint64_t seed = 0;

    std::size_t num_classes() const { return task == Task::Binary ? 2 : 3; }
};

struct SampleRecord {
    std::vector<SignalSpec> signals;
    ImageTensor background;  // kept only when requested
};

struct PairedDataset {
    LabeledDataset low_field;
    LabeledDataset high_field;
    std::vector<SampleRecord> records;
};

inline RandomStream sample_stream(std::uint64_t seed, std::size_t index) {
    return RandomStream(hash_combine(mix64(seed), index));
}

namespace detail {

inline SignalSpec draw_signal(const SignalConfig& cfg, RandomStream& rng) {
    return SignalSpec{cfg.amplitude, rng.uniform(cfg.x_min, cfg.x_max),
                      rng.uniform(cfg.y_min, cfg.y_max), cfg.sigma};
}

}  // namespace detail

/// Paired high-field objects and their low-field acquisitions with identical
/// labels. Labels: 0 absent, 1 one signal, 2 two disjoint signals. Samples
/// are stored class by class; sample i uses its own derived stream.
inline PairedDataset build_dataset(const DatasetConfig& cfg, bool keep_backgrounds = false) {
    const std::size_t L = cfg.num_classes();
    detail::require(cfg.class_counts.size() == L,
                    "build_dataset: class_counts must have one entry per class");
    for (auto n : cfg.class_counts)
        detail::require(n >= 1, "build_dataset: every class needs at least one sample");
    cfg.background.validate();
    cfg.degradation.validate(cfg.background.height, cfg.background.width);
    const auto& sc = cfg.signal;
    detail::require(sc.amplitude > 0.0 && sc.sigma > 0.0, "build_dataset: invalid signal");
    detail::require(sc.x_min <= sc.x_max && sc.y_min <= sc.y_max && sc.x_min >= 0.0 &&
                        sc.y_min >= 0.0 &&
                        sc.x_max <= static_cast<double>(cfg.background.width - 1) &&
                        sc.y_max <= static_cast<double>(cfg.background.height - 1),
                    "build_dataset: signal region outside image");

    PairedDataset out;
    out.low_field.num_classes = out.high_field.num_classes = L;
    const std::size_t total = std::accumulate(cfg.class_counts.begin(), cfg.class_counts.end(),
                                              std::size_t{0});
    out.low_field.samples.reserve(total);
    out.high_field.samples.reserve(total);
    out.records.reserve(total);

    std::size_t index = 0;
    for (std::size_t label = 0; label < L; ++label) {
        for (std::size_t k = 0; k < cfg.class_counts[label]; ++k, ++index) {
            RandomStream root = sample_stream(cfg.seed, index);
            RandomStream bg_rng = root.split(0), sig_rng = root.split(1), noise_rng = root.split(2);
            ImageTensor bg = generate_background(cfg.background, bg_rng);
            if (cfg.normalize_background) bg = normalize_unit_range(std::move(bg));

            std::vector<SignalSpec> specs;
            for (std::size_t s = 0; s < label; ++s) {
                SignalSpec spec;
                int attempts = 0;
                do {
                    detail::require(++attempts <= 10000,
                                    "build_dataset: cannot place disjoint signals in region");
                    spec = detail::draw_signal(sc, sig_rng);
                } while (std::any_of(specs.begin(), specs.end(), [&](const SignalSpec& o) {
                    return supports_overlap(o, spec);
                }));
                specs.push_back(spec);
            }
            ImageTensor high = insert_signals(bg, specs);
            ImageTensor low = simulate_low_field(high, cfg.degradation, noise_rng);
            out.high_field.samples.push_back({std::move(high), label});
            out.low_field.samples.push_back({std::move(low), label});
            out.records.push_back({std::move(specs), keep_backgrounds ? bg : ImageTensor{}});
        }
    }
    return out;
}

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Stratified deterministic 8:1:1 (or custom) partition of sample indices.
inline SplitIndices stratified_split(const LabeledDataset& ds, std::uint64_t seed,
                                     double train_frac = 0.8, double val_frac = 0.1) {
    detail::require(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0,
                    "stratified_split: invalid fractions");
    SplitIndices out;
    RandomStream rng(seed);
    for (std::size_t label = 0; label < ds.num_classes; ++label) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.samples[i].label == label) idx.push_back(i);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
        const auto n = static_cast<double>(idx.size());
        const std::size_t n_train = static_cast<std::size_t>(std::llround(n * train_frac));
        const std::size_t n_val =
            std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * val_frac)));
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
        out.val.insert(out.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
        out.test.insert(out.test.end(), idx.begin() + n_train + n_val, idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline LabeledDataset subset(const LabeledDataset& ds, const std::vector<std::size_t>& idx,
                             Split split) {
    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.split = split;
    out.samples.reserve(idx.size());
    for (auto i : idx) out.samples.push_back(ds.samples.at(i));
    return out;
}

}  // namespace viq
