#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "viq/error.hpp"

namespace viq {

/// Dense row-major 2-D grid. Element (r, c) lives at data()[r * width() + c].
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;

    Grid(std::size_t height, std::size_t width, T fill = T{})
        : height_(height), width_(width), data_(height * width, fill) {
        check_dims(height, width);
    }

    Grid(std::size_t height, std::size_t width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        check_dims(height, width);
        detail::require(data_.size() == height * width,
                        "grid data length " + std::to_string(data_.size()) + " does not match " +
                            std::to_string(height) + "x" + std::to_string(width));
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * width_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * width_ + c]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    bool same_shape(const Grid& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static void check_dims(std::size_t h, std::size_t w) {
        detail::require(h > 0 && w > 0, "grid dimensions must be positive");
    }

    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<T> data_;
};

using ImageTensor = Grid<double>;
using ComplexSpectrum = Grid<std::complex<double>>;

inline bool all_finite(const ImageTensor& img) {
    return std::all_of(img.data().begin(), img.data().end(),
                       [](double v) { return std::isfinite(v); });
}

inline bool all_finite(const ComplexSpectrum& s) {
    return std::all_of(s.data().begin(), s.data().end(), [](const std::complex<double>& v) {
        return std::isfinite(v.real()) && std::isfinite(v.imag());
    });
}

inline double sum(const ImageTensor& img) {
    double acc = 0.0;
    for (double v : img.data()) acc += v;
    return acc;
}

inline double energy(const ImageTensor& img) {
    double acc = 0.0;
    for (double v : img.data()) acc += v * v;
    return acc;
}

inline double energy(const ComplexSpectrum& s) {
    double acc = 0.0;
    for (const auto& v : s.data()) acc += std::norm(v);
    return acc;
}

inline ComplexSpectrum to_complex(const ImageTensor& img) {
    ComplexSpectrum out(img.height(), img.width());
    auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = {src[i], 0.0};
    return out;
}

inline ImageTensor real_part(const ComplexSpectrum& s) {
    ImageTensor out(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) out.data()[i] = s.data()[i].real();
    return out;
}

inline ImageTensor imag_part(const ComplexSpectrum& s) {
    ImageTensor out(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) out.data()[i] = s.data()[i].imag();
    return out;
}

inline ImageTensor magnitude(const ComplexSpectrum& s) {
    ImageTensor out(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) out.data()[i] = std::abs(s.data()[i]);
    return out;
}

inline double mean_squared_error(const ImageTensor& a, const ImageTensor& b) {
    detail::require(a.same_shape(b), "mean_squared_error: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace viq
