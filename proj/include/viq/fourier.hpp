#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "viq/error.hpp"
#include "viq/tensor.hpp"

// Unitary 2-D DFT (1/sqrt(H*W) in both directions) and centred k-space
// helpers. The centred layout puts DC at (H/2, W/2) with integer division,
// which is the usual fftshift convention.

namespace viq {

namespace detail {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// twiddle[k] = exp(sign * 2 pi i k / n); the angle is reduced exactly on the
/// integer index before the trigonometric call.
inline std::vector<cplx> twiddles(std::size_t n, int sign) {
    std::vector<cplx> t(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double a = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
        t[k] = {std::cos(a), std::sin(a)};
    }
    return t;
}

/// Unnormalised in-place 1-D DFT of `n` elements spaced `stride` apart.
class Dft1d {
public:
    Dft1d(std::size_t n, int sign) : n_(n), tw_(twiddles(n, sign)), buf_(n) {
        if (is_pow2(n)) {
            rev_.resize(n);
            std::size_t bits = 0;
            while ((std::size_t{1} << bits) < n) ++bits;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t r = 0;
                for (std::size_t b = 0; b < bits; ++b)
                    if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
                rev_[i] = r;
            }
        }
    }

    void operator()(cplx* x, std::size_t stride) {
        if (n_ == 1) return;
        if (!rev_.empty()) {
            for (std::size_t i = 0; i < n_; ++i) buf_[rev_[i]] = x[i * stride];
            for (std::size_t len = 2; len <= n_; len <<= 1) {
                const std::size_t half = len / 2;
                const std::size_t step = n_ / len;
                for (std::size_t base = 0; base < n_; base += len) {
                    for (std::size_t j = 0; j < half; ++j) {
                        const cplx u = buf_[base + j];
                        const cplx v = buf_[base + j + half] * tw_[j * step];
                        buf_[base + j] = u + v;
                        buf_[base + j + half] = u - v;
                    }
                }
            }
        } else {
            for (std::size_t k = 0; k < n_; ++k) {
                cplx acc = 0.0;
                std::size_t idx = 0;
                for (std::size_t j = 0; j < n_; ++j) {
                    acc += x[j * stride] * tw_[idx];
                    idx += k;
                    if (idx >= n_) idx -= n_;
                }
                buf_[k] = acc;
            }
        }
        for (std::size_t i = 0; i < n_; ++i) x[i * stride] = buf_[i];
    }

private:
    std::size_t n_;
    std::vector<cplx> tw_;
    std::vector<cplx> buf_;
    std::vector<std::size_t> rev_;
};

inline ComplexSpectrum transform2(ComplexSpectrum s, int sign) {
    const std::size_t h = s.height();
    const std::size_t w = s.width();
    auto d = s.data();
    Dft1d rows(w, sign);
    for (std::size_t r = 0; r < h; ++r) rows(d.data() + r * w, 1);
    Dft1d cols(h, sign);
    for (std::size_t c = 0; c < w; ++c) cols(d.data() + c, w);
    const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
    for (auto& v : d) v *= scale;
    return s;
}

inline void require_spectrum(const ComplexSpectrum& s, const char* op) {
    require(s.height() > 0 && s.width() > 0, std::string(op) + ": dimension zero");
}

/// Offset of a centred block of size `inner` inside `outer`.
inline std::size_t centred_offset(std::size_t outer, std::size_t inner) {
    return outer / 2 - inner / 2;
}

}  // namespace detail

/// Forward unitary DFT. Output is in natural order (DC at index 0).
inline ComplexSpectrum dft2(const ImageTensor& img) {
    detail::require(img.height() > 0 && img.width() > 0, "dft2: dimension zero");
    detail::require(all_finite(img), "dft2: non-finite input");
    return detail::transform2(to_complex(img), -1);
}

inline ComplexSpectrum dft2(const ComplexSpectrum& spec) {
    detail::require_spectrum(spec, "dft2");
    detail::require(all_finite(spec), "dft2: non-finite input");
    return detail::transform2(spec, -1);
}

/// Inverse unitary DFT, natural order in and out.
inline ComplexSpectrum idft2(const ComplexSpectrum& spec) {
    detail::require_spectrum(spec, "idft2");
    detail::require(all_finite(spec), "idft2: non-finite input");
    return detail::transform2(spec, +1);
}

/// Moves DC from (0, 0) to (H/2, W/2).
inline ComplexSpectrum fftshift(const ComplexSpectrum& s) {
    const std::size_t h = s.height(), w = s.width();
    ComplexSpectrum out(h, w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out((r + h / 2) % h, (c + w / 2) % w) = s(r, c);
    return out;
}

/// Inverse of fftshift for both even and odd sizes.
inline ComplexSpectrum ifftshift(const ComplexSpectrum& s) {
    const std::size_t h = s.height(), w = s.width();
    ComplexSpectrum out(h, w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out(r, c) = s((r + h / 2) % h, (c + w / 2) % w);
    return out;
}

/// Extracts the centred mh x mw block of a centred spectrum.
inline ComplexSpectrum center_crop(const ComplexSpectrum& spec, std::size_t mh, std::size_t mw) {
    detail::require_spectrum(spec, "center_crop");
    detail::require(mh > 0 && mw > 0 && mh <= spec.height() && mw <= spec.width(),
                    "center_crop: block must satisfy 0 < m <= spectrum size");
    const std::size_t r0 = detail::centred_offset(spec.height(), mh);
    const std::size_t c0 = detail::centred_offset(spec.width(), mw);
    ComplexSpectrum out(mh, mw);
    for (std::size_t r = 0; r < mh; ++r)
        for (std::size_t c = 0; c < mw; ++c) out(r, c) = spec(r0 + r, c0 + c);
    return out;
}

/// Places a centred spectrum block at the centre of an H x W zero spectrum.
inline ComplexSpectrum zero_pad_center(const ComplexSpectrum& spec, std::size_t height,
                                       std::size_t width) {
    detail::require_spectrum(spec, "zero_pad_center");
    detail::require(height >= spec.height() && width >= spec.width(),
                    "zero_pad_center: target smaller than input");
    const std::size_t r0 = detail::centred_offset(height, spec.height());
    const std::size_t c0 = detail::centred_offset(width, spec.width());
    ComplexSpectrum out(height, width);
    for (std::size_t r = 0; r < spec.height(); ++r)
        for (std::size_t c = 0; c < spec.width(); ++c) out(r0 + r, c0 + c) = spec(r, c);
    return out;
}

/// Keeps the centred mh x mw block of a centred spectrum and zeroes the rest.
inline ComplexSpectrum center_mask(const ComplexSpectrum& spec, std::size_t mh, std::size_t mw) {
    return zero_pad_center(center_crop(spec, mh, mw), spec.height(), spec.width());
}

}  // namespace viq
