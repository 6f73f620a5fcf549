#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "viq/error.hpp"
#include "viq/tensor.hpp"

// VIQT tensor files:
//   bytes 0..7   magic "VIQT\r\n\x1a\n"
//   byte  8      dtype code
//   bytes 9..16  height, width as little-endian u32
//   payload      little-endian IEEE-754 values, row-major; complex entries
//                are stored as (real, imag) pairs
// Codes 1 (f32 real) and 2 (f32 complex) are the interchange formats.
// Codes 3 and 4 are the f64 counterparts for lossless storage of doubles.

namespace viq {

enum class Dtype : std::uint8_t { F32Real = 1, F32Complex = 2, F64Real = 3, F64Complex = 4 };

inline constexpr std::array<std::uint8_t, 8> kViqtMagic = {'V', 'I', 'Q', 'T', '\r', '\n', 0x1a, '\n'};
inline constexpr std::size_t kViqtHeaderSize = 8 + 1 + 8;

namespace detail {

inline bool dtype_is_complex(Dtype d) { return d == Dtype::F32Complex || d == Dtype::F64Complex; }
inline std::size_t dtype_word(Dtype d) {
    return (d == Dtype::F32Real || d == Dtype::F32Complex) ? 4 : 8;
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void put_value(std::vector<std::uint8_t>& out, double v, std::size_t word) {
    if (word == 4)
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
        put_u64(out, std::bit_cast<std::uint64_t>(v));
}
inline double get_value(const std::uint8_t* p, std::size_t word) {
    if (word == 4) return static_cast<double>(std::bit_cast<float>(get_u32(p)));
    return std::bit_cast<double>(get_u64(p));
}

inline std::vector<std::uint8_t> encode_header(Dtype dtype, std::size_t h, std::size_t w) {
    require(h <= UINT32_MAX && w <= UINT32_MAX, "tensor dimensions exceed u32 range");
    std::vector<std::uint8_t> out(kViqtMagic.begin(), kViqtMagic.end());
    out.push_back(static_cast<std::uint8_t>(dtype));
    put_u32(out, static_cast<std::uint32_t>(h));
    put_u32(out, static_cast<std::uint32_t>(w));
    return out;
}

struct Decoded {
    Dtype dtype;
    std::size_t height;
    std::size_t width;
    std::vector<double> values;  // interleaved for complex
};

inline Decoded decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kViqtMagic.size() ||
        !std::equal(kViqtMagic.begin(), kViqtMagic.end(), bytes.begin()))
        throw ParseError(ParseError::Kind::BadMagic, "VIQT: bad magic");
    if (bytes.size() < kViqtHeaderSize)
        throw ParseError(ParseError::Kind::Truncated, "VIQT: truncated header");
    const std::uint8_t code = bytes[8];
    if (code < 1 || code > 4)
        throw ParseError(ParseError::Kind::UnknownDtype,
                         "VIQT: unknown dtype code " + std::to_string(code));
    Decoded d{static_cast<Dtype>(code), get_u32(&bytes[9]), get_u32(&bytes[13]), {}};
    if (d.height == 0 || d.width == 0)
        throw ParseError(ParseError::Kind::Syntax, "VIQT: zero dimension");
    const std::size_t word = dtype_word(d.dtype);
    const std::size_t count = d.height * d.width * (dtype_is_complex(d.dtype) ? 2 : 1);
    const std::size_t need = kViqtHeaderSize + count * word;
    if (bytes.size() < need)
        throw ParseError(ParseError::Kind::Truncated,
                         "VIQT: truncated payload (" + std::to_string(bytes.size()) + " of " +
                             std::to_string(need) + " bytes)");
    if (bytes.size() > need)
        throw ParseError(ParseError::Kind::Syntax, "VIQT: trailing bytes after payload");
    d.values.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        d.values[i] = get_value(&bytes[kViqtHeaderSize + i * word], word);
    return d;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const ImageTensor& t, Dtype dtype = Dtype::F32Real) {
    detail::require(!detail::dtype_is_complex(dtype), "encode_tensor: real tensor needs a real dtype");
    detail::require(all_finite(t), "encode_tensor: non-finite tensor");
    auto out = detail::encode_header(dtype, t.height(), t.width());
    const std::size_t word = detail::dtype_word(dtype);
    out.reserve(out.size() + t.size() * word);
    for (double v : t.data()) detail::put_value(out, v, word);
    return out;
}

inline std::vector<std::uint8_t> encode_tensor(const ComplexSpectrum& t,
                                               Dtype dtype = Dtype::F32Complex) {
    detail::require(detail::dtype_is_complex(dtype),
                    "encode_tensor: complex tensor needs a complex dtype");
    detail::require(all_finite(t), "encode_tensor: non-finite tensor");
    auto out = detail::encode_header(dtype, t.height(), t.width());
    const std::size_t word = detail::dtype_word(dtype);
    for (const auto& v : t.data()) {
        detail::put_value(out, v.real(), word);
        detail::put_value(out, v.imag(), word);
    }
    return out;
}

inline ImageTensor decode_image(const std::vector<std::uint8_t>& bytes) {
    auto d = detail::decode(bytes);
    if (detail::dtype_is_complex(d.dtype))
        throw ParseError(ParseError::Kind::UnknownDtype, "VIQT: expected a real tensor");
    return ImageTensor(d.height, d.width, std::move(d.values));
}

inline ComplexSpectrum decode_spectrum(const std::vector<std::uint8_t>& bytes) {
    auto d = detail::decode(bytes);
    if (!detail::dtype_is_complex(d.dtype))
        throw ParseError(ParseError::Kind::UnknownDtype, "VIQT: expected a complex tensor");
    ComplexSpectrum out(d.height, d.width);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = {d.values[2 * i], d.values[2 * i + 1]};
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary and renames, so readers never observe a
/// partially written file.
inline void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

inline void atomic_write_file(const std::filesystem::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

inline void write_tensor(const std::filesystem::path& path, const ImageTensor& t,
                         Dtype dtype = Dtype::F32Real) {
    const auto bytes = encode_tensor(t, dtype);
    atomic_write_file(path, bytes.data(), bytes.size());
}

inline void write_tensor(const std::filesystem::path& path, const ComplexSpectrum& t,
                         Dtype dtype = Dtype::F32Complex) {
    const auto bytes = encode_tensor(t, dtype);
    atomic_write_file(path, bytes.data(), bytes.size());
}

inline ImageTensor read_image(const std::filesystem::path& path) {
    return decode_image(read_file_bytes(path));
}

inline ComplexSpectrum read_spectrum(const std::filesystem::path& path) {
    return decode_spectrum(read_file_bytes(path));
}

/// 8-bit binary PGM, min-max normalised. For viewing only.
inline void export_pgm(const std::filesystem::path& path, const ImageTensor& img) {
    const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
    const double lo = *lo_it, span = *hi_it - *lo_it;
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                      "\n255\n";
    for (double v : img.data()) {
        const double u = span > 0.0 ? (v - lo) / span : 0.0;
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(u * 255.0))));
    }
    atomic_write_file(path, out);
}

}  // namespace viq
