#include <cmath>

#include "test_util.hpp"

using namespace viq;
using viq::testing::random_image;

TEST(Fourier, DeltaHasFlatSpectrum) {
    ImageTensor d(4, 4);
    d(0, 0) = 1.0;
    const auto f = dft2(d);
    for (const auto& v : f.data()) {
        EXPECT_NEAR(v.real(), 0.25, 1e-15);
        EXPECT_NEAR(v.imag(), 0.0, 1e-15);
    }
}

TEST(Fourier, FlatSpectrumInvertsToDelta) {
    ComplexSpectrum f(4, 4, std::complex<double>(0.25, 0.0));
    const auto x = idft2(f);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_NEAR(x(r, c).real(), r == 0 && c == 0 ? 1.0 : 0.0, 1e-15);
            EXPECT_NEAR(x(r, c).imag(), 0.0, 1e-15);
        }
}

TEST(Fourier, ParsevalAndRoundTripAcrossShapes) {
    const std::pair<std::size_t, std::size_t> shapes[] = {{8, 8}, {6, 10}, {1, 7}, {64, 64}, {5, 3}};
    std::uint64_t seed = 10;
    for (const auto& [h, w] : shapes) {
        const auto x = random_image(h, w, seed++);
        const auto f = dft2(x);
        EXPECT_LT(std::abs(energy(f) - energy(x)) / energy(x), 1e-9) << h << "x" << w;
        const auto back = idft2(f);
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(back.data()[i].real(), x.data()[i], 1e-9);
            EXPECT_NEAR(back.data()[i].imag(), 0.0, 1e-9);
        }
        const auto again = dft2(idft2(f));
        for (std::size_t i = 0; i < f.size(); ++i) EXPECT_LT(std::abs(again.data()[i] - f.data()[i]), 1e-9);
    }
}

TEST(Fourier, MatchesNaiveDft) {
    const auto x = random_image(6, 4, 3);
    const auto f = dft2(x);
    const double pi = std::acos(-1.0);
    for (std::size_t u = 0; u < 6; ++u)
        for (std::size_t v = 0; v < 4; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t r = 0; r < 6; ++r)
                for (std::size_t c = 0; c < 4; ++c)
                    acc += x(r, c) * std::polar(1.0, -2.0 * pi * (double(u * r) / 6.0 + double(v * c) / 4.0));
            acc /= std::sqrt(24.0);
            EXPECT_LT(std::abs(acc - f(u, v)), 1e-12);
        }
}

TEST(Fourier, HermitianSpectrumGivesRealImage) {
    const auto f = dft2(random_image(8, 6, 4));
    const auto x = idft2(f);
    for (const auto& v : x.data()) EXPECT_LT(std::abs(v.imag()), 1e-9);
}

TEST(Fourier, ZeroDimensionIsInvalid) {
    EXPECT_THROW(ImageTensor(0, 4), InvalidInput);
    EXPECT_THROW(ComplexSpectrum(3, 0), InvalidInput);
}

TEST(Fourier, ShiftRoundTripAndDcAtCentre) {
    ImageTensor ones(6, 8, 1.0);
    const auto s = fftshift(dft2(ones));
    EXPECT_NEAR(std::abs(s(3, 4)), std::sqrt(48.0), 1e-12);
    const auto f = dft2(random_image(5, 7, 5));
    EXPECT_EQ(ifftshift(fftshift(f)), f);
}

TEST(CenterMask, FullMaskIsIdentity) {
    const auto s = fftshift(dft2(random_image(8, 8, 6)));
    EXPECT_EQ(center_mask(s, 8, 8), s);
}

TEST(CenterMask, AllOnesKeepsCentredBlock) {
    ComplexSpectrum s(4, 4, std::complex<double>(1.0, 0.0));
    const auto m = center_mask(s, 2, 2);
    std::size_t nonzero = 0;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            const bool inside = r >= 1 && r < 3 && c >= 1 && c < 3;
            if (m(r, c) != std::complex<double>(0.0)) ++nonzero;
            EXPECT_EQ(m(r, c), inside ? std::complex<double>(1.0) : std::complex<double>(0.0));
        }
    EXPECT_EQ(nonzero, 4u);
}

TEST(CenterMask, EvenDimensionCentringRule) {
    ComplexSpectrum s(8, 10, std::complex<double>(1.0, 0.0));
    const auto m = center_mask(s, 3, 4);
    // rows [4 - 1, 4 - 1 + 3), cols [5 - 2, 5 - 2 + 4)
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 10; ++c)
            EXPECT_EQ(std::abs(m(r, c)), (r >= 3 && r < 6 && c >= 3 && c < 7) ? 1.0 : 0.0);
}

TEST(CenterMask, RetainedEnergyOfSmoothGaussian) {
    ImageTensor g(8, 8);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            g(r, c) = std::exp(-((r - 3.5) * (r - 3.5) + (c - 3.5) * (c - 3.5)) / 8.0);
    const auto s = fftshift(dft2(g));
    double oracle = 0.0;
    for (std::size_t r = 2; r < 6; ++r)
        for (std::size_t c = 2; c < 6; ++c) oracle += std::norm(s(r, c));
    EXPECT_NEAR(energy(center_mask(s, 4, 4)), oracle, 1e-12);
    EXPECT_LT(oracle, energy(s));
}

TEST(CenterMask, ShrinkingMaskNeverGainsEnergy) {
    const auto s = fftshift(dft2(random_image(16, 16, 7)));
    double prev = energy(s);
    for (std::size_t m = 16; m >= 1; --m) {
        const double e = energy(center_mask(s, m, m));
        EXPECT_LE(e, prev + 1e-12);
        prev = e;
    }
}

TEST(CenterMask, TooLargeMaskIsInvalid) {
    EXPECT_THROW(center_mask(ComplexSpectrum(4, 4), 5, 4), InvalidInput);
    EXPECT_THROW(center_mask(ComplexSpectrum(4, 4), 0, 4), InvalidInput);
}

TEST(ZeroPad, SameSizeIsIdentity) {
    const auto s = dft2(random_image(4, 6, 8));
    EXPECT_EQ(zero_pad_center(s, 4, 6), s);
}

TEST(ZeroPad, TwoByTwoIntoFourByFour) {
    ComplexSpectrum s(2, 2, std::complex<double>(1.0, 2.0));
    const auto p = zero_pad_center(s, 4, 4);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            EXPECT_EQ(p(r, c) != std::complex<double>(0.0), r >= 1 && r < 3 && c >= 1 && c < 3);
}

TEST(ZeroPad, MaskOfPadReembedsBlock) {
    const auto s = dft2(random_image(3, 4, 9));
    const auto padded = zero_pad_center(s, 8, 9);
    EXPECT_EQ(center_mask(padded, 3, 4), padded);
    EXPECT_EQ(center_crop(padded, 3, 4), s);
}

TEST(ZeroPad, SmallerTargetIsInvalid) {
    EXPECT_THROW(zero_pad_center(ComplexSpectrum(4, 4), 3, 4), InvalidInput);
}

TEST(RandomStream, SameSeedSameSequence) {
    RandomStream a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        differs = differs || x != c.next_u64();
    }
    EXPECT_TRUE(differs);
}

TEST(RandomStream, KnownFirstDraws) {
    // Frozen outputs of the counter-based generator.
    RandomStream r(0);
    const std::uint64_t first = r.next_u64();
    RandomStream again(0);
    EXPECT_EQ(again.next_u64(), first);
    EXPECT_EQ(mix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(RandomStream, SplitStreamsAreIndependentOfConsumption) {
    RandomStream a(5);
    const auto child = a.split(3).next_u64();
    a.next_u64();
    a.next_u64();
    EXPECT_EQ(a.split(3).next_u64(), child);
    EXPECT_NE(a.split(4).next_u64(), child);
}

TEST(RandomStream, UniformIndexInRange) {
    RandomStream r(6);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 7000; ++i) ++hist[r.uniform_index(7)];
    for (int h : hist) EXPECT_GT(h, 800);
}

TEST(RandomStream, PoissonMean) {
    RandomStream r(7);
    double s = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) s += static_cast<double>(r.poisson(10.0));
    EXPECT_NEAR(s / n, 10.0, 3.0 * std::sqrt(10.0 / n));
    EXPECT_EQ(RandomStream(1).poisson(0.0), 0u);
}

TEST(GaussianTensor, ZeroSigmaIsZero) {
    RandomStream r(1);
    const auto t = gaussian_tensor(3, 3, 0.0, r);
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(GaussianTensor, Deterministic) {
    RandomStream a(9), b(9);
    EXPECT_EQ(gaussian_tensor(5, 5, 2.0, a), gaussian_tensor(5, 5, 2.0, b));
}

TEST(GaussianTensor, MillionSamplesMoments) {
    RandomStream r(2024);
    const auto t = gaussian_tensor(1000, 1000, 35.0, r);
    double m = 0.0;
    for (double v : t.data()) m += v;
    m /= 1e6;
    double ss = 0.0;
    for (double v : t.data()) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / (1e6 - 1));
    EXPECT_NEAR(m, 0.0, 0.2);
    EXPECT_NEAR(sd, 35.0, 0.2);
}

TEST(GaussianTensor, ComplexPartsIndependentWithSigma) {
    RandomStream r(3);
    const auto t = complex_gaussian_tensor(500, 500, 2.0, r);
    double re2 = 0.0, im2 = 0.0, cross = 0.0;
    for (const auto& v : t.data()) {
        re2 += v.real() * v.real();
        im2 += v.imag() * v.imag();
        cross += v.real() * v.imag();
    }
    const double n = 250000.0;
    EXPECT_NEAR(std::sqrt(re2 / n), 2.0, 0.02);
    EXPECT_NEAR(std::sqrt(im2 / n), 2.0, 0.02);
    EXPECT_NEAR(cross / n, 0.0, 0.05);
}

TEST(GaussianTensor, NegativeSigmaIsInvalid) {
    RandomStream r(1);
    EXPECT_THROW(gaussian_tensor(2, 2, -1.0, r), InvalidInput);
    EXPECT_THROW(complex_gaussian_tensor(2, 2, -1.0, r), InvalidInput);
}

TEST(HashSeeds, AddingKeysNeverPerturbsExisting) {
    const auto a = hash64(1, 0, "low_field", "conv_stack(1,2)");
    EXPECT_EQ(a, hash64(1, 0, "low_field", "conv_stack(1,2)"));
    EXPECT_NE(a, hash64(1, 1, "low_field", "conv_stack(1,2)"));
    EXPECT_NE(a, hash64(1, 0, "restored", "conv_stack(1,2)"));
    EXPECT_NE(a, hash64(2, 0, "low_field", "conv_stack(1,2)"));
}
