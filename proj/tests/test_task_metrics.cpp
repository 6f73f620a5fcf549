#include <cmath>

#include "test_util.hpp"

using namespace viq;

namespace {

double brute_auc(const ScoreSet& s) {
    double wins = 0.0;
    for (double p : s.positives)
        for (double n : s.negatives) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / static_cast<double>(s.positives.size() * s.negatives.size());
}

/// Direct 2D-window SSIM with the same constants.
double brute_ssim(const ImageTensor& a, const ImageTensor& b, double L) {
    const int n = 11;
    double w[11][11], s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) s += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
    const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
    double total = 0.0;
    int count = 0;
    for (std::size_t r = 0; r + n <= a.height(); ++r)
        for (std::size_t c = 0; c + n <= a.width(); ++c) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double k = w[i][j] / s, x = a(r + i, c + j), y = b(r + i, c + j);
                    mx += k * x;
                    my += k * y;
                    xx += k * x * x;
                    yy += k * y * y;
                    xy += k * x * y;
                }
            const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
            total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

}  // namespace

TEST(Auc, KnownCases) {
    EXPECT_DOUBLE_EQ(auc({{0.9, 0.8}, {0.1, 0.2}}), 1.0);
    EXPECT_DOUBLE_EQ(auc({{0.1, 0.2}, {0.9, 0.8}}), 0.0);
    EXPECT_DOUBLE_EQ(auc({{0.5, 0.5}, {0.5, 0.5, 0.5}}), 0.5);
    EXPECT_DOUBLE_EQ(auc({{0.9, 0.4, 0.4}, {0.4, 0.1}}), 5.0 / 6.0);
}

TEST(Auc, MatchesPairCounting) {
    RandomStream rng(1);
    for (int t = 0; t < 50; ++t) {
        ScoreSet s;
        const auto np = 1 + rng.uniform_index(30), nn = 1 + rng.uniform_index(30);
        for (std::size_t i = 0; i < np; ++i) s.positives.push_back(static_cast<double>(rng.uniform_index(6)));
        for (std::size_t i = 0; i < nn; ++i) s.negatives.push_back(static_cast<double>(rng.uniform_index(6)));
        EXPECT_NEAR(auc(s), brute_auc(s), 1e-15);
    }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
    RandomStream rng(2);
    ScoreSet s, t;
    for (int i = 0; i < 40; ++i) {
        const double p = rng.normal() + 0.5, n = rng.normal();
        s.positives.push_back(p);
        s.negatives.push_back(n);
        t.positives.push_back(std::exp(3 * p));
        t.negatives.push_back(std::exp(3 * n));
    }
    EXPECT_DOUBLE_EQ(auc(s), auc(t));
}

TEST(Auc, RejectsEmptyOrNonFinite) {
    EXPECT_THROW(auc({{}, {0.1}}), InvalidInput);
    EXPECT_THROW(auc({{0.1}, {}}), InvalidInput);
    EXPECT_THROW(auc({{std::nan("")}, {0.1}}), InvalidInput);
}

TEST(Accuracy, CountsArgmaxHits) {
    const auto data = discrete_dataset(2, 2, {3, 1, 1, 3});
    const auto obs = fit_tabular(data, {2, 0.0, 1.0});
    EXPECT_DOUBLE_EQ(accuracy(obs, data), 0.75);
    const auto s = class_scores(obs, data);
    EXPECT_EQ(s.positives.size(), 4u);
    EXPECT_DOUBLE_EQ(auc(s), brute_auc(s));
}

TEST(Ssim, IdentitySymmetryAndBound) {
    const auto a = viq::testing::random_image(20, 24, 3);
    const auto b = viq::testing::random_image(20, 24, 4);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LT(ssim(a, b), 1.0);
    EXPECT_NEAR(ssim(ImageTensor(12, 12, 0.3), ImageTensor(12, 12, 0.3)), 1.0, 1e-15);
}

TEST(Ssim, MatchesDirectWindowSum) {
    const auto a = viq::testing::random_image(16, 18, 5);
    auto b = a;
    RandomStream rng(6);
    for (auto& v : b.data()) v += 0.3 * rng.normal();
    EXPECT_NEAR(ssim(a, b, 2.0), brute_ssim(a, b, 2.0), 1e-12);
}

TEST(Ssim, RejectsSmallOrMismatched) {
    EXPECT_THROW(ssim(ImageTensor(10, 20), ImageTensor(10, 20)), InvalidInput);
    EXPECT_THROW(ssim(ImageTensor(12, 12), ImageTensor(12, 13)), InvalidInput);
}

TEST(Psnr, KnownValue) {
    ImageTensor a(4, 4, 0.0), b(4, 4, 0.1);
    EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-12);
    EXPECT_TRUE(std::isinf(psnr(a, a, 1.0)));
    EXPECT_THROW(psnr(a, b, 0.0), InvalidInput);
}

TEST(LinearFit, CollinearAndConstant) {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
    const auto f = linear_fit_r2(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-15);
    EXPECT_NEAR(f.intercept, 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(f.r_squared, 1.0);
    EXPECT_DOUBLE_EQ(linear_fit_r2(x, std::vector<double>{2, 2, 2, 2}).r_squared, 0.0);
    EXPECT_THROW(linear_fit_r2(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidInput);
    EXPECT_THROW(linear_fit_r2(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST(LinearFit, KnownNoisyFit) {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 0, 1, 4};
    const double mx = 1.5, my = 1.5;
    double sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    const auto f = linear_fit_r2(x, y);
    EXPECT_NEAR(f.slope, sxy / sxx, 1e-15);
    EXPECT_NEAR(f.r_squared, sxy * sxy / (sxx * syy), 1e-12);
}
