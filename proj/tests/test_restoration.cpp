#include <cmath>

#include "test_util.hpp"

using namespace viq;

namespace {

std::vector<ImagePair> blur_pairs(std::size_t n, std::size_t size, std::uint64_t seed) {
    BackgroundConfig bc;
    bc.height = bc.width = size;
    bc.blob_count_mean = 3;
    bc.blob_sigma_range = {1.0, 2.0};
    DegradationConfig dc{size / 2, size / 2, 0.02, Reconstruction::Magnitude};
    RandomStream rng(seed);
    std::vector<ImagePair> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto hi = generate_background(bc, rng);
        auto lo = simulate_low_field(hi, dc, rng);
        out.emplace_back(std::move(lo), std::move(hi));
    }
    return out;
}

RestorationModel random_model(const RestorerArch& a, std::size_t h, std::size_t w, std::uint64_t seed) {
    auto m = zero_restorer(a, h, w);
    RandomStream rng(seed);
    for (auto& v : m.theta) v = 0.3 * rng.normal();
    return m;
}

}  // namespace

TEST(Restorer, ParameterCount) {
    // levels 1: in conv 1->2 (+bias), out conv 2->1 (+bias)
    EXPECT_EQ(restorer_param_count({1, 2, true}, 8, 8), (18u + 2) + (18 + 1));
    // levels 2 adds an encoder conv 2->4 and a decoder conv 4->2
    EXPECT_EQ(restorer_param_count({2, 2, true}, 8, 8), (18u + 2) + (72 + 4) + (72 + 2) + (18 + 1));
}

TEST(Restorer, ZeroModelWithSkipsIsIdentity) {
    const auto x = viq::testing::random_image(16, 16, 1);
    EXPECT_EQ(restore(zero_restorer({3, 2, true}, 16, 16), x), x);
    const auto flat = restore(zero_restorer({2, 2, false}, 16, 16), x);
    for (double v : flat.data()) EXPECT_EQ(v, 0.0);
}

TEST(Restorer, InvalidArchitecture) {
    EXPECT_THROW(zero_restorer({3, 2, true}, 12, 10), InvalidInput);
    EXPECT_THROW(zero_restorer({0, 2, true}, 8, 8), InvalidInput);
    EXPECT_THROW(restore(zero_restorer({1, 2, true}, 8, 8), ImageTensor(4, 4)), InvalidInput);
}

TEST(Restorer, GradientMatchesFiniteDifferences) {
    const auto pairs = blur_pairs(2, 8, 2);
    for (bool skips : {true, false}) {
        const RestorerArch a{2, 2, skips};
        const auto m = random_model(a, 8, 8, 3);
        detail::RestorerObjective obj(a, pairs);
        std::vector<double> g(m.theta.size(), 0.0);
        const std::vector<std::size_t> idx{0, 1};
        obj.loss_grad(idx, m.theta, g);
        auto theta = m.theta;
        const double eps = 1e-6;
        double worst = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double keep = theta[i];
            theta[i] = keep + eps;
            const double up = obj.loss(theta) * 2.0;
            theta[i] = keep - eps;
            const double down = obj.loss(theta) * 2.0;
            theta[i] = keep;
            const double fd = (up - down) / (2 * eps);
            worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
        }
        EXPECT_LT(worst, 1e-6) << "skips " << skips;
    }
}

TEST(Restorer, TrainingImprovesOnDegradedInput) {
    const auto train = blur_pairs(24, 16, 4);
    const auto val = blur_pairs(8, 16, 5);
    TrainConfig cfg;
    cfg.learning_rate = 0.003;
    cfg.epochs = 15;
    cfg.batch_size = 4;
    cfg.seed = 6;
    const auto m = train_restorer(train, cfg, {2, 4, true}, val);
    ASSERT_EQ(m.val_loss_curve.size(), 16u);
    EXPECT_LT(m.val_loss_curve[m.selected_epoch].loss, m.val_loss_curve.front().loss);
    double before = 0.0, after = 0.0;
    Restorer r(m);
    for (const auto& [lo, hi] : val) {
        before += mean_squared_error(lo, hi);
        after += mean_squared_error(r(lo), hi);
    }
    EXPECT_LT(after, before);
}

TEST(Restorer, TrainingIsDeterministic) {
    const auto train = blur_pairs(6, 8, 7);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 8;
    EXPECT_EQ(train_restorer(train, cfg, {2, 2, true}).theta, train_restorer(train, cfg, {2, 2, true}).theta);
}

TEST(Restorer, CheckpointRoundTripIsBitExact) {
    viq::testing::TempDir dir;
    auto m = random_model({2, 3, false}, 8, 8, 9);
    m.selected_epoch = 4;
    save_restorer(dir / "r.ckpt", m);
    const auto back = load_restorer(dir / "r.ckpt");
    EXPECT_EQ(back.theta, m.theta);
    EXPECT_EQ(back.arch.levels, 2u);
    EXPECT_EQ(back.arch.base_channels, 3u);
    EXPECT_FALSE(back.arch.skip_connections);
    EXPECT_EQ(back.selected_epoch, 4u);
    const auto x = viq::testing::random_image(8, 8, 10);
    EXPECT_EQ(restore(back, x), restore(m, x));
}

TEST(Restorer, CorruptCheckpoints) {
    const auto m = random_model({1, 2, true}, 8, 8, 11);
    const auto text = encode_restorer(m);
    auto as_bytes = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
    auto kind = [&](const std::string& s) {
        try {
            decode_restorer(as_bytes(s));
        } catch (const ParseError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    EXPECT_EQ(kind("garbage"), static_cast<int>(ParseError::Kind::BadMagic));
    std::string unknown = text;
    unknown.insert(unknown.find("end\n"), "colour = red\n");
    EXPECT_EQ(kind(unknown), static_cast<int>(ParseError::Kind::Syntax));
    std::string badval = text;
    badval.replace(badval.find("levels = 1"), 10, "levels = x");
    EXPECT_EQ(kind(badval), static_cast<int>(ParseError::Kind::Syntax));
    std::string count = text;
    count.replace(count.find("params = 39"), 11, "params = 38");
    EXPECT_EQ(kind(count), static_cast<int>(ParseError::Kind::Truncated));
    EXPECT_EQ(kind(text.substr(0, text.size() - 8)), static_cast<int>(ParseError::Kind::Truncated));
}

TEST(Wiener, InfiniteSignalPowerIsIdealLowPass) {
    const auto x = viq::testing::random_image(16, 16, 12);
    const DegradationConfig dc{7, 7, 0.0, Reconstruction::RealPart};
    RandomStream rng(1);
    const auto low = simulate_low_field(x, dc, rng);
    const auto w = wiener_restore(low, dc, ImageTensor(16, 16, 1e6));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(w.data()[i], low.data()[i], 1e-12);
}

TEST(Wiener, MonteCarloMseMatchesTheory) {
    // White object (E|F|^2 = 1), per-coefficient noise power 1 inside a 15x15
    // block of a 16x16 grid: MSE per pixel = (225 * 1/2 + 31) / 256.
    const DegradationConfig dc{15, 15, 1.0, Reconstruction::RealPart};
    const ImageTensor S(16, 16, 1.0);
    RandomStream rng(13);
    double mse_w = 0.0, mse_low = 0.0;
    const int reps = 400;
    for (int i = 0; i < reps; ++i) {
        const auto x = gaussian_tensor(16, 16, 1.0, rng);
        const auto low = simulate_low_field(x, dc, rng);
        mse_w += mean_squared_error(wiener_restore(low, dc, S), x) / reps;
        mse_low += mean_squared_error(low, x) / reps;
    }
    EXPECT_NEAR(mse_w, 143.5 / 256.0, 0.02);
    EXPECT_NEAR(mse_low, 256.0 / 256.0, 0.03);
    EXPECT_LT(mse_w, mse_low);
}
