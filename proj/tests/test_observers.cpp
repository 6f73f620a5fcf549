#include <cmath>

#include "test_util.hpp"

using namespace viq;

namespace {

LabeledDataset random_images(std::size_t n, std::size_t h, std::size_t w, std::size_t L, std::uint64_t seed) {
    RandomStream rng(seed);
    LabeledDataset d;
    d.num_classes = L;
    for (std::size_t i = 0; i < n; ++i) d.samples.push_back({gaussian_tensor(h, w, 1.0, rng), i % L});
    return d;
}

TrainedObserver perturbed(const std::string& desc, std::size_t h, std::size_t w, std::size_t L, std::uint64_t seed) {
    TrainedObserver o;
    o.family = parse_family(desc, h, w, L);
    o.theta = initial_parameters(o.family, seed);
    RandomStream rng(seed + 1000);
    for (auto& v : o.theta) v += 0.3 * rng.normal();
    return o;
}

double max_prob_gap(const TrainedObserver& a, const TrainedObserver& b, const LabeledDataset& d) {
    ObserverEvaluator ea(a), eb(b);
    double gap = 0.0;
    for (const auto& s : d.samples) {
        const auto pa = ea.predict(s.image), pb = eb.predict(s.image);
        for (std::size_t y = 0; y < pa.size(); ++y) gap = std::max(gap, std::abs(pa[y] - pb[y]));
    }
    return gap;
}

}  // namespace

TEST(Family, DescriptorsRoundTrip) {
    for (const char* d : {"constant", "linear_logistic", "mlp(8,4)", "conv_stack(3,2)"}) {
        const auto f = parse_family(d, 8, 8, 2);
        EXPECT_EQ(f.descriptor(), d);
        EXPECT_EQ(parse_family(f.descriptor(), 8, 8, 2).descriptor(), d);
    }
    EXPECT_EQ(parse_family("tabular(4,0,1)", 1, 2, 2).descriptor(), "tabular(4,0,1)");
    EXPECT_EQ(parse_family("conv_stack(3)", 8, 8, 2).base_channels, 2u);
    EXPECT_EQ(parse_family(" mlp( 5 , 3 ) ", 8, 8, 2).descriptor(), "mlp(5,3)");
}

TEST(Family, BadDescriptorsAreRejected) {
    for (const char* d : {"", "resnet", "mlp()", "mlp(a)", "conv_stack(1,2,3)", "tabular(2)", "mlp(4"})
        EXPECT_THROW(parse_family(d, 8, 8, 2), ParseError) << d;
    EXPECT_THROW(parse_family("mlp(0)", 8, 8, 2), InvalidInput);
    EXPECT_THROW(parse_family("conv_stack(9,2)", 8, 8, 2), InvalidInput);
    EXPECT_THROW(parse_family("constant", 8, 8, 1), InvalidInput);
    EXPECT_THROW(parse_family("tabular(4,0,1)", 8, 8, 2), InvalidInput);  // 4^64 cells
}

TEST(Family, ParameterCounts) {
    EXPECT_EQ(param_count(parse_family("constant", 8, 8, 3)), 3u);
    EXPECT_EQ(param_count(parse_family("linear_logistic", 8, 8, 2)), 2u * 64 + 2);
    EXPECT_EQ(param_count(parse_family("mlp(5,3)", 8, 8, 2)), 64u * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2);
    // module 0: 1->2 conv + IN; module 1: 2->4 conv + IN; head over 6 features
    EXPECT_EQ(param_count(parse_family("conv_stack(2,2)", 8, 8, 2)), (18u + 4) + (72 + 8) + (2 * 6 + 2));
    EXPECT_EQ(param_count(parse_family("tabular(3,0,1)", 1, 2, 2)), 9u * 2);
}

TEST(Observer, OutputsAreDistributions) {
    const auto data = random_images(6, 8, 8, 3, 1);
    for (const char* d : {"constant", "linear_logistic", "mlp(4)", "conv_stack(3,2)"}) {
        const auto o = perturbed(d, 8, 8, 3, 2);
        for (const auto& s : data.samples) EXPECT_TRUE(predict_proba(o, s.image).valid(1e-12)) << d;
    }
}

TEST(Observer, WrongInputShapeIsRejected) {
    const auto o = perturbed("linear_logistic", 8, 8, 2, 3);
    EXPECT_THROW(predict_proba(o, ImageTensor(4, 8)), InvalidInput);
}

TEST(Observer, GradientsMatchFiniteDifferences) {
    const auto batch = random_images(5, 8, 8, 3, 4);
    for (const char* d : {"constant", "linear_logistic", "mlp(6,4)", "conv_stack(1,2)", "conv_stack(3,2)"}) {
        const auto o = perturbed(d, 8, 8, 3, 5);
        const auto g = gradient(o, batch);
        const auto fd = finite_diff_gradient(o, batch, 1e-5);
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
            worst = std::max(worst, std::abs(g[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
        EXPECT_LT(worst, 1e-6) << d;
    }
}

TEST(Observer, TabularGradientMatchesFiniteDifferences) {
    const auto data = discrete_dataset(3, 2, {2, 1, 0, 3, 4, 1});
    TrainedObserver o;
    o.family = parse_family("tabular(3,0,1)", 1, 1, 2);
    o.theta = {0.1, -0.2, 0.3, 0.0, -0.5, 0.4};
    const auto g = gradient(o, data);
    const auto fd = finite_diff_gradient(o, data, 1e-6);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], fd[i], 1e-8);
}

TEST(Tabular, FitIsEmpiricalConditional) {
    const auto data = discrete_dataset(3, 2, {2, 6, 5, 0, 0, 0});
    const auto o = fit_tabular(data, {3, 0.0, 1.0});
    ObserverEvaluator ev(o);
    EXPECT_NEAR(ev.predict(data.samples[0].image)[1], 0.75, 1e-15);
    EXPECT_NEAR(ev.predict(ImageTensor(1, 1, 0.5))[0], 1.0, 1e-15);
    EXPECT_NEAR(ev.predict(ImageTensor(1, 1, 0.9))[0], 0.5, 1e-15);  // unseen cell
    const auto smooth = fit_tabular(data, {3, 0.0, 1.0}, 1.0);
    EXPECT_NEAR(ObserverEvaluator(smooth).predict(data.samples[0].image)[1], 7.0 / 10.0, 1e-15);
}

TEST(Tabular, FitBeatsRandomTables) {
    RandomStream rng(6);
    const auto counts = random_counts(4, 3, 10, rng);
    const auto data = discrete_dataset(4, 3, counts);
    const auto best = fit_tabular(data, {4, 0.0, 1.0});
    const double nll = mean_nll(best, data);
    for (int t = 0; t < 100; ++t) {
        TrainedObserver other = best;
        for (auto& v : other.theta) v = 3.0 * rng.normal();
        EXPECT_GE(mean_nll(other, data), nll - 1e-12);
    }
}

TEST(Tabular, QuantizerBins) {
    const GridQuantizer q{4, 0.0, 1.0};
    EXPECT_EQ(q.bin(-3.0), 0u);
    EXPECT_EQ(q.bin(0.0), 0u);
    EXPECT_EQ(q.bin(0.25), 1u);
    EXPECT_EQ(q.bin(0.999), 3u);
    EXPECT_EQ(q.bin(1.0), 3u);
    EXPECT_EQ(q.bin(std::nan("")), 0u);
    ImageTensor x(1, 2);
    x(0, 0) = 0.6;
    x(0, 1) = 0.1;
    EXPECT_EQ(q.cell(x), 2u * 4 + 0);
}

TEST(Training, ConstantConvergesToPriors) {
    auto data = discrete_dataset(1, 3, {10, 30, 60});
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.epochs = 500;
    const auto o = train_observer(parse_family("constant", 1, 1, 3), data, cfg);
    const auto p = predict_proba(o, data.samples[0].image);
    EXPECT_NEAR(p[0], 0.1, 1e-3);
    EXPECT_NEAR(p[1], 0.3, 1e-3);
    EXPECT_NEAR(p[2], 0.6, 1e-3);
}

TEST(Training, LossCurveStartsAtInitAndBestIsMinimum) {
    const auto data = random_images(40, 8, 8, 2, 7);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.seed = 3;
    const auto fam = parse_family("mlp(4)", 8, 8, 2);
    const auto fit = fit_observer(fam, data, cfg);
    ASSERT_EQ(fit.outcome.train_curve.size(), 21u);
    EXPECT_EQ(fit.outcome.train_curve.front().epoch, 0u);
    double lo = 1e300;
    for (const auto& p : fit.outcome.train_curve) lo = std::min(lo, p.loss);
    EXPECT_DOUBLE_EQ(fit.outcome.best_train_loss, lo);
    EXPECT_NEAR(mean_nll(fit.by_train_loss, data), lo, 1e-12);
    EXPECT_LT(lo, fit.outcome.train_curve.front().loss);
}

TEST(Training, DeterministicGivenSeed) {
    const auto data = random_images(30, 8, 8, 2, 8);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 5;
    cfg.batch_size = 7;
    cfg.seed = 11;
    const auto fam = parse_family("conv_stack(2,2)", 8, 8, 2);
    EXPECT_EQ(train_observer(fam, data, cfg).theta, train_observer(fam, data, cfg).theta);
    cfg.seed = 12;
    const auto a = train_observer(fam, data, cfg);
    cfg.seed = 11;
    EXPECT_NE(a.theta, train_observer(fam, data, cfg).theta);
}

TEST(Training, ValidationCheckpointIsTracked) {
    const auto train = random_images(30, 4, 4, 2, 9);
    auto val = random_images(10, 4, 4, 2, 10);
    val.split = Split::Val;
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 30;
    const auto fit = fit_observer(parse_family("linear_logistic", 4, 4, 2), train, cfg, std::nullopt, &val);
    EXPECT_EQ(fit.outcome.val_curve.size(), 31u);
    EXPECT_NEAR(mean_nll(fit.by_val_loss, val), fit.outcome.best_val_loss, 1e-12);
    EXPECT_LE(fit.outcome.best_val_loss, fit.outcome.val_curve.front().loss);
}

TEST(Training, NonTrainSplitIsRejected) {
    auto data = random_images(4, 4, 4, 2, 11);
    data.split = Split::Test;
    EXPECT_THROW(train_observer(parse_family("constant", 4, 4, 2), data, {}), InvalidInput);
}

TEST(Embedding, PreservesPredictions) {
    const auto data = random_images(8, 8, 8, 3, 12);
    const std::vector<std::pair<const char*, const char*>> pairs{
        {"constant", "constant"},          {"constant", "linear_logistic"}, {"constant", "mlp(4,3)"},
        {"constant", "conv_stack(2,2)"},   {"linear_logistic", "mlp(6)"},  {"linear_logistic", "mlp(8,6)"},
        {"mlp(3)", "mlp(5)"},              {"mlp(3,2)", "mlp(4,4)"},       {"conv_stack(1,2)", "conv_stack(3,2)"},
        {"conv_stack(2,2)", "conv_stack(2,2)"}};
    for (const auto& [from, to] : pairs) {
        const auto src = perturbed(from, 8, 8, 3, 13);
        TrainedObserver dst;
        dst.family = parse_family(to, 8, 8, 3);
        dst.theta = embed_family(src, dst.family, 14);
        EXPECT_EQ(dst.theta.size(), param_count(dst.family));
        EXPECT_LT(max_prob_gap(src, dst, data), 1e-9) << from << " -> " << to;
    }
}

TEST(Embedding, ConstantIntoTabular) {
    const auto src = perturbed("constant", 1, 2, 2, 15);
    TrainedObserver dst;
    dst.family = parse_family("tabular(3,0,1)", 1, 2, 2);
    dst.theta = embed_family(src, dst.family);
    EXPECT_LT(max_prob_gap(src, dst, random_images(10, 1, 2, 2, 16)), 1e-15);
}

TEST(Embedding, UnsupportedPairsThrow) {
    const auto mlp = perturbed("mlp(4)", 8, 8, 2, 17);
    EXPECT_THROW(embed_family(mlp, parse_family("mlp(3)", 8, 8, 2)), UnsupportedEmbedding);
    EXPECT_THROW(embed_family(mlp, parse_family("mlp(4,4)", 8, 8, 2)), UnsupportedEmbedding);
    EXPECT_THROW(embed_family(mlp, parse_family("linear_logistic", 8, 8, 2)), UnsupportedEmbedding);
    const auto lin = perturbed("linear_logistic", 8, 8, 2, 18);
    EXPECT_THROW(embed_family(lin, parse_family("mlp(3)", 8, 8, 2)), UnsupportedEmbedding);
    const auto cs = perturbed("conv_stack(2,2)", 8, 8, 2, 19);
    EXPECT_THROW(embed_family(cs, parse_family("conv_stack(1,2)", 8, 8, 2)), UnsupportedEmbedding);
    EXPECT_THROW(embed_family(cs, parse_family("conv_stack(3,4)", 8, 8, 2)), UnsupportedEmbedding);
    EXPECT_THROW(embed_family(cs, parse_family("conv_stack(3,2)", 8, 8, 3)), UnsupportedEmbedding);
    EXPECT_THROW(embed_family(cs, parse_family("conv_stack(3,2)", 4, 4, 2)), UnsupportedEmbedding);
}

TEST(Checkpoint, RoundTripThroughFile) {
    viq::testing::TempDir dir;
    auto o = perturbed("conv_stack(2,2)", 8, 8, 2, 20);
    for (auto& v : o.theta) v = static_cast<float>(v);  // stored as f32
    o.selected_epoch = 7;
    save_checkpoint(dir.path() / "obs.ckpt", o);
    const auto back = load_checkpoint(dir.path() / "obs.ckpt");
    EXPECT_EQ(back.family.descriptor(), o.family.descriptor());
    EXPECT_EQ(back.family.input_height, 8u);
    EXPECT_EQ(back.selected_epoch, 7u);
    EXPECT_EQ(back.theta, o.theta);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    const auto o = perturbed("linear_logistic", 4, 4, 2, 21);
    auto bytes = encode_checkpoint(o);
    std::vector<std::uint8_t> b(bytes.begin(), bytes.end());
    auto bad = b;
    bad[0] = 'x';
    EXPECT_THROW(decode_checkpoint(bad), ParseError);
    auto cut = b;
    cut.resize(b.size() - 8);
    EXPECT_THROW(decode_checkpoint(cut), ParseError);
}
