#include <cmath>

#include "test_util.hpp"

using namespace viq;

namespace {

/// Plug-in MI from a count table, written directly from the definition.
double mi_from_counts(std::size_t k, std::size_t l, const std::vector<std::size_t>& c) {
    double n = 0.0;
    for (auto v : c) n += static_cast<double>(v);
    double mi = 0.0;
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < l; ++y) {
            const double nxy = static_cast<double>(c[x * l + y]);
            if (nxy == 0.0) continue;
            double nx = 0.0, ny = 0.0;
            for (std::size_t j = 0; j < l; ++j) nx += static_cast<double>(c[x * l + j]);
            for (std::size_t i = 0; i < k; ++i) ny += static_cast<double>(c[i * l + y]);
            mi += nxy / n * std::log(nxy * n / (nx * ny));
        }
    return mi;
}

}  // namespace

TEST(Entropy, KnownValues) {
    EXPECT_NEAR(label_entropy(ProbVector({0.5, 0.5})).value, std::log(2.0), 1e-15);
    EXPECT_NEAR(label_entropy(ProbVector({1.0, 0.0})).value, 0.0, 1e-15);
    EXPECT_NEAR(label_entropy(ProbVector({0.25, 0.25, 0.25, 0.25})).value, std::log(4.0), 1e-15);
    EXPECT_THROW(label_entropy(ProbVector({0.5, 0.6})), InvalidInput);
}

TEST(ExactMI, BinarySymmetricChannel) {
    const double e = 0.1;
    const JointPMF j(2, 2, {0.5 * (1 - e), 0.5 * e, 0.5 * e, 0.5 * (1 - e)});
    const double h = -e * std::log(e) - (1 - e) * std::log(1 - e);
    EXPECT_NEAR(exact_mi_discrete(j).value, std::log(2.0) - h, 1e-15);
    EXPECT_NEAR(exact_mi_discrete(j).value, 0.368064, 1e-6);
}

TEST(ExactMI, IndependentIsZeroAndIdentityIsEntropy) {
    const JointPMF ind(2, 3, {0.1, 0.2, 0.1, 0.15, 0.3, 0.15});
    EXPECT_NEAR(exact_mi_discrete(ind).value, 0.0, 1e-15);
    const JointPMF id(3, 3, {0.2, 0, 0, 0, 0.3, 0, 0, 0, 0.5});
    EXPECT_NEAR(exact_mi_discrete(id).value, label_entropy(ProbVector({0.2, 0.3, 0.5})).value, 1e-15);
}

TEST(ExactMI, InvalidJointsAreRejected) {
    EXPECT_THROW(JointPMF(2, 2, {0.5, 0.5, 0.5, -0.5}), InvalidInput);
    EXPECT_THROW(JointPMF(2, 2, {0.5, 0.5, 0.5}), InvalidInput);
    EXPECT_THROW(JointPMF(2, 2, {0.25, 0.25, 0.25, 0.2}), InvalidInput);
}

TEST(ExactMI, DataProcessingInequality) {
    RandomStream rng(1);
    for (int t = 0; t < 100; ++t) {
        const std::size_t k = 2 + rng.uniform_index(7), l = 2 + rng.uniform_index(3);
        const auto c = random_counts(k, l, 9, rng);
        const auto j = JointPMF::from_counts(k, l, std::vector<double>(c.begin(), c.end()));
        const std::size_t ko = 1 + rng.uniform_index(k);
        std::vector<std::size_t> map(k);
        for (auto& m : map) m = rng.uniform_index(ko);
        EXPECT_LE(exact_mi_discrete(j.coarsen(map, ko)).value, exact_mi_discrete(j).value + 1e-12);
    }
}

TEST(VInfo, TabularEqualsPluginMI) {
    RandomStream rng(2);
    for (int t = 0; t < 20; ++t) {
        const std::size_t k = 2 + rng.uniform_index(7), l = 2 + rng.uniform_index(3);
        const auto c = random_counts(k, l, 15, rng);
        const auto data = discrete_dataset(k, l, c);
        const auto obs = fit_tabular(data, {k, 0.0, 1.0});
        EXPECT_NEAR(v_information(obs, data).value, mi_from_counts(k, l, c), 1e-9);
    }
}

TEST(VInfo, ConstantFamilyFitIsZero) {
    const auto data = discrete_dataset(3, 2, {4, 1, 2, 5, 3, 3});
    const auto obs = fit_tabular(discrete_dataset(1, 2, {9, 9}), {1, 0.0, 1.0});
    EXPECT_NEAR(v_information(obs, data).value, 0.0, 1e-12);
}

TEST(VInfo, ClampingFloorsConfidentMistakes) {
    auto data = discrete_dataset(2, 2, {3, 0, 0, 3});
    const auto obs = fit_tabular(data, {2, 0.0, 1.0});
    data.samples.push_back({ImageTensor(1, 1, 0.25), 1});  // contradicts the fit
    const auto h = v_conditional_entropy(obs, data);
    EXPECT_TRUE(h.clamped);
    EXPECT_NEAR(h.value, -std::log(kProbClamp) / 7.0, 1e-9);
    EXPECT_FALSE(v_conditional_entropy(obs, discrete_dataset(2, 2, {3, 0, 0, 3})).clamped);
    EXPECT_GT(v_conditional_entropy(obs, data, false).value, h.value);
}

TEST(VInfo, PriorsOverrideAndSplitTag) {
    auto data = discrete_dataset(2, 2, {3, 1, 1, 3});
    data.split = Split::Test;
    const auto obs = fit_tabular(data, {2, 0.0, 1.0});
    const auto emp = v_information(obs, data);
    const auto given = v_information(obs, data, ProbVector({0.9, 0.1}));
    EXPECT_EQ(emp.split, Split::Test);
    EXPECT_NEAR(emp.value - given.value, std::log(2.0) - label_entropy(ProbVector({0.9, 0.1})).value, 1e-12);
    EXPECT_THROW(v_information(obs, data, ProbVector({0.3, 0.3, 0.4})), InvalidInput);
}

TEST(VInfo, PointwiseAveragesToVInfo) {
    const auto data = discrete_dataset(3, 2, {5, 1, 2, 2, 1, 4});
    const auto obs = fit_tabular(data, {3, 0.0, 1.0});
    TrainedObserver base;
    base.family = parse_family("constant", 1, 1, 2);
    base.theta = {std::log(8.0 / 15.0), std::log(7.0 / 15.0)};
    double mean = 0.0;
    for (const auto& s : data.samples) mean += pointwise_v_info(obs, base, s).value;
    mean /= static_cast<double>(data.size());
    EXPECT_NEAR(mean, v_information(obs, data).value, 1e-12);
    EXPECT_THROW(pointwise_v_info(obs, obs, data.samples[0]), InvalidInput);
}
