#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "viq/fourier.hpp"
#include "viq/info.hpp"
#include "viq/observers.hpp"
#include "viq/random.hpp"
#include "viq/task_metrics.hpp"
#include "viq/tensor_io.hpp"

// Quick oracle and property checks bundled into the binary (`viq selftest`).

namespace viq {

/// 1x1 images whose pixel value (x + 0.5) / k lands in tabular bin x, with
/// counts[x * l + y] copies of each (x, y) pair.
inline LabeledDataset discrete_dataset(std::size_t k, std::size_t l, const std::vector<std::size_t>& counts) {
    detail::require(counts.size() == k * l, "discrete_dataset: counts must be k x l");
    LabeledDataset d;
    d.num_classes = l;
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < l; ++y)
            for (std::size_t n = 0; n < counts[x * l + y]; ++n)
                d.samples.push_back({ImageTensor(1, 1, (static_cast<double>(x) + 0.5) / static_cast<double>(k)), y});
    return d;
}

/// Random k x l count table with at least one sample per label.
inline std::vector<std::size_t> random_counts(std::size_t k, std::size_t l, std::size_t max_count,
                                              RandomStream& rng) {
    std::vector<std::size_t> c(k * l);
    for (;;) {
        for (auto& v : c) v = static_cast<std::size_t>(rng.uniform_index(max_count + 1));
        bool ok = true;
        for (std::size_t y = 0; y < l; ++y) {
            std::size_t col = 0;
            for (std::size_t x = 0; x < k; ++x) col += c[x * l + y];
            ok = ok && col > 0;
        }
        if (ok) return c;
    }
}

struct SelfCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

}  // namespace detail

inline std::vector<SelfCheck> run_selftest() {
    std::vector<SelfCheck> out;
    auto check = [&](const std::string& name, const std::function<SelfCheck()>& fn) {
        try {
            SelfCheck c = fn();
            c.name = name;
            out.push_back(c);
        } catch (const std::exception& ex) {
            out.push_back({name, false, std::string("exception: ") + ex.what()});
        }
    };

    check("tabular V-info equals exact MI", [] {
        RandomStream rng(11);
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            const std::size_t k = 2 + rng.uniform_index(7), l = 2 + rng.uniform_index(3);
            const auto counts = random_counts(k, l, 20, rng);
            const auto data = discrete_dataset(k, l, counts);
            std::vector<double> dc(counts.begin(), counts.end());
            const double mi = exact_mi_discrete(JointPMF::from_counts(k, l, dc)).value;
            const auto obs = fit_tabular(data, {k, 0.0, 1.0});
            worst = std::max(worst, std::abs(v_information(obs, data).value - mi));
        }
        return SelfCheck{"", worst < 1e-9, detail::fmt("max |V-info - MI| = %.3g nats", worst)};
    });

    check("binary symmetric channel MI", [] {
        const double e = 0.1;
        const JointPMF j(2, 2, {0.5 * (1 - e), 0.5 * e, 0.5 * e, 0.5 * (1 - e)});
        const double mi = exact_mi_discrete(j).value;
        return SelfCheck{"", std::abs(mi - 0.368064) < 1e-6, detail::fmt("MI = %.6f nats", mi)};
    });

    check("data processing inequality", [] {
        RandomStream rng(12);
        double worst = -1.0;
        for (int t = 0; t < 20; ++t) {
            const std::size_t k = 2 + rng.uniform_index(8), l = 2 + rng.uniform_index(3);
            const auto c = random_counts(k, l, 9, rng);
            const auto j = JointPMF::from_counts(k, l, std::vector<double>(c.begin(), c.end()));
            const std::size_t ko = 1 + rng.uniform_index(k);
            std::vector<std::size_t> map(k);
            for (auto& m : map) m = rng.uniform_index(ko);
            worst = std::max(worst, exact_mi_discrete(j.coarsen(map, ko)).value - exact_mi_discrete(j).value);
        }
        return SelfCheck{"", worst <= 1e-12, detail::fmt("max MI increase = %.3g", worst)};
    });

    check("analytic gradients", [] {
        RandomStream rng(13);
        LabeledDataset batch;
        batch.num_classes = 3;
        for (std::size_t i = 0; i < 4; ++i)
            batch.samples.push_back({gaussian_tensor(8, 8, 1.0, rng), i % 3});
        double worst = 0.0;
        for (const char* desc : {"constant", "linear_logistic", "mlp(5,3)", "conv_stack(2,2)"}) {
            TrainedObserver obs;
            obs.family = parse_family(desc, 8, 8, 3);
            obs.theta = initial_parameters(obs.family, 5);
            for (auto& v : obs.theta) v += 0.1 * rng.normal();
            const auto g = gradient(obs, batch);
            const auto fd = finite_diff_gradient(obs, batch, 1e-4);
            for (std::size_t i = 0; i < g.size(); ++i)
                worst = std::max(worst, std::abs(g[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
        }
        return SelfCheck{"", worst < 1e-4, detail::fmt("max relative error = %.3g", worst)};
    });

    check("AUC midranks", [] {
        const double a = auc({{0.9, 0.4, 0.4}, {0.4, 0.1}});
        // pairs: (0.9 beats both) 2, (0.4 vs 0.4 tie, beats 0.1) 1.5 twice -> 5 / 6
        return SelfCheck{"", std::abs(a - 5.0 / 6.0) < 1e-15, detail::fmt("AUC = %.6f", a)};
    });

    check("VIQT round trip", [] {
        RandomStream rng(14);
        ImageTensor t(3, 5);
        for (auto& v : t.data()) v = static_cast<float>(rng.normal());
        const auto back = decode_image(encode_tensor(t));
        const bool same = back.same_shape(t) &&
                          std::equal(t.data().begin(), t.data().end(), back.data().begin());
        return SelfCheck{"", same, "3x5 f32 tensor"};
    });

    check("unitary DFT", [] {
        RandomStream rng(15);
        const ImageTensor x = gaussian_tensor(6, 10, 1.0, rng);
        const ComplexSpectrum f = dft2(x);
        double ex = 0.0, ef = 0.0, err = 0.0;
        for (double v : x.data()) ex += v * v;
        for (const auto& v : f.data()) ef += std::norm(v);
        const ImageTensor back = real_part(idft2(f));
        for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back.data()[i] - x.data()[i]));
        return SelfCheck{"", std::abs(ex - ef) < 1e-9 * ex && err < 1e-12,
                         detail::fmt("Parseval gap %.3g, round-trip error %.3g", std::abs(ex - ef), err)};
    });
    return out;
}

}  // namespace viq
