#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "viq/error.hpp"
#include "viq/imaging.hpp"
#include "viq/nn.hpp"
#include "viq/optim.hpp"
#include "viq/random.hpp"
#include "viq/tensor.hpp"
#include "viq/tensor_io.hpp"

// Observer families: parameterised maps from an image to a distribution over
// L class labels, all ending in a softmax over logits.
//
//   constant         logits = theta (ignores the image)
//   tabular          one logit vector per quantiser cell
//   linear_logistic  logits = W vec(x) + b
//   mlp(h1, ...)     dense layers with softplus activations
//   conv_stack(k, c) k modules (3x3 conv, instance norm, softplus, 2x average
//                    pool; channels c, 2c, 4c, ...). Every module contributes
//                    a log-sum-exp pooled feature per channel; a dense head
//                    reads the concatenation of all module features.
//
// Adding a module to conv_stack only appends features, so a deeper stack
// whose new head columns are zero computes the same function.

namespace viq {

class ProbVector {
public:
    ProbVector() = default;
    explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {}

    std::size_t size() const noexcept { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    const std::vector<double>& entries() const noexcept { return p_; }

    /// Index of the largest entry; ties resolve to the lowest index.
    std::size_t argmax() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < p_.size(); ++i)
            if (p_[i] > p_[best]) best = i;
        return best;
    }

    bool valid(double tol = 1e-9) const {
        double s = 0.0;
        for (double v : p_) {
            if (!(v >= 0.0)) return false;
            s += v;
        }
        return !p_.empty() && std::abs(s - 1.0) <= tol;
    }

private:
    std::vector<double> p_;
};

enum class FamilyKind { Constant, Tabular, LinearLogistic, Mlp, ConvStack };

/// Uniform per-pixel binning; the cell index is the mixed-radix number formed
/// by the pixel bins in row-major order.
struct GridQuantizer {
    std::size_t levels = 2;
    double lo = 0.0;
    double hi = 1.0;

    std::size_t bin(double v) const {
        const double t = (v - lo) / (hi - lo) * static_cast<double>(levels);
        if (!(t > 0.0)) return 0;
        const auto b = static_cast<std::size_t>(t);
        return std::min(b, levels - 1);
    }

    std::size_t num_cells(std::size_t pixels) const {
        std::size_t cells = 1;
        for (std::size_t i = 0; i < pixels; ++i) {
            detail::require(cells <= (std::size_t{1} << 24) / levels,
                            "tabular: quantiser has too many cells");
            cells *= levels;
        }
        return cells;
    }

    std::size_t cell(const ImageTensor& x) const {
        std::size_t idx = 0;
        for (double v : x.data()) idx = idx * levels + bin(v);
        return idx;
    }

    friend bool operator==(const GridQuantizer&, const GridQuantizer&) = default;
};

struct ObserverFamily {
    FamilyKind kind = FamilyKind::Constant;
    std::vector<std::size_t> hidden;  // mlp
    std::size_t num_modules = 1;      // conv_stack
    std::size_t base_channels = 2;    // conv_stack
    GridQuantizer quantizer;          // tabular
    std::size_t input_height = 1;
    std::size_t input_width = 1;
    std::size_t num_classes = 2;

    std::size_t pixels() const noexcept { return input_height * input_width; }

    /// Channels produced by conv_stack module m.
    std::size_t module_channels(std::size_t m) const { return base_channels << m; }

    void validate() const {
        detail::require(num_classes >= 2, "family: need at least two classes");
        detail::require(input_height > 0 && input_width > 0, "family: input dims must be positive");
        switch (kind) {
            case FamilyKind::Mlp:
                detail::require(!hidden.empty(), "family: mlp needs hidden layers");
                for (auto h : hidden) detail::require(h >= 1, "family: mlp hidden sizes must be >= 1");
                break;
            case FamilyKind::ConvStack:
                detail::require(num_modules >= 1 && num_modules <= 8,
                                "family: conv_stack num_modules must be in [1, 8]");
                detail::require(base_channels >= 1, "family: conv_stack base_channels must be >= 1");
                break;
            case FamilyKind::Tabular:
                detail::require(quantizer.levels >= 1 && quantizer.hi > quantizer.lo,
                                "family: invalid tabular quantiser");
                quantizer.num_cells(pixels());
                break;
            default: break;
        }
    }

    /// Architecture descriptor such as "mlp(8,4)" or "conv_stack(3,2)".
    std::string descriptor() const {
        std::ostringstream os;
        switch (kind) {
            case FamilyKind::Constant: os << "constant"; break;
            case FamilyKind::LinearLogistic: os << "linear_logistic"; break;
            case FamilyKind::Mlp:
                os << "mlp(";
                for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
                os << ")";
                break;
            case FamilyKind::ConvStack:
                os << "conv_stack(" << num_modules << "," << base_channels << ")";
                break;
            case FamilyKind::Tabular: {
                char buf[96];
                std::snprintf(buf, sizeof buf, "tabular(%zu,%.17g,%.17g)", quantizer.levels,
                              quantizer.lo, quantizer.hi);
                os << buf;
                break;
            }
        }
        return os.str();
    }

    static ObserverFamily make(FamilyKind kind, std::size_t h, std::size_t w, std::size_t L) {
        ObserverFamily f;
        f.kind = kind;
        f.input_height = h;
        f.input_width = w;
        f.num_classes = L;
        return f;
    }
};

/// Parses a descriptor produced by ObserverFamily::descriptor().
inline ObserverFamily parse_family(const std::string& desc, std::size_t h, std::size_t w,
                                   std::size_t L) {
    std::string s;
    for (char c : desc)
        if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    const auto open = s.find('(');
    const std::string name = s.substr(0, open);
    std::vector<std::string> args;
    if (open != std::string::npos) {
        if (s.back() != ')') throw ParseError(ParseError::Kind::Syntax, "family: missing ')' in " + desc);
        std::string inner = s.substr(open + 1, s.size() - open - 2);
        std::stringstream ss(inner);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) args.push_back(tok);
    }
    auto as_size = [&](const std::string& t) {
        try {
            std::size_t pos = 0;
            const unsigned long v = std::stoul(t, &pos);
            if (pos != t.size()) throw std::invalid_argument(t);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ParseError(ParseError::Kind::Syntax, "family: bad integer '" + t + "' in " + desc);
        }
    };
    auto as_double = [&](const std::string& t) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(t, &pos);
            if (pos != t.size()) throw std::invalid_argument(t);
            return v;
        } catch (const std::exception&) {
            throw ParseError(ParseError::Kind::Syntax, "family: bad number '" + t + "' in " + desc);
        }
    };
    ObserverFamily f;
    f.input_height = h;
    f.input_width = w;
    f.num_classes = L;
    if (name == "constant" && args.empty()) {
        f.kind = FamilyKind::Constant;
    } else if (name == "linear_logistic" && args.empty()) {
        f.kind = FamilyKind::LinearLogistic;
    } else if (name == "mlp" && !args.empty()) {
        f.kind = FamilyKind::Mlp;
        for (const auto& a : args) f.hidden.push_back(as_size(a));
    } else if (name == "conv_stack" && (args.size() == 1 || args.size() == 2)) {
        f.kind = FamilyKind::ConvStack;
        f.num_modules = as_size(args[0]);
        if (args.size() == 2) f.base_channels = as_size(args[1]);
    } else if (name == "tabular" && args.size() == 3) {
        f.kind = FamilyKind::Tabular;
        f.quantizer = {as_size(args[0]), as_double(args[1]), as_double(args[2])};
    } else {
        throw ParseError(ParseError::Kind::Syntax, "family: unrecognised descriptor '" + desc + "'");
    }
    f.validate();
    return f;
}

// ---------------------------------------------------------------------------
// Network implementations. Instances hold per-sample forward caches and are
// therefore single-threaded scratch objects; parameters live outside.

class Network {
public:
    virtual ~Network() = default;
    virtual std::size_t param_count() const = 0;
    /// Fresh initialisation for training from scratch.
    virtual void init(std::span<double> theta, RandomStream& rng) const = 0;
    virtual void forward(std::span<const double> theta, const ImageTensor& x,
                         std::span<double> logits) = 0;
    /// Accumulates d(loss)/d(theta) given d(loss)/d(logits) for the most
    /// recent forward call.
    virtual void backward(std::span<const double> theta, std::span<const double> dlogits,
                          std::span<double> grad) = 0;
};

namespace detail {

class ConstantNet final : public Network {
public:
    explicit ConstantNet(std::size_t L) : L_(L) {}
    std::size_t param_count() const override { return L_; }
    void init(std::span<double> theta, RandomStream&) const override {
        std::fill(theta.begin(), theta.end(), 0.0);
    }
    void forward(std::span<const double> theta, const ImageTensor&, std::span<double> z) override {
        std::copy(theta.begin(), theta.end(), z.begin());
    }
    void backward(std::span<const double>, std::span<const double> dz,
                  std::span<double> grad) override {
        for (std::size_t i = 0; i < L_; ++i) grad[i] += dz[i];
    }

private:
    std::size_t L_;
};

class TabularNet final : public Network {
public:
    explicit TabularNet(const ObserverFamily& f)
        : L_(f.num_classes), q_(f.quantizer), cells_(f.quantizer.num_cells(f.pixels())) {}
    std::size_t param_count() const override { return cells_ * L_; }
    void init(std::span<double> theta, RandomStream&) const override {
        std::fill(theta.begin(), theta.end(), 0.0);
    }
    void forward(std::span<const double> theta, const ImageTensor& x, std::span<double> z) override {
        cell_ = q_.cell(x);
        std::copy_n(theta.begin() + static_cast<long>(cell_ * L_), L_, z.begin());
    }
    void backward(std::span<const double>, std::span<const double> dz,
                  std::span<double> grad) override {
        for (std::size_t i = 0; i < L_; ++i) grad[cell_ * L_ + i] += dz[i];
    }

private:
    std::size_t L_;
    GridQuantizer q_;
    std::size_t cells_;
    std::size_t cell_ = 0;
};

/// Dense stack: sizes[0] inputs, softplus between layers, sizes.back() logits.
class DenseStack {
public:
    explicit DenseStack(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
        offsets_.push_back(0);
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
            offsets_.push_back(offsets_.back() + sizes_[l + 1] * sizes_[l] + sizes_[l + 1]);
        pre_.resize(sizes_.size());
        post_.resize(sizes_.size());
        exp_cache_.resize(sizes_.size());
        for (std::size_t l = 0; l < sizes_.size(); ++l) {
            pre_[l].resize(sizes_[l]);
            post_[l].resize(sizes_[l]);
        }
    }

    std::size_t layers() const { return sizes_.size() - 1; }
    std::size_t param_count() const { return offsets_.back(); }
    std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
    std::size_t bias_offset(std::size_t l) const {
        return offsets_[l] + sizes_[l + 1] * sizes_[l];
    }
    const std::vector<std::size_t>& sizes() const { return sizes_; }

    void init(std::span<double> theta, RandomStream& rng) const {
        for (std::size_t l = 0; l < layers(); ++l) {
            nn::glorot_uniform(theta.subspan(weight_offset(l), sizes_[l + 1] * sizes_[l]), sizes_[l],
                           sizes_[l + 1], rng);
            auto b = theta.subspan(bias_offset(l), sizes_[l + 1]);
            std::fill(b.begin(), b.end(), 0.0);
        }
    }

    void forward(std::span<const double> theta, std::span<const double> x, std::span<double> z) {
        std::copy(x.begin(), x.end(), post_[0].begin());
        for (std::size_t l = 0; l < layers(); ++l) {
            auto w = theta.subspan(weight_offset(l), sizes_[l + 1] * sizes_[l]);
            auto b = theta.subspan(bias_offset(l), sizes_[l + 1]);
            nn::dense_forward(post_[l], w, b, pre_[l + 1]);
            if (l + 1 < layers())
                nn::softplus_forward(pre_[l + 1], post_[l + 1], exp_cache_[l + 1]);
        }
        std::copy(pre_.back().begin(), pre_.back().end(), z.begin());
    }

    void backward(std::span<const double> theta, std::span<const double> dz,
                  std::span<double> grad) {
        std::vector<double> g(dz.begin(), dz.end());
        for (std::size_t l = layers(); l-- > 0;) {
            auto w = theta.subspan(weight_offset(l), sizes_[l + 1] * sizes_[l]);
            std::vector<double> gin(l > 0 ? sizes_[l] : 0, 0.0);
            nn::dense_backward(post_[l], w, g, gin, grad.subspan(weight_offset(l), w.size()),
                               grad.subspan(bias_offset(l), sizes_[l + 1]));
            if (l > 0) {
                g.assign(sizes_[l], 0.0);
                nn::softplus_backward(pre_[l], exp_cache_[l], gin, g);
            }
        }
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    std::vector<std::vector<double>> pre_, post_, exp_cache_;
};

class DenseNet final : public Network {
public:
    explicit DenseNet(std::vector<std::size_t> sizes) : stack_(std::move(sizes)) {}
    std::size_t param_count() const override { return stack_.param_count(); }
    void init(std::span<double> theta, RandomStream& rng) const override { stack_.init(theta, rng); }
    void forward(std::span<const double> theta, const ImageTensor& x, std::span<double> z) override {
        stack_.forward(theta, x.data(), z);
    }
    void backward(std::span<const double> theta, std::span<const double> dz,
                  std::span<double> grad) override {
        stack_.backward(theta, dz, grad);
    }

private:
    DenseStack stack_;
};

/// Parameter layout of a conv_stack family.
struct ConvStackLayout {
    struct Module {
        nn::MapShape in;
        std::size_t cout = 0;
        std::size_t conv = 0, gamma = 0, beta = 0;  // offsets
        std::size_t feature = 0;                    // first readout feature index
    };
    std::vector<Module> modules;
    std::size_t head_w = 0, head_b = 0, total = 0;
    std::size_t features = 0;
    std::size_t classes = 0;

    explicit ConvStackLayout(const ObserverFamily& f) : classes(f.num_classes) {
        nn::MapShape s{1, f.input_height, f.input_width};
        std::size_t off = 0;
        for (std::size_t m = 0; m < f.num_modules; ++m) {
            Module mod;
            mod.in = s;
            mod.cout = f.module_channels(m);
            mod.conv = off;
            off += nn::conv3x3_weights(s.channels, mod.cout);
            mod.gamma = off;
            off += mod.cout;
            mod.beta = off;
            off += mod.cout;
            mod.feature = features;
            features += mod.cout;
            modules.push_back(mod);
            s = nn::pooled_shape({mod.cout, s.height, s.width});
        }
        head_w = off;
        off += classes * features;
        head_b = off;
        off += classes;
        total = off;
    }
};

class ConvStackNet final : public Network {
public:
    explicit ConvStackNet(const ObserverFamily& f) : layout_(f) {
        caches_.resize(layout_.modules.size());
    }

    std::size_t param_count() const override { return layout_.total; }

    void init(std::span<double> theta, RandomStream& rng) const override {
        for (const auto& m : layout_.modules) init_module(theta, m, rng);
        nn::glorot_uniform(theta.subspan(layout_.head_w, layout_.classes * layout_.features),
                           layout_.features, layout_.classes, rng);
        std::fill_n(theta.begin() + static_cast<long>(layout_.head_b), layout_.classes, 0.0);
    }

    static void init_module(std::span<double> theta, const ConvStackLayout::Module& m,
                            RandomStream& rng) {
        auto w = theta.subspan(m.conv, nn::conv3x3_weights(m.in.channels, m.cout));
        nn::glorot_uniform(w, m.in.channels * 9, m.cout * 9, rng);
        // Zero-mean 3x3 kernels start as edge/blob detectors rather than
        // passing the smooth background through.
        for (std::size_t k = 0; k < w.size(); k += 9) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 9; ++i) mean += w[k + i] / 9.0;
            for (std::size_t i = 0; i < 9; ++i) w[k + i] -= mean;
        }
        std::fill_n(theta.begin() + static_cast<long>(m.gamma), m.cout, 1.0);
        std::fill_n(theta.begin() + static_cast<long>(m.beta), m.cout, 0.0);
    }

    const ConvStackLayout& layout() const { return layout_; }

    void forward(std::span<const double> theta, const ImageTensor& x, std::span<double> z) override {
        features_.assign(layout_.features, 0.0);
        std::vector<double> cur(x.data().begin(), x.data().end());
        for (std::size_t mi = 0; mi < layout_.modules.size(); ++mi) {
            const auto& m = layout_.modules[mi];
            auto& c = caches_[mi];
            const nn::MapShape full{m.cout, m.in.height, m.in.width};
            c.input = std::move(cur);
            c.conv.resize(full.size());
            c.norm.resize(full.size());
            c.act.resize(full.size());
            nn::conv3x3_forward(c.input, m.in, m.cout, theta.subspan(m.conv), {}, c.conv);
            nn::instance_norm_forward(c.conv, full, theta.subspan(m.gamma, m.cout),
                                      theta.subspan(m.beta, m.cout), c.norm, c.in_cache);
            nn::softplus_forward(c.norm, c.act, c.exp_cache);
            nn::lse_pool_forward(c.act, full, std::span<double>(features_).subspan(m.feature, m.cout),
                                 c.readout_weights);
            if (mi + 1 < layout_.modules.size()) {
                cur.resize(nn::pooled_shape(full).size());
                nn::avgpool2_forward(c.act, full, cur);
            }
        }
        nn::dense_forward(features_, theta.subspan(layout_.head_w, layout_.classes * layout_.features),
                          theta.subspan(layout_.head_b, layout_.classes), z);
    }

    void backward(std::span<const double> theta, std::span<const double> dz,
                  std::span<double> grad) override {
        const std::size_t F = layout_.features;
        std::vector<double> dfeat(F, 0.0);
        nn::dense_backward(features_, theta.subspan(layout_.head_w, layout_.classes * F), dz, dfeat,
                           grad.subspan(layout_.head_w, layout_.classes * F),
                           grad.subspan(layout_.head_b, layout_.classes));
        std::vector<double> dnext;  // gradient w.r.t. the input of module mi + 1
        for (std::size_t mi = layout_.modules.size(); mi-- > 0;) {
            const auto& m = layout_.modules[mi];
            const auto& c = caches_[mi];
            const nn::MapShape full{m.cout, m.in.height, m.in.width};
            std::vector<double> dact(full.size(), 0.0);
            if (!dnext.empty()) nn::avgpool2_backward(full, dnext, dact);
            nn::lse_pool_backward(full, std::span<const double>(dfeat).subspan(m.feature, m.cout),
                                  c.readout_weights, dact);
            std::vector<double> dnorm(full.size(), 0.0);
            nn::softplus_backward(c.norm, c.exp_cache, dact, dnorm);
            std::vector<double> dconv(full.size(), 0.0);
            nn::instance_norm_backward(full, theta.subspan(m.gamma, m.cout), c.in_cache, dnorm,
                                       dconv, grad.subspan(m.gamma, m.cout),
                                       grad.subspan(m.beta, m.cout));
            std::vector<double> din(mi > 0 ? m.in.size() : 0, 0.0);
            nn::conv3x3_backward(c.input, m.in, m.cout, theta.subspan(m.conv), dconv, din,
                                 grad.subspan(m.conv, nn::conv3x3_weights(m.in.channels, m.cout)),
                                 {});
            dnext = std::move(din);
        }
    }

private:
    struct ModuleCache {
        std::vector<double> input, conv, norm, act, exp_cache, readout_weights;
        nn::InstanceNormCache in_cache;
    };
    ConvStackLayout layout_;
    std::vector<ModuleCache> caches_;
    std::vector<double> features_;
};

}  // namespace detail

inline std::unique_ptr<Network> make_network(const ObserverFamily& f) {
    f.validate();
    switch (f.kind) {
        case FamilyKind::Constant: return std::make_unique<detail::ConstantNet>(f.num_classes);
        case FamilyKind::Tabular: return std::make_unique<detail::TabularNet>(f);
        case FamilyKind::LinearLogistic:
            return std::make_unique<detail::DenseNet>(
                std::vector<std::size_t>{f.pixels(), f.num_classes});
        case FamilyKind::Mlp: {
            std::vector<std::size_t> sizes{f.pixels()};
            sizes.insert(sizes.end(), f.hidden.begin(), f.hidden.end());
            sizes.push_back(f.num_classes);
            return std::make_unique<detail::DenseNet>(std::move(sizes));
        }
        case FamilyKind::ConvStack: return std::make_unique<detail::ConvStackNet>(f);
    }
    throw InvalidInput("make_network: unknown family");
}

inline std::size_t param_count(const ObserverFamily& f) { return make_network(f)->param_count(); }

struct TrainedObserver {
    ObserverFamily family;
    std::vector<double> theta;
    std::vector<LossPoint> train_loss_curve;
    std::size_t selected_epoch = 0;
};

inline std::vector<double> initial_parameters(const ObserverFamily& f, std::uint64_t seed) {
    auto net = make_network(f);
    std::vector<double> theta(net->param_count());
    RandomStream rng(seed);
    net->init(theta, rng);
    return theta;
}

inline void check_input(const ObserverFamily& f, const ImageTensor& x) {
    detail::require(x.height() == f.input_height && x.width() == f.input_width,
                    "observer: input is " + std::to_string(x.height()) + "x" +
                        std::to_string(x.width()) + ", family expects " +
                        std::to_string(f.input_height) + "x" + std::to_string(f.input_width));
}

/// Reusable evaluation context for one observer (not thread-safe; create one
/// per thread).
class ObserverEvaluator {
public:
    explicit ObserverEvaluator(const TrainedObserver& obs)
        : obs_(obs), net_(make_network(obs.family)), logits_(obs.family.num_classes) {
        detail::require(obs.theta.size() == net_->param_count(),
                        "observer: parameter count does not match family");
    }

    std::span<const double> logits(const ImageTensor& x) {
        check_input(obs_.family, x);
        net_->forward(obs_.theta, x, logits_);
        return logits_;
    }

    ProbVector predict(const ImageTensor& x) {
        logits(x);
        std::vector<double> p(logits_.size());
        nn::softmax(logits_, p);
        return ProbVector(std::move(p));
    }

    /// log v[x](y), computed as z_y - logsumexp(z).
    double log_prob(const ImageTensor& x, std::size_t y) {
        logits(x);
        return logits_[y] - nn::log_sum_exp(logits_);
    }

private:
    const TrainedObserver& obs_;
    std::unique_ptr<Network> net_;
    std::vector<double> logits_;
};

inline ProbVector predict_proba(const TrainedObserver& obs, const ImageTensor& x) {
    return ObserverEvaluator(obs).predict(x);
}

namespace detail {

/// Mean softmax cross-entropy of a family over a dataset.
class NllObjective {
public:
    NllObjective(const ObserverFamily& f, const LabeledDataset& data)
        : data_(data), net_(make_network(f)), z_(f.num_classes), dz_(f.num_classes) {
        for (const auto& s : data.samples) {
            check_input(f, s.image);
            require(s.label < f.num_classes, "observer: label out of range");
        }
    }

    std::size_t size() const { return data_.size(); }
    std::size_t param_count() const { return net_->param_count(); }

    double loss_grad(std::span<const std::size_t> idx, std::span<const double> theta,
                     std::span<double> grad) {
        double total = 0.0;
        for (std::size_t i : idx) {
            const auto& s = data_.samples[i];
            net_->forward(theta, s.image, z_);
            std::fill(dz_.begin(), dz_.end(), 0.0);
            total += nn::softmax_nll(z_, s.label, dz_);
            net_->backward(theta, dz_, grad);
        }
        return total;
    }

    double loss(std::span<const double> theta) {
        double total = 0.0;
        for (const auto& s : data_.samples) {
            net_->forward(theta, s.image, z_);
            total += nn::softmax_nll(z_, s.label, {});
        }
        return total / static_cast<double>(data_.size());
    }

private:
    const LabeledDataset& data_;
    std::unique_ptr<Network> net_;
    std::vector<double> z_, dz_;
};

}  // namespace detail

/// Mean negative log-likelihood (nats) without clamping.
inline double mean_nll(const TrainedObserver& obs, const LabeledDataset& data) {
    detail::require(!data.empty(), "mean_nll: empty dataset");
    detail::NllObjective obj(obs.family, data);
    return obj.loss(obs.theta);
}

/// Analytic gradient of the mean NLL over `batch`.
inline std::vector<double> gradient(const TrainedObserver& obs, const LabeledDataset& batch) {
    detail::require(!batch.empty(), "gradient: empty batch");
    detail::NllObjective obj(obs.family, batch);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<double> g(obj.param_count(), 0.0);
    obj.loss_grad(idx, obs.theta, g);
    for (double& v : g) v /= static_cast<double>(batch.size());
    if (!detail::all_finite(g)) throw TrainingDiagnostic("non-finite gradient", 0, 0);
    return g;
}

/// Central-difference gradient of the mean NLL, one coordinate at a time.
inline std::vector<double> finite_diff_gradient(const TrainedObserver& obs,
                                                const LabeledDataset& batch, double eps) {
    detail::require(eps > 0.0, "finite_diff_gradient: eps must be positive");
    detail::require(!batch.empty(), "finite_diff_gradient: empty batch");
    detail::NllObjective obj(obs.family, batch);
    std::vector<double> theta = obs.theta;
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + eps;
        const double up = obj.loss(theta);
        theta[i] = keep - eps;
        const double down = obj.loss(theta);
        theta[i] = keep;
        g[i] = (up - down) / (2.0 * eps);
    }
    if (!detail::all_finite(g)) throw TrainingDiagnostic("non-finite gradient", 0, 0);
    return g;
}

/// Trajectory of one training run with both checkpoints materialised.
struct ObserverFit {
    TrainedObserver by_train_loss;  // used for V-information
    TrainedObserver by_val_loss;    // used for AUC / accuracy (equals by_train_loss without val)
    TrainOutcome outcome;
};

inline ObserverFit fit_observer(const ObserverFamily& family, const LabeledDataset& train,
                                const TrainConfig& cfg,
                                std::optional<std::vector<double>> init = std::nullopt,
                                const LabeledDataset* val = nullptr) {
    family.validate();
    detail::require(!train.empty(), "train_observer: empty dataset");
    detail::require(train.split == Split::Train, "train_observer: dataset split must be train");
    detail::NllObjective obj(family, train);
    std::vector<double> theta =
        init ? std::move(*init) : initial_parameters(family, mix64(cfg.seed ^ 0x1u));
    detail::require(theta.size() == obj.param_count(),
                    "train_observer: init has wrong parameter count");
    std::optional<detail::NllObjective> vobj;
    if (val && !val->empty()) vobj.emplace(family, *val);
    TrainOutcome out = minimize(obj, std::move(theta), cfg, vobj ? &*vobj : nullptr);

    ObserverFit fit;
    fit.by_train_loss = {family, out.best_train_params, out.train_curve, out.best_train_epoch};
    if (vobj)
        fit.by_val_loss = {family, out.best_val_params, out.train_curve, out.best_val_epoch};
    else
        fit.by_val_loss = fit.by_train_loss;
    fit.outcome = std::move(out);
    return fit;
}

/// Minimises the mean cross-entropy and returns the lowest-training-loss
/// checkpoint.
inline TrainedObserver train_observer(const ObserverFamily& family, const LabeledDataset& train,
                                      const TrainConfig& cfg,
                                      std::optional<std::vector<double>> init = std::nullopt) {
    return fit_observer(family, train, cfg, std::move(init)).by_train_loss;
}

/// Logit used for probabilities that are exactly zero; exp(-700) is a normal
/// double and the value is exactly representable in f32 checkpoints.
inline constexpr double kZeroProbLogit = -700.0;

/// Closed-form tabular fit: per-cell label frequencies with Laplace
/// smoothing alpha. Cells without training samples predict uniformly.
inline TrainedObserver fit_tabular(const LabeledDataset& data, const GridQuantizer& q,
                                   double alpha = 0.0) {
    detail::require(!data.empty(), "fit_tabular: empty dataset");
    detail::require(alpha >= 0.0, "fit_tabular: alpha must be >= 0");
    const auto& first = data.samples.front().image;
    ObserverFamily fam =
        ObserverFamily::make(FamilyKind::Tabular, first.height(), first.width(), data.num_classes);
    fam.quantizer = q;
    fam.validate();
    const std::size_t L = data.num_classes;
    const std::size_t cells = q.num_cells(fam.pixels());
    std::vector<double> counts(cells * L, 0.0);
    for (const auto& s : data.samples) {
        check_input(fam, s.image);
        counts[q.cell(s.image) * L + s.label] += 1.0;
    }
    std::vector<double> theta(cells * L, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
        double n = 0.0;
        for (std::size_t y = 0; y < L; ++y) n += counts[c * L + y];
        const double denom = n + alpha * static_cast<double>(L);
        if (!(denom > 0.0)) continue;  // unseen cell: uniform logits
        for (std::size_t y = 0; y < L; ++y) {
            const double p = (counts[c * L + y] + alpha) / denom;
            theta[c * L + y] = p > 0.0 ? std::log(p) : kZeroProbLogit;
        }
    }
    return {fam, std::move(theta), {}, 0};
}

// ---------------------------------------------------------------------------
// Nested-family embedding.

/// Parameters for `dst` that reproduce `src`'s input-output map. Units or
/// modules that `dst` adds get random incoming weights (from `seed`) and zero
/// influence on the output.
inline std::vector<double> embed_family(const TrainedObserver& src, const ObserverFamily& dst,
                                        std::uint64_t seed = 0) {
    const auto& sf = src.family;
    dst.validate();
    if (sf.num_classes != dst.num_classes || sf.input_height != dst.input_height ||
        sf.input_width != dst.input_width)
        throw UnsupportedEmbedding("embed_family: input dims or class count differ");
    const std::size_t L = dst.num_classes;
    std::vector<double> theta = initial_parameters(dst, mix64(seed ^ 0x2u));

    auto fail = [&]() -> std::vector<double> {
        throw UnsupportedEmbedding("embed_family: no embedding from " + sf.descriptor() + " into " +
                                   dst.descriptor());
    };

    if (sf.kind == FamilyKind::Constant) {
        switch (dst.kind) {
            case FamilyKind::Constant: return src.theta;
            case FamilyKind::Tabular: {
                const std::size_t cells = dst.quantizer.num_cells(dst.pixels());
                for (std::size_t c = 0; c < cells; ++c)
                    std::copy(src.theta.begin(), src.theta.end(), theta.begin() + c * L);
                return theta;
            }
            case FamilyKind::LinearLogistic:
            case FamilyKind::Mlp: {
                std::vector<std::size_t> sizes{dst.pixels()};
                sizes.insert(sizes.end(), dst.hidden.begin(), dst.hidden.end());
                sizes.push_back(L);
                detail::DenseStack stack(sizes);
                const std::size_t last = stack.layers() - 1;
                std::fill_n(theta.begin() + stack.weight_offset(last), L * sizes[last], 0.0);
                std::copy(src.theta.begin(), src.theta.end(), theta.begin() + stack.bias_offset(last));
                return theta;
            }
            case FamilyKind::ConvStack: {
                detail::ConvStackLayout lay(dst);
                std::fill_n(theta.begin() + lay.head_w, L * lay.features, 0.0);
                std::copy(src.theta.begin(), src.theta.end(), theta.begin() + lay.head_b);
                return theta;
            }
        }
    }

    if (sf.kind == FamilyKind::Tabular) {
        if (dst.kind == FamilyKind::Tabular && dst.quantizer == sf.quantizer) return src.theta;
        return fail();
    }

    if (sf.kind == FamilyKind::LinearLogistic) {
        if (dst.kind == FamilyKind::LinearLogistic) return src.theta;
        if (dst.kind != FamilyKind::Mlp) return fail();
        // Passthrough pairs: softplus(a) - softplus(-a) == a.
        for (auto h : dst.hidden)
            if (h < 2 * L) return fail();
        std::vector<std::size_t> sizes{dst.pixels()};
        sizes.insert(sizes.end(), dst.hidden.begin(), dst.hidden.end());
        sizes.push_back(L);
        detail::DenseStack stack(sizes);
        const std::size_t P = dst.pixels();
        for (std::size_t l = 0; l < stack.layers(); ++l) {
            const std::size_t nin = sizes[l], nout = sizes[l + 1];
            double* W = theta.data() + stack.weight_offset(l);
            double* b = theta.data() + stack.bias_offset(l);
            const bool output = l + 1 == stack.layers();
            const std::size_t rows = output ? nout : 2 * L;
            for (std::size_t r = 0; r < rows; ++r) {
                std::fill_n(W + r * nin, nin, 0.0);
                b[r] = 0.0;
            }
            if (output) {
                // Only passthrough units feed the logits.
                std::fill_n(W, nout * nin, 0.0);
                for (std::size_t y = 0; y < L; ++y) {
                    W[y * nin + 2 * y] = 1.0;
                    W[y * nin + 2 * y + 1] = -1.0;
                }
            } else if (l == 0) {
                for (std::size_t y = 0; y < L; ++y) {
                    const double* sw = src.theta.data() + y * P;
                    const double sb = src.theta[L * P + y];
                    for (std::size_t i = 0; i < P; ++i) {
                        W[(2 * y) * nin + i] = sw[i];
                        W[(2 * y + 1) * nin + i] = -sw[i];
                    }
                    b[2 * y] = sb;
                    b[2 * y + 1] = -sb;
                }
            } else {
                for (std::size_t y = 0; y < L; ++y) {
                    W[(2 * y) * nin + 2 * y] = 1.0;
                    W[(2 * y) * nin + 2 * y + 1] = -1.0;
                    W[(2 * y + 1) * nin + 2 * y] = -1.0;
                    W[(2 * y + 1) * nin + 2 * y + 1] = 1.0;
                }
            }
        }
        return theta;
    }

    if (sf.kind == FamilyKind::Mlp) {
        if (dst.kind != FamilyKind::Mlp || dst.hidden.size() != sf.hidden.size()) return fail();
        for (std::size_t i = 0; i < sf.hidden.size(); ++i)
            if (dst.hidden[i] < sf.hidden[i]) return fail();
        std::vector<std::size_t> ssz{sf.pixels()}, dsz{dst.pixels()};
        ssz.insert(ssz.end(), sf.hidden.begin(), sf.hidden.end());
        dsz.insert(dsz.end(), dst.hidden.begin(), dst.hidden.end());
        ssz.push_back(L);
        dsz.push_back(L);
        detail::DenseStack ss(ssz), ds(dsz);
        for (std::size_t l = 0; l < ds.layers(); ++l) {
            double* W = theta.data() + ds.weight_offset(l);
            double* b = theta.data() + ds.bias_offset(l);
            const double* sW = src.theta.data() + ss.weight_offset(l);
            const double* sb = src.theta.data() + ss.bias_offset(l);
            const std::size_t din = dsz[l], dout = dsz[l + 1], sin = ssz[l], sout = ssz[l + 1];
            for (std::size_t r = 0; r < dout; ++r) {
                for (std::size_t c = sin; c < din; ++c)
                    if (r < sout) W[r * din + c] = 0.0;  // new units do not feed old ones
                if (r < sout) {
                    for (std::size_t c = 0; c < sin; ++c) W[r * din + c] = sW[r * sin + c];
                    b[r] = sb[r];
                }
            }
        }
        return theta;
    }

    if (sf.kind == FamilyKind::ConvStack) {
        if (dst.kind != FamilyKind::ConvStack || dst.base_channels != sf.base_channels ||
            dst.num_modules < sf.num_modules)
            return fail();
        detail::ConvStackLayout sl(sf), dl(dst);
        // Shared modules are copied; appended modules keep their fresh random
        // weights but get zero head columns, so they do not reach the logits.
        std::copy_n(src.theta.begin(), sl.head_w, theta.begin());
        std::fill_n(theta.begin() + dl.head_w, L * dl.features, 0.0);
        for (std::size_t y = 0; y < L; ++y)
            for (std::size_t c = 0; c < sl.features; ++c)
                theta[dl.head_w + y * dl.features + c] = src.theta[sl.head_w + y * sl.features + c];
        std::copy_n(src.theta.begin() + sl.head_b, L, theta.begin() + dl.head_b);
        return theta;
    }
    return fail();
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header terminated by "end\n", followed by the parameter
// vector as a 1 x P f32 VIQT tensor.

inline std::string encode_checkpoint(const TrainedObserver& obs) {
    std::ostringstream os;
    os << "viq-observer 1\n"
       << "family = " << obs.family.descriptor() << "\n"
       << "input = " << obs.family.input_height << "x" << obs.family.input_width << "\n"
       << "classes = " << obs.family.num_classes << "\n"
       << "selected_epoch = " << obs.selected_epoch << "\n"
       << "params = " << obs.theta.size() << "\n"
       << "end\n";
    std::string out = os.str();
    if (!obs.theta.empty()) {
        const auto bytes = encode_tensor(ImageTensor(1, obs.theta.size(), obs.theta));
        out.append(bytes.begin(), bytes.end());
    }
    return out;
}

inline TrainedObserver decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    const std::string text(bytes.begin(), bytes.end());
    const auto end = text.find("end\n");
    if (text.rfind("viq-observer 1\n", 0) != 0 || end == std::string::npos)
        throw ParseError(ParseError::Kind::BadMagic, "checkpoint: missing header");
    std::istringstream hs(text.substr(0, end));
    std::string line, family;
    std::size_t h = 0, w = 0, L = 0, epoch = 0, np = 0;
    std::getline(hs, line);
    while (std::getline(hs, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw ParseError(ParseError::Kind::Syntax, "checkpoint: " + line);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        if (key == "family") family = val;
        else if (key == "input") std::sscanf(val.c_str(), "%zux%zu", &h, &w);
        else if (key == "classes") L = std::stoul(val);
        else if (key == "selected_epoch") epoch = std::stoul(val);
        else if (key == "params") np = std::stoul(val);
    }
    TrainedObserver obs;
    obs.family = parse_family(family, h, w, L);
    obs.selected_epoch = epoch;
    const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<long>(end + 4), bytes.end());
    if (np > 0) {
        const ImageTensor t = decode_image(payload);
        obs.theta.assign(t.data().begin(), t.data().end());
    }
    if (obs.theta.size() != np || np != param_count(obs.family))
        throw ParseError(ParseError::Kind::Truncated, "checkpoint: parameter count mismatch");
    return obs;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainedObserver& obs) {
    atomic_write_file(path, encode_checkpoint(obs));
}

inline TrainedObserver load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

}  // namespace viq
