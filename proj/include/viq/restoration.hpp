#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "viq/error.hpp"
#include "viq/fourier.hpp"
#include "viq/imaging.hpp"
#include "viq/nn.hpp"
#include "viq/optim.hpp"
#include "viq/random.hpp"
#include "viq/tensor.hpp"
#include "viq/tensor_io.hpp"

// Encoder-decoder restorer. Level i runs at resolution H / 2^i with
// base_channels * 2^i channels:
//
//   e_0 = sp(conv(x))                        e_i = sp(conv(pool(e_{i-1})))
//   d_top = e_top                            d_i = sp(conv(up(d_{i+1})) [+ e_i])
//   out = [x +] conv(d_0)
//
// sp is softplus; bracketed terms are present when skip connections are on.
// The output convolution starts at zero, so a fresh model with skips is the
// identity map.

namespace viq {

struct RestorerArch {
    std::size_t levels = 2;
    std::size_t base_channels = 4;
    bool skip_connections = true;

    void validate(std::size_t h, std::size_t w) const {
        detail::require(levels >= 1 && levels <= 6, "restorer: levels must be in [1, 6]");
        detail::require(base_channels >= 1, "restorer: base_channels must be >= 1");
        const std::size_t f = std::size_t{1} << (levels - 1);
        detail::require(h % f == 0 && w % f == 0,
                        "restorer: image dims must be divisible by 2^(levels-1)");
    }
};

namespace detail {

struct RestorerLayout {
    struct Conv {
        std::size_t cin = 0, cout = 0;
        nn::MapShape in;
        std::size_t w = 0, b = 0;
    };
    std::vector<Conv> enc, dec;  // dec[i] maps level i+1 to level i
    Conv out;
    std::size_t total = 0;

    RestorerLayout(const RestorerArch& a, std::size_t h, std::size_t w) {
        a.validate(h, w);
        std::size_t off = 0;
        auto add = [&](std::size_t cin, std::size_t cout, nn::MapShape in) {
            Conv c{cin, cout, in, off, 0};
            off += nn::conv3x3_weights(cin, cout);
            c.b = off;
            off += cout;
            return c;
        };
        auto ch = [&](std::size_t i) { return a.base_channels << i; };
        for (std::size_t i = 0; i < a.levels; ++i) {
            const std::size_t cin = i == 0 ? 1 : ch(i - 1);
            enc.push_back(add(cin, ch(i), {cin, h >> i, w >> i}));
        }
        for (std::size_t i = 0; i + 1 < a.levels; ++i)
            dec.push_back(add(ch(i + 1), ch(i), {ch(i + 1), h >> i, w >> i}));
        out = add(ch(0), 1, {ch(0), h, w});
        total = off;
    }
};

class RestorerNet {
public:
    RestorerNet(const RestorerArch& a, std::size_t h, std::size_t w)
        : arch_(a), h_(h), w_(w), lay_(a, h, w) {
        const std::size_t L = a.levels;
        enc_pre_.resize(L);
        enc_act_.resize(L);
        enc_exp_.resize(L);
        enc_in_.resize(L);
        dec_in_.resize(L);
        dec_pre_.resize(L);
        dec_act_.resize(L);
        dec_exp_.resize(L);
    }

    std::size_t param_count() const { return lay_.total; }
    const RestorerLayout& layout() const { return lay_; }

    void init(std::span<double> theta, RandomStream& rng) const {
        auto init_conv = [&](const RestorerLayout::Conv& c) {
            nn::glorot_uniform(theta.subspan(c.w, nn::conv3x3_weights(c.cin, c.cout)), c.cin * 9,
                               c.cout * 9, rng);
            std::fill_n(theta.begin() + static_cast<long>(c.b), c.cout, 0.0);
        };
        for (const auto& c : lay_.enc) init_conv(c);
        for (const auto& c : lay_.dec) init_conv(c);
        std::fill_n(theta.begin() + static_cast<long>(lay_.out.w),
                    nn::conv3x3_weights(lay_.out.cin, 1) + 1, 0.0);
    }

    void forward(std::span<const double> theta, const ImageTensor& x, std::span<double> y) {
        const std::size_t L = arch_.levels;
        for (std::size_t i = 0; i < L; ++i) {
            const auto& c = lay_.enc[i];
            if (i == 0) {
                enc_in_[0].assign(x.data().begin(), x.data().end());
            } else {
                enc_in_[i].resize(c.in.size());
                nn::avgpool2_forward(enc_act_[i - 1], {c.cin, c.in.height * 2, c.in.width * 2},
                                     enc_in_[i]);
            }
            conv(theta, c, enc_in_[i], enc_pre_[i]);
            act(enc_pre_[i], enc_act_[i], enc_exp_[i]);
        }
        const std::vector<double>* d = &enc_act_[L - 1];
        for (std::size_t i = L - 1; i-- > 0;) {
            const auto& c = lay_.dec[i];
            const nn::MapShape small{c.cin, c.in.height / 2, c.in.width / 2};
            dec_in_[i].resize(c.in.size());
            nn::upsample2_forward(*d, small, dec_in_[i]);
            conv(theta, c, dec_in_[i], dec_pre_[i]);
            if (arch_.skip_connections)
                for (std::size_t k = 0; k < dec_pre_[i].size(); ++k) dec_pre_[i][k] += enc_act_[i][k];
            act(dec_pre_[i], dec_act_[i], dec_exp_[i]);
            d = &dec_act_[i];
        }
        top_ = d;
        nn::conv3x3_forward(*d, lay_.out.in, 1, theta.subspan(lay_.out.w), theta.subspan(lay_.out.b, 1),
                            y);
        if (arch_.skip_connections)
            for (std::size_t k = 0; k < y.size(); ++k) y[k] += x.data()[k];
    }

    /// Accumulates the parameter gradient for upstream gradient `gy`.
    void backward(std::span<const double> theta, std::span<const double> gy, std::span<double> grad) {
        const std::size_t L = arch_.levels;
        const auto& oc = lay_.out;
        std::vector<double> gd(top_->size(), 0.0);
        nn::conv3x3_backward(*top_, oc.in, 1, theta.subspan(oc.w), gy, gd,
                             grad.subspan(oc.w, nn::conv3x3_weights(oc.cin, 1)), grad.subspan(oc.b, 1));
        // Gradients flowing into each encoder activation via skips.
        std::vector<std::vector<double>> genc(L);
        for (std::size_t i = 0; i < L; ++i) genc[i].assign(lay_.enc[i].cout * lay_.enc[i].in.plane(), 0.0);
        for (std::size_t i = 0; i + 1 < L; ++i) {
            const auto& c = lay_.dec[i];
            std::vector<double> gpre(dec_pre_[i].size(), 0.0);
            nn::softplus_backward(dec_pre_[i], dec_exp_[i], gd, gpre);
            if (arch_.skip_connections)
                for (std::size_t k = 0; k < gpre.size(); ++k) genc[i][k] += gpre[k];
            std::vector<double> gin(dec_in_[i].size(), 0.0);
            conv_back(theta, c, dec_in_[i], gpre, gin, grad);
            const nn::MapShape small{c.cin, c.in.height / 2, c.in.width / 2};
            std::vector<double> gsmall(small.size(), 0.0);
            nn::upsample2_backward(small, gin, gsmall);
            gd = std::move(gsmall);
        }
        for (std::size_t k = 0; k < gd.size(); ++k) genc[L - 1][k] += gd[k];
        for (std::size_t i = L; i-- > 0;) {
            const auto& c = lay_.enc[i];
            std::vector<double> gpre(enc_pre_[i].size(), 0.0);
            nn::softplus_backward(enc_pre_[i], enc_exp_[i], genc[i], gpre);
            std::vector<double> gin(i > 0 ? enc_in_[i].size() : 0, 0.0);
            conv_back(theta, c, enc_in_[i], gpre, gin, grad);
            if (i > 0)
                nn::avgpool2_backward({c.cin, c.in.height * 2, c.in.width * 2}, gin, genc[i - 1]);
        }
    }

private:
    void conv(std::span<const double> theta, const RestorerLayout::Conv& c,
              const std::vector<double>& in, std::vector<double>& out) const {
        out.resize(c.cout * c.in.plane());
        nn::conv3x3_forward(in, c.in, c.cout, theta.subspan(c.w), theta.subspan(c.b, c.cout), out);
    }
    void conv_back(std::span<const double> theta, const RestorerLayout::Conv& c,
                   const std::vector<double>& in, const std::vector<double>& gout,
                   std::vector<double>& gin, std::span<double> grad) const {
        nn::conv3x3_backward(in, c.in, c.cout, theta.subspan(c.w), gout, gin,
                             grad.subspan(c.w, nn::conv3x3_weights(c.cin, c.cout)),
                             grad.subspan(c.b, c.cout));
    }
    static void act(const std::vector<double>& pre, std::vector<double>& post, std::vector<double>& e) {
        post.resize(pre.size());
        nn::softplus_forward(pre, post, e);
    }

    RestorerArch arch_;
    std::size_t h_, w_;
    RestorerLayout lay_;
    std::vector<std::vector<double>> enc_in_, enc_pre_, enc_act_, enc_exp_;
    std::vector<std::vector<double>> dec_in_, dec_pre_, dec_act_, dec_exp_;
    const std::vector<double>* top_ = nullptr;
};

}  // namespace detail

struct RestorationModel {
    RestorerArch arch;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> theta;
    std::vector<LossPoint> train_loss_curve;
    std::vector<LossPoint> val_loss_curve;
    std::size_t selected_epoch = 0;
};

inline std::size_t restorer_param_count(const RestorerArch& a, std::size_t h, std::size_t w) {
    return detail::RestorerLayout(a, h, w).total;
}

/// A model whose parameters are all zero; with skips this is the identity.
inline RestorationModel zero_restorer(const RestorerArch& a, std::size_t h, std::size_t w) {
    return {a, h, w, std::vector<double>(restorer_param_count(a, h, w), 0.0), {}, {}, 0};
}

using ImagePair = std::pair<ImageTensor, ImageTensor>;  // (low, high)

namespace detail {

inline void check_pairs(const std::vector<ImagePair>& pairs, const char* what) {
    require(!pairs.empty(), std::string(what) + ": empty paired set");
    const auto& ref = pairs.front().first;
    for (const auto& [lo, hi] : pairs)
        require(lo.same_shape(ref) && hi.same_shape(ref), std::string(what) + ": mismatched dims");
}

/// Per-sample loss ||O(low) - high||^2 (summed over pixels).
class RestorerObjective {
public:
    RestorerObjective(const RestorerArch& a, const std::vector<ImagePair>& pairs)
        : pairs_(pairs),
          net_(a, pairs.front().first.height(), pairs.front().first.width()),
          y_(pairs.front().first.size()),
          gy_(y_.size()) {}

    std::size_t size() const { return pairs_.size(); }

    double loss_grad(std::span<const std::size_t> idx, std::span<const double> theta,
                     std::span<double> grad) {
        double total = 0.0;
        for (std::size_t i : idx) {
            total += residual(theta, i);
            for (double& g : gy_) g *= 2.0;
            net_.backward(theta, gy_, grad);
        }
        return total;
    }

    double loss(std::span<const double> theta) {
        double total = 0.0;
        for (std::size_t i = 0; i < pairs_.size(); ++i) total += residual(theta, i);
        return total / static_cast<double>(pairs_.size());
    }

private:
    double residual(std::span<const double> theta, std::size_t i) {
        const auto& [lo, hi] = pairs_[i];
        net_.forward(theta, lo, y_);
        double s = 0.0;
        for (std::size_t k = 0; k < y_.size(); ++k) {
            gy_[k] = y_[k] - hi.data()[k];
            s += gy_[k] * gy_[k];
        }
        return s;
    }

    const std::vector<ImagePair>& pairs_;
    RestorerNet net_;
    std::vector<double> y_, gy_;
};

}  // namespace detail

/// Trains on `pairs` and returns the lowest-validation-loss checkpoint
/// (lowest training loss when `val` is empty).
inline RestorationModel train_restorer(const std::vector<ImagePair>& pairs, const TrainConfig& cfg,
                                       const RestorerArch& arch = {},
                                       const std::vector<ImagePair>& val = {}) {
    detail::check_pairs(pairs, "train_restorer");
    if (!val.empty()) {
        detail::check_pairs(val, "train_restorer");
        detail::require(val.front().first.same_shape(pairs.front().first),
                        "train_restorer: validation dims differ");
    }
    const std::size_t h = pairs.front().first.height(), w = pairs.front().first.width();
    arch.validate(h, w);
    detail::RestorerObjective obj(arch, pairs);
    detail::RestorerNet net(arch, h, w);
    std::vector<double> theta(net.param_count());
    RandomStream rng(mix64(cfg.seed ^ 0x3u));
    net.init(theta, rng);
    TrainOutcome out;
    if (val.empty()) {
        out = minimize(obj, std::move(theta), cfg);
    } else {
        detail::RestorerObjective vobj(arch, val);
        out = minimize(obj, std::move(theta), cfg, &vobj);
    }
    RestorationModel m{arch, h, w, {}, out.train_curve, out.val_curve, 0};
    if (val.empty()) {
        m.theta = std::move(out.best_train_params);
        m.selected_epoch = out.best_train_epoch;
    } else {
        m.theta = std::move(out.best_val_params);
        m.selected_epoch = out.best_val_epoch;
    }
    return m;
}

/// Reusable forward-pass context (one per thread).
class Restorer {
public:
    explicit Restorer(const RestorationModel& m) : m_(m), net_(m.arch, m.height, m.width) {
        detail::require(m.theta.size() == net_.param_count(),
                        "restore: parameter count does not match architecture");
    }

    ImageTensor operator()(const ImageTensor& low) {
        detail::require(low.height() == m_.height && low.width() == m_.width,
                        "restore: input dims do not match model");
        ImageTensor out(m_.height, m_.width);
        net_.forward(m_.theta, low, out.data());
        return out;
    }

private:
    const RestorationModel& m_;
    detail::RestorerNet net_;
};

inline ImageTensor restore(const RestorationModel& model, const ImageTensor& low) {
    return Restorer(model)(low);
}

/// Per-frequency gain S / (S + sigma^2) inside the kept block, 0 outside.
/// `signal_power_spectrum` is E|F|^2 of the object under the unitary DFT in
/// centred layout. With real-part reconstruction the noise power per
/// coefficient of the degraded image is sigma^2, so this is the linear MMSE
/// gain for stationary objects.
inline ImageTensor wiener_restore(const ImageTensor& low, const DegradationConfig& cfg,
                                  const ImageTensor& signal_power_spectrum) {
    detail::require(low.same_shape(signal_power_spectrum), "wiener_restore: dimension mismatch");
    cfg.validate(low.height(), low.width());
    for (double s : signal_power_spectrum.data())
        detail::require(s >= 0.0 && std::isfinite(s), "wiener_restore: negative power spectrum");
    const double n2 = cfg.noise_sigma * cfg.noise_sigma;
    ComplexSpectrum f = fftshift(dft2(low));
    const std::size_t r0 = detail::centred_offset(low.height(), cfg.mask_height);
    const std::size_t c0 = detail::centred_offset(low.width(), cfg.mask_width);
    for (std::size_t r = 0; r < f.height(); ++r)
        for (std::size_t c = 0; c < f.width(); ++c) {
            const bool inside = r >= r0 && r < r0 + cfg.mask_height && c >= c0 && c < c0 + cfg.mask_width;
            const double s = signal_power_spectrum(r, c);
            const double g = !inside ? 0.0 : (s + n2 > 0.0 ? s / (s + n2) : 1.0);
            f(r, c) *= g;
        }
    return real_part(idft2(ifftshift(f)));
}

// Restorer checkpoint: text header terminated by "end\n", then the parameters
// as a 1 x P f64 VIQT tensor so that a reloaded model is bit-identical.

inline std::string encode_restorer(const RestorationModel& m) {
    std::ostringstream os;
    os << "viq-restorer 1\n"
       << "levels = " << m.arch.levels << "\n"
       << "base_channels = " << m.arch.base_channels << "\n"
       << "skip_connections = " << (m.arch.skip_connections ? 1 : 0) << "\n"
       << "input = " << m.height << "x" << m.width << "\n"
       << "selected_epoch = " << m.selected_epoch << "\n"
       << "params = " << m.theta.size() << "\n"
       << "end\n";
    std::string out = os.str();
    const auto bytes = encode_tensor(ImageTensor(1, m.theta.size(), m.theta), Dtype::F64Real);
    out.append(bytes.begin(), bytes.end());
    return out;
}

inline RestorationModel decode_restorer(const std::vector<std::uint8_t>& bytes) {
    const std::string text(bytes.begin(), bytes.end());
    const auto end = text.find("end\n");
    if (text.rfind("viq-restorer 1\n", 0) != 0 || end == std::string::npos)
        throw ParseError(ParseError::Kind::BadMagic, "restorer checkpoint: missing header");
    std::istringstream hs(text.substr(0, end));
    std::string line;
    RestorationModel m;
    std::size_t np = 0;
    std::getline(hs, line);
    try {
        while (std::getline(hs, line)) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos)
                throw ParseError(ParseError::Kind::Syntax, "restorer checkpoint: " + line);
            const std::string key = line.substr(0, eq), val = line.substr(eq + 3);
            if (key == "levels") m.arch.levels = std::stoul(val);
            else if (key == "base_channels") m.arch.base_channels = std::stoul(val);
            else if (key == "skip_connections") m.arch.skip_connections = val == "1";
            else if (key == "input") std::sscanf(val.c_str(), "%zux%zu", &m.height, &m.width);
            else if (key == "selected_epoch") m.selected_epoch = std::stoul(val);
            else if (key == "params") np = std::stoul(val);
            else throw ParseError(ParseError::Kind::Syntax, "restorer checkpoint: unknown key " + key);
        }
    } catch (const std::logic_error&) {
        throw ParseError(ParseError::Kind::Syntax, "restorer checkpoint: bad value in header");
    }
    m.arch.validate(m.height, m.width);
    const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<long>(end + 4), bytes.end());
    const ImageTensor t = decode_image(payload);
    m.theta.assign(t.data().begin(), t.data().end());
    if (m.theta.size() != np || np != restorer_param_count(m.arch, m.height, m.width))
        throw ParseError(ParseError::Kind::Truncated, "restorer checkpoint: parameter count mismatch");
    return m;
}

inline void save_restorer(const std::filesystem::path& path, const RestorationModel& m) {
    atomic_write_file(path, encode_restorer(m));
}

inline RestorationModel load_restorer(const std::filesystem::path& path) {
    return decode_restorer(read_file_bytes(path));
}

}  // namespace viq
