#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "viq/config.hpp"
#include "viq/error.hpp"
#include "viq/imaging.hpp"
#include "viq/info.hpp"
#include "viq/observers.hpp"
#include "viq/optim.hpp"
#include "viq/random.hpp"
#include "viq/restoration.hpp"
#include "viq/task_metrics.hpp"
#include "viq/tensor_io.hpp"

// Capacity sweeps. For each run: one paired dataset, an 8:1:1 split, a
// trained restorer, and the image conditions low_field / restored /
// high_field. Per (run, condition) the capacity grid is walked in order; each
// rung starts from the previous rung's train-loss checkpoint embedded into the
// larger family, or from a fresh init when no embedding exists.

namespace viq {

enum class Condition { LowField, Restored, HighField };

inline const char* to_string(Condition c) {
    switch (c) {
        case Condition::LowField: return "low_field";
        case Condition::Restored: return "restored";
        case Condition::HighField: return "high_field";
    }
    return "?";
}

inline Condition parse_condition(const std::string& s) {
    if (s == "low_field") return Condition::LowField;
    if (s == "restored") return Condition::Restored;
    if (s == "high_field") return Condition::HighField;
    throw InvalidInput("unknown image condition '" + s + "'");
}

/// A module error annotated with the sweep job that raised it.
class ExperimentError : public std::runtime_error {
public:
    ExperimentError(std::string condition, std::string family, std::size_t run, const std::string& what)
        : std::runtime_error("[condition " + condition + ", family " + family + ", run " +
                             std::to_string(run) + "] " + what),
          condition_(std::move(condition)),
          family_(std::move(family)),
          run_(run) {}

    const std::string& condition() const noexcept { return condition_; }
    const std::string& family() const noexcept { return family_; }
    std::size_t run() const noexcept { return run_; }

private:
    std::string condition_, family_;
    std::size_t run_;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetConfig data;  // data.seed is replaced per run
    std::vector<std::string> capacity_grid{"constant"};
    std::vector<Condition> conditions{Condition::LowField, Condition::Restored, Condition::HighField};
    std::size_t runs = 5;
    std::uint64_t base_seed = 0;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    TrainConfig observer_train;
    TrainConfig restorer_train;
    RestorerArch restorer_arch;
    bool wall_time_in_results = false;
    bool write_svg = true;
    std::string output_dir;

    std::size_t height() const { return data.background.height; }
    std::size_t width() const { return data.background.width; }

    std::vector<ObserverFamily> families() const {
        std::vector<ObserverFamily> out;
        for (const auto& d : capacity_grid)
            out.push_back(parse_family(d, height(), width(), data.num_classes()));
        return out;
    }

    bool has(Condition c) const {
        return std::find(conditions.begin(), conditions.end(), c) != conditions.end();
    }

    void validate() const {
        detail::require(runs >= 1, "experiment: runs must be >= 1");
        detail::require(!capacity_grid.empty(), "experiment: capacity grid is empty");
        detail::require(!conditions.empty(), "experiment: no image conditions");
        for (std::size_t i = 0; i < conditions.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                detail::require(conditions[i] != conditions[j], "experiment: duplicate condition");
        detail::require(data.class_counts.size() == data.num_classes(),
                        "experiment: class_counts must have one entry per class");
        for (auto n : data.class_counts)
            detail::require(n >= 1, "experiment: every class needs at least one sample");
        data.background.validate();
        data.degradation.validate(height(), width());
        detail::require(train_fraction > 0.0 && val_fraction > 0.0 &&
                            train_fraction + val_fraction < 1.0,
                        "experiment: split fractions must leave train, val and test nonempty");
        observer_train.validate();
        restorer_train.validate();
        if (has(Condition::Restored)) restorer_arch.validate(height(), width());
        auto fams = families();
        for (std::size_t i = 0; i < fams.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                detail::require(fams[i].descriptor() != fams[j].descriptor(),
                                "experiment: duplicate family " + fams[i].descriptor());
    }
};

namespace detail {

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::Sgd;
    throw InvalidInput("unknown optimizer '" + s + "'");
}

inline Range parse_range(const Config& c, const std::string& key, Range fallback) {
    const auto v = c.get_double_list(key, {fallback.low, fallback.high});
    require(v.size() == 2, key + " must be [low, high]");
    return {v[0], v[1]};
}

inline TrainConfig parse_train(const Config& c, const std::string& section, TrainConfig t) {
    t.learning_rate = c.get_double(section + ".learning_rate", t.learning_rate);
    t.epochs = c.get_size(section + ".epochs", t.epochs);
    t.batch_size = c.get_size(section + ".batch_size", t.batch_size);
    t.optimizer = parse_optimizer(c.get_string(section + ".optimizer",
                                               t.optimizer == OptimizerKind::Adam ? "adam" : "sgd"));
    t.early_stop_patience = c.get_size(section + ".early_stop_patience", t.early_stop_patience);
    return t;
}

}  // namespace detail

/// Reads every experiment key from `c`; unknown keys are rejected.
inline ExperimentConfig experiment_from_config(const Config& c) {
    ExperimentConfig e;
    e.name = c.get_string("experiment.name", e.name);
    const std::string task = c.get_string("experiment.task", "binary");
    if (task == "binary") e.data.task = Task::Binary;
    else if (task == "three_class") e.data.task = Task::ThreeClass;
    else throw InvalidInput("experiment.task must be binary or three_class");
    const std::size_t L = e.data.num_classes();

    const std::string balance = c.get_string("experiment.balance", "balanced");
    if (balance == "balanced") {
        detail::require(!c.has("experiment.class_counts"),
                        "experiment.class_counts requires experiment.balance = \"imbalanced\"");
        e.data.class_counts.assign(L, c.get_size("experiment.samples_per_class", 100));
    } else if (balance == "imbalanced") {
        detail::require(c.has("experiment.class_counts"),
                        "imbalanced experiments need experiment.class_counts");
        e.data.class_counts = c.get_size_list("experiment.class_counts", {});
    } else {
        throw InvalidInput("experiment.balance must be balanced or imbalanced");
    }
    e.runs = c.get_size("experiment.runs", e.runs);
    e.base_seed = c.get_u64("experiment.base_seed", e.base_seed);
    e.capacity_grid = c.get_string_list("experiment.capacity_grid", e.capacity_grid);
    std::vector<std::string> conds;
    for (auto k : e.conditions) conds.push_back(to_string(k));
    e.conditions.clear();
    for (const auto& s : c.get_string_list("experiment.image_conditions", conds))
        e.conditions.push_back(parse_condition(s));
    e.train_fraction = c.get_double("experiment.train_fraction", e.train_fraction);
    e.val_fraction = c.get_double("experiment.val_fraction", e.val_fraction);

    auto& bg = e.data.background;
    bg.height = c.get_size("background.height", bg.height);
    bg.width = c.get_size("background.width", bg.width);
    bg.blob_count_mean = c.get_double("background.blob_count_mean", bg.blob_count_mean);
    bg.blob_amplitude_range = detail::parse_range(c, "background.blob_amplitude", bg.blob_amplitude_range);
    bg.blob_sigma_range = detail::parse_range(c, "background.blob_sigma", bg.blob_sigma_range);
    bg.base_level = c.get_double("background.base_level", bg.base_level);
    e.data.normalize_background = c.get_bool("background.normalize", e.data.normalize_background);

    auto& sg = e.data.signal;
    sg.amplitude = c.get_double("signal.amplitude", sg.amplitude);
    sg.sigma = c.get_double("signal.sigma", sg.sigma);
    const Range xr = detail::parse_range(c, "signal.x_range", {sg.x_min, sg.x_max});
    const Range yr = detail::parse_range(c, "signal.y_range", {sg.y_min, sg.y_max});
    sg.x_min = xr.low, sg.x_max = xr.high, sg.y_min = yr.low, sg.y_max = yr.high;

    auto& dg = e.data.degradation;
    dg.mask_height = c.get_size("degradation.mask_height", dg.mask_height);
    dg.mask_width = c.get_size("degradation.mask_width", dg.mask_width);
    dg.noise_sigma = c.get_double("degradation.noise_sigma", dg.noise_sigma);
    const std::string recon = c.get_string("degradation.reconstruction", "magnitude");
    if (recon == "magnitude") dg.reconstruction = Reconstruction::Magnitude;
    else if (recon == "real_part") dg.reconstruction = Reconstruction::RealPart;
    else throw InvalidInput("degradation.reconstruction must be magnitude or real_part");

    e.observer_train.learning_rate = 0.01;
    e.observer_train.epochs = 10;
    e.observer_train.batch_size = 32;
    e.observer_train = detail::parse_train(c, "observer", e.observer_train);
    e.restorer_train.learning_rate = 0.003;
    e.restorer_train.epochs = 10;
    e.restorer_train.batch_size = 16;
    e.restorer_train = detail::parse_train(c, "restorer", e.restorer_train);
    e.restorer_arch.levels = c.get_size("restorer.levels", e.restorer_arch.levels);
    e.restorer_arch.base_channels = c.get_size("restorer.base_channels", e.restorer_arch.base_channels);
    e.restorer_arch.skip_connections =
        c.get_bool("restorer.skip_connections", e.restorer_arch.skip_connections);

    e.wall_time_in_results = c.get_bool("output.wall_time_in_results", e.wall_time_in_results);
    e.write_svg = c.get_bool("output.svg", e.write_svg);
    e.output_dir = c.get_string("output.dir", "results/" + e.name);
    c.check_consumed();
    e.validate();
    return e;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return experiment_from_config(Config::load(path));
}

// ---------------------------------------------------------------------------
// Result rows.

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

struct ResultRow {
    std::string condition;
    std::string family;
    std::size_t run = 0;
    std::uint64_t seed = 0;
    double v_info_nats = 0.0;
    std::string split = "train";  // split on which v_info_nats was measured
    double auc = kNotApplicable;  // test split; binary task only
    double accuracy = 0.0;        // test split
    double ssim = 0.0;            // condition images vs high field, test split
    double psnr = 0.0;
    double wall_time_s = 0.0;
};

struct SummaryStat {
    double mean = 0.0;
    double std = 0.0;  // sample (N - 1) standard deviation; NaN when N = 1
};

struct AggregateRow {
    std::string condition;
    std::string family;
    std::size_t n = 0;
    SummaryStat v_info, auc, accuracy, ssim, psnr;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<AggregateRow> aggregates;
};

namespace detail {

inline bool same_value(double a, double b) {
    return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace detail

inline bool operator==(const ResultRow& a, const ResultRow& b) {
    using detail::same_value;
    return a.condition == b.condition && a.family == b.family && a.run == b.run &&
           a.seed == b.seed && same_value(a.v_info_nats, b.v_info_nats) && a.split == b.split &&
           same_value(a.auc, b.auc) && same_value(a.accuracy, b.accuracy) &&
           same_value(a.ssim, b.ssim) && same_value(a.psnr, b.psnr) &&
           same_value(a.wall_time_s, b.wall_time_s);
}

inline bool operator==(const SummaryStat& a, const SummaryStat& b) {
    return detail::same_value(a.mean, b.mean) && detail::same_value(a.std, b.std);
}

inline bool operator==(const AggregateRow& a, const AggregateRow& b) {
    return a.condition == b.condition && a.family == b.family && a.n == b.n &&
           a.v_info == b.v_info && a.auc == b.auc && a.accuracy == b.accuracy &&
           a.ssim == b.ssim && a.psnr == b.psnr;
}

inline bool operator==(const ExperimentResult& a, const ExperimentResult& b) {
    return a.rows == b.rows && a.aggregates == b.aggregates;
}

inline SummaryStat summarize(const std::vector<double>& v) {
    detail::require(!v.empty(), "summarize: no values");
    SummaryStat s;
    const bool all_equal = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    if (all_equal) {
        s.mean = v.front();
        s.std = v.size() > 1 ? 0.0 : kNotApplicable;
        return s;
    }
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return s;
}

/// One aggregate per (condition, family), in order of first appearance.
inline std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : rows) {
        const std::pair<std::string, std::string> k{r.condition, r.family};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    std::vector<AggregateRow> out;
    for (const auto& [cond, fam] : keys) {
        std::vector<double> vi, au, ac, ss, ps;
        for (const auto& r : rows) {
            if (r.condition != cond || r.family != fam) continue;
            vi.push_back(r.v_info_nats);
            au.push_back(r.auc);
            ac.push_back(r.accuracy);
            ss.push_back(r.ssim);
            ps.push_back(r.psnr);
        }
        AggregateRow a;
        a.condition = cond;
        a.family = fam;
        a.n = vi.size();
        a.v_info = summarize(vi);
        a.auc = summarize(au);
        a.accuracy = summarize(ac);
        a.ssim = summarize(ss);
        a.psnr = summarize(ps);
        out.push_back(a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV.

inline const char* kResultsHeader =
    "condition,family,run,seed,v_info_nats,split,auc,accuracy,ssim,psnr,wall_time_s";

namespace detail {

/// %.17g, which round-trips every double; NaN is written as an empty field.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw ParseError(ParseError::Kind::Syntax, "csv line " + std::to_string(lineno) + ": unterminated quote");
    out.push_back(cur);
    return out;
}

inline double parse_csv_double(const std::string& s, std::size_t lineno) {
    if (s.empty()) return kNotApplicable;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw ParseError(ParseError::Kind::Syntax,
                         "csv line " + std::to_string(lineno) + ": bad number '" + s + "'");
    return v;
}

inline std::uint64_t parse_csv_u64(const std::string& s, std::size_t lineno) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size())
        throw ParseError(ParseError::Kind::Syntax,
                         "csv line " + std::to_string(lineno) + ": bad integer '" + s + "'");
    return v;
}

}  // namespace detail

inline std::string results_csv(const std::vector<ResultRow>& rows) {
    using detail::fmt_double;
    std::string out = std::string(kResultsHeader) + "\n";
    for (const auto& r : rows) {
        out += detail::csv_field(r.condition) + "," + detail::csv_field(r.family) + "," +
               std::to_string(r.run) + "," + std::to_string(r.seed) + "," +
               fmt_double(r.v_info_nats) + "," + r.split + "," + fmt_double(r.auc) + "," +
               fmt_double(r.accuracy) + "," + fmt_double(r.ssim) + "," + fmt_double(r.psnr) + "," +
               fmt_double(r.wall_time_s) + "\n";
    }
    return out;
}

inline ExperimentResult parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line) || line != kResultsHeader)
        throw ParseError(ParseError::Kind::Syntax, "results.csv: unexpected header");
    ExperimentResult res;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line, lineno);
        if (f.size() != 11)
            throw ParseError(ParseError::Kind::Syntax,
                             "results.csv line " + std::to_string(lineno) + ": expected 11 fields");
        ResultRow r;
        r.condition = f[0];
        r.family = f[1];
        r.run = static_cast<std::size_t>(detail::parse_csv_u64(f[2], lineno));
        r.seed = detail::parse_csv_u64(f[3], lineno);
        r.v_info_nats = detail::parse_csv_double(f[4], lineno);
        r.split = f[5];
        r.auc = detail::parse_csv_double(f[6], lineno);
        r.accuracy = detail::parse_csv_double(f[7], lineno);
        r.ssim = detail::parse_csv_double(f[8], lineno);
        r.psnr = detail::parse_csv_double(f[9], lineno);
        r.wall_time_s = detail::parse_csv_double(f[10], lineno);
        res.rows.push_back(std::move(r));
    }
    res.aggregates = aggregate(res.rows);
    return res;
}

inline ExperimentResult read_results_csv(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_results_csv(std::string(bytes.begin(), bytes.end()));
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& aggs) {
    using detail::fmt_double;
    std::string out =
        "condition,family,n,v_info_mean,v_info_std,auc_mean,auc_std,accuracy_mean,accuracy_std,"
        "ssim_mean,ssim_std,psnr_mean,psnr_std\n";
    for (const auto& a : aggs) {
        out += detail::csv_field(a.condition) + "," + detail::csv_field(a.family) + "," +
               std::to_string(a.n);
        for (const auto* s : {&a.v_info, &a.auc, &a.accuracy, &a.ssim, &a.psnr})
            out += "," + fmt_double(s->mean) + "," + fmt_double(s->std);
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// V-info vs task metric.

struct MetricFit {
    std::string condition;
    std::string metric;  // "auc", or "accuracy" when AUC is not available
    std::size_t points = 0;
    FitResult fit;
    bool defined = false;  // false with fewer than 3 points or constant V-info
};

/// Per condition: OLS of the run-averaged task metric on the run-averaged
/// V-info, one point per family.
inline std::vector<MetricFit> vinfo_vs_metric(const std::vector<AggregateRow>& aggs) {
    std::vector<std::string> conds;
    for (const auto& a : aggs)
        if (std::find(conds.begin(), conds.end(), a.condition) == conds.end())
            conds.push_back(a.condition);
    std::vector<MetricFit> out;
    for (const auto& cond : conds) {
        std::vector<const AggregateRow*> group;
        for (const auto& a : aggs)
            if (a.condition == cond) group.push_back(&a);
        const bool use_auc = std::none_of(group.begin(), group.end(),
                                          [](const AggregateRow* a) { return std::isnan(a->auc.mean); });
        MetricFit m;
        m.condition = cond;
        m.metric = use_auc ? "auc" : "accuracy";
        m.points = group.size();
        std::vector<double> xs, ys;
        for (const auto* a : group) {
            xs.push_back(a->v_info.mean);
            ys.push_back(use_auc ? a->auc.mean : a->accuracy.mean);
        }
        const bool finite = std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); }) &&
                            std::all_of(ys.begin(), ys.end(), [](double v) { return std::isfinite(v); });
        const bool spread = std::any_of(xs.begin(), xs.end(), [&](double v) { return v != xs.front(); });
        if (xs.size() >= 3 && finite && spread) {
            m.fit = linear_fit_r2(xs, ys);
            m.defined = true;
        }
        out.push_back(m);
    }
    return out;
}

inline std::string vinfo_vs_metric_csv(const std::vector<MetricFit>& fits) {
    using detail::fmt_double;
    std::string out = "condition,metric,points,slope,intercept,r_squared\n";
    for (const auto& m : fits) {
        const double na = kNotApplicable;
        out += detail::csv_field(m.condition) + "," + m.metric + "," + std::to_string(m.points) + "," +
               fmt_double(m.defined ? m.fit.slope : na) + "," +
               fmt_double(m.defined ? m.fit.intercept : na) + "," +
               fmt_double(m.defined ? m.fit.r_squared : na) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVG line plots: metric mean vs capacity rung, one polyline per condition,
// vertical bars at +-1 sample std.

namespace detail {

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace detail

inline std::string capacity_plot_svg(const std::vector<AggregateRow>& aggs,
                                     const SummaryStat AggregateRow::*stat, const std::string& ylabel) {
    std::vector<std::string> conds, fams;
    for (const auto& a : aggs) {
        if (std::find(conds.begin(), conds.end(), a.condition) == conds.end()) conds.push_back(a.condition);
        if (std::find(fams.begin(), fams.end(), a.family) == fams.end()) fams.push_back(a.family);
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& a : aggs) {
        const SummaryStat& s = a.*stat;
        if (!std::isfinite(s.mean)) continue;
        const double e = std::isfinite(s.std) ? s.std : 0.0;
        lo = std::min(lo, s.mean - e);
        hi = std::max(hi, s.mean + e);
    }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double W = 640, H = 400, L = 70, R = 150, T = 30, B = 90;
    const double pw = W - L - R, ph = H - T - B;
    auto X = [&](std::size_t i) {
        return L + (fams.size() > 1 ? pw * static_cast<double>(i) / static_cast<double>(fams.size() - 1) : pw / 2);
    };
    auto Y = [&](double v) { return T + ph * (hi - v) / (hi - lo); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    using detail::svg_num;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        os << "<text x=\"" << L - 6 << "\" y=\"" << svg_num(Y(v) + 4) << "\" text-anchor=\"end\">"
           << svg_num(v) << "</text>\n";
    }
    for (std::size_t i = 0; i < fams.size(); ++i)
        os << "<text transform=\"translate(" << svg_num(X(i)) << "," << T + ph + 12
           << ") rotate(30)\">" << detail::svg_escape(fams[i]) << "</text>\n";
    os << "<text x=\"14\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 14," << T + ph / 2
       << ")\" text-anchor=\"middle\">" << detail::svg_escape(ylabel) << "</text>\n";
    for (std::size_t c = 0; c < conds.size(); ++c) {
        const char* col = colors[c % 6];
        std::string pts;
        for (std::size_t i = 0; i < fams.size(); ++i)
            for (const auto& a : aggs) {
                if (a.condition != conds[c] || a.family != fams[i]) continue;
                const SummaryStat& s = a.*stat;
                if (!std::isfinite(s.mean)) continue;
                pts += svg_num(X(i)) + "," + svg_num(Y(s.mean)) + " ";
                if (std::isfinite(s.std) && s.std > 0)
                    os << "<line x1=\"" << svg_num(X(i)) << "\" y1=\"" << svg_num(Y(s.mean - s.std))
                       << "\" x2=\"" << svg_num(X(i)) << "\" y2=\"" << svg_num(Y(s.mean + s.std))
                       << "\" stroke=\"" << col << "\"/>\n";
            }
        os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"" << pts
           << "\"/>\n"
           << "<text x=\"" << L + pw + 10 << "\" y=\"" << T + 14 * (c + 1) << "\" fill=\"" << col
           << "\">" << detail::svg_escape(conds[c]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct ReportOptions {
    std::vector<std::string> conditions;  // empty: keep all
    std::vector<std::string> families;    // empty: keep all
    bool write_results = true;
    bool write_svg = true;
};

inline ExperimentResult filter_result(const ExperimentResult& res, const ReportOptions& opt) {
    auto keep = [](const std::vector<std::string>& allow, const std::string& v) {
        return allow.empty() || std::find(allow.begin(), allow.end(), v) != allow.end();
    };
    ExperimentResult out;
    for (const auto& r : res.rows)
        if (keep(opt.conditions, r.condition) && keep(opt.families, r.family)) out.rows.push_back(r);
    out.aggregates = aggregate(out.rows);
    return out;
}

/// Writes results.csv, aggregate.csv, vinfo_vs_metric.csv and the capacity
/// plots. All content is validated and rendered before the first write.
inline void report(const ExperimentResult& res, const std::filesystem::path& out_dir,
                   const ReportOptions& opt = {}) {
    const ExperimentResult sel = filter_result(res, opt);
    detail::require(!sel.rows.empty(), "report: no result rows match the filter");
    std::vector<std::pair<std::string, std::string>> files;
    if (opt.write_results) files.emplace_back("results.csv", results_csv(sel.rows));
    files.emplace_back("aggregate.csv", aggregate_csv(sel.aggregates));
    const auto fits = vinfo_vs_metric(sel.aggregates);
    files.emplace_back("vinfo_vs_metric.csv", vinfo_vs_metric_csv(fits));
    if (opt.write_svg) {
        files.emplace_back("v_info_vs_capacity.svg",
                           capacity_plot_svg(sel.aggregates, &AggregateRow::v_info, "V-info (nats, train)"));
        const bool has_auc = std::any_of(sel.aggregates.begin(), sel.aggregates.end(),
                                         [](const AggregateRow& a) { return !std::isnan(a.auc.mean); });
        if (has_auc)
            files.emplace_back("auc_vs_capacity.svg",
                               capacity_plot_svg(sel.aggregates, &AggregateRow::auc, "AUC (test)"));
        files.emplace_back("accuracy_vs_capacity.svg",
                           capacity_plot_svg(sel.aggregates, &AggregateRow::accuracy, "accuracy (test)"));
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    for (const auto& [name, text] : files) atomic_write_file(out_dir / name, text);
}

// ---------------------------------------------------------------------------
// Sweep.

/// Worker count: VIQ_THREADS if set (>= 1), else the hardware concurrency.
inline std::size_t worker_threads(std::size_t jobs) {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VIQ_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw InvalidInput("VIQ_THREADS must be a positive integer");
        n = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

namespace detail {

/// Runs fn(i) for i in [0, n). If any job throws, the exception of the
/// lowest failing index is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (std::size_t i; !failed && (i = next++) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct ConditionData {
    Condition condition;
    LabeledDataset train, val, test;
    double ssim = 0.0, psnr = 0.0;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline std::uint64_t dataset_seed(const ExperimentConfig& e, std::size_t run) {
    return hash64(e.base_seed, run, "dataset", "");
}
inline std::uint64_t split_seed(const ExperimentConfig& e, std::size_t run) {
    return hash64(e.base_seed, run, "split", "");
}
inline std::uint64_t restorer_seed(const ExperimentConfig& e, std::size_t run) {
    return hash64(e.base_seed, run, "restored", "restorer");
}

struct RunSplits {
    PairedDataset data;
    SplitIndices split;
};

inline RunSplits build_run_data(const ExperimentConfig& e, std::size_t run) {
    DatasetConfig dc = e.data;
    dc.seed = dataset_seed(e, run);
    RunSplits rs;
    rs.data = build_dataset(dc);
    rs.split = stratified_split(rs.data.high_field, split_seed(e, run), e.train_fraction, e.val_fraction);
    return rs;
}

inline std::vector<ImagePair> image_pairs(const PairedDataset& d, const std::vector<std::size_t>& idx) {
    std::vector<ImagePair> out;
    out.reserve(idx.size());
    for (auto i : idx) out.emplace_back(d.low_field.samples[i].image, d.high_field.samples[i].image);
    return out;
}

inline RestorationModel train_run_restorer(const ExperimentConfig& e, const RunSplits& rs, std::size_t run) {
    TrainConfig tc = e.restorer_train;
    tc.seed = restorer_seed(e, run);
    return train_restorer(image_pairs(rs.data, rs.split.train), tc, e.restorer_arch,
                          image_pairs(rs.data, rs.split.val));
}

struct FidelityScores {
    double ssim = 0.0;
    double psnr = 0.0;
};

/// Mean SSIM / PSNR of `images[i]` against `reference[i]` over `idx`, with
/// each reference image's dynamic range as data range and peak.
inline FidelityScores mean_fidelity(const LabeledDataset& images, const LabeledDataset& reference,
                                    const std::vector<std::size_t>& idx) {
    detail::require(!idx.empty(), "mean_fidelity: no images");
    FidelityScores f;
    for (auto i : idx) {
        const auto& a = images.samples.at(i).image;
        const auto& ref = reference.samples.at(i).image;
        const double range = dynamic_range(ref);
        f.ssim += ssim(a, ref, range);
        f.psnr += psnr(a, ref, range > 0.0 ? range : 1.0);
    }
    f.ssim /= static_cast<double>(idx.size());
    f.psnr /= static_cast<double>(idx.size());
    return f;
}

struct TimingRow {
    std::string condition, family;
    std::size_t run = 0;
    double wall_time_s = 0.0;
};

struct SweepOutput {
    ExperimentResult result;
    std::vector<TimingRow> timings;
};

/// Rows are ordered by (condition, family) in config order, then run.
inline SweepOutput run_capacity_sweep(const ExperimentConfig& e) {
    e.validate();
    const auto fams = e.families();
    const std::size_t C = e.conditions.size(), F = fams.size(), R = e.runs;
    std::vector<ResultRow> rows(C * F * R);
    auto slot = [&](std::size_t c, std::size_t f, std::size_t r) -> ResultRow& {
        return rows[(c * F + f) * R + r];
    };

    auto run_job = [&](std::size_t run) {
        RunSplits rs;
        std::optional<RestorationModel> restorer;
        try {
            rs = build_run_data(e, run);
            if (e.has(Condition::Restored)) restorer = train_run_restorer(e, rs, run);
        } catch (const std::exception& ex) {
            throw ExperimentError(e.has(Condition::Restored) ? "restored" : "-", "-", run, ex.what());
        }
        for (std::size_t c = 0; c < C; ++c) {
            const Condition cond = e.conditions[c];
            const std::string cname = to_string(cond);
            LabeledDataset images;
            try {
                switch (cond) {
                    case Condition::LowField: images = rs.data.low_field; break;
                    case Condition::HighField: images = rs.data.high_field; break;
                    case Condition::Restored: {
                        images = rs.data.low_field;
                        Restorer apply(*restorer);
                        for (auto& s : images.samples) s.image = apply(s.image);
                        break;
                    }
                }
            } catch (const std::exception& ex) {
                throw ExperimentError(cname, "-", run, ex.what());
            }
            const FidelityScores fid = mean_fidelity(images, rs.data.high_field, rs.split.test);
            const LabeledDataset train = subset(images, rs.split.train, Split::Train);
            const LabeledDataset val = subset(images, rs.split.val, Split::Val);
            const LabeledDataset test = subset(images, rs.split.test, Split::Test);
            images = {};

            std::optional<TrainedObserver> prev;
            for (std::size_t f = 0; f < F; ++f) {
                const std::string fname = fams[f].descriptor();
                const auto t0 = std::chrono::steady_clock::now();
                ResultRow& row = slot(c, f, run);
                row.condition = cname;
                row.family = e.capacity_grid[f];
                row.run = run;
                row.seed = hash64(e.base_seed, run, cname, e.capacity_grid[f]);
                try {
                    TrainConfig tc = e.observer_train;
                    tc.seed = row.seed;
                    std::optional<std::vector<double>> init;
                    if (prev) {
                        try {
                            init = embed_family(*prev, fams[f], row.seed);
                        } catch (const UnsupportedEmbedding&) {
                            init.reset();
                        }
                    }
                    ObserverFit fit = fit_observer(fams[f], train, tc, std::move(init), &val);
                    row.v_info_nats = v_information(fit.by_train_loss, train).value;
                    row.split = to_string(Split::Train);
                    row.auc = train.num_classes == 2 ? auc(class_scores(fit.by_val_loss, test))
                                                     : kNotApplicable;
                    row.accuracy = accuracy(fit.by_val_loss, test);
                    prev = std::move(fit.by_train_loss);
                } catch (const ExperimentError&) {
                    throw;
                } catch (const std::exception& ex) {
                    throw ExperimentError(cname, fname, run, ex.what());
                }
                row.ssim = fid.ssim;
                row.psnr = fid.psnr;
                row.wall_time_s = detail::seconds_since(t0);
            }
        }
    };
    detail::parallel_for(R, worker_threads(R), run_job);

    SweepOutput out;
    for (auto& r : rows) {
        out.timings.push_back({r.condition, r.family, r.run, r.wall_time_s});
        if (!e.wall_time_in_results) r.wall_time_s = 0.0;
    }
    out.result.rows = std::move(rows);
    out.result.aggregates = aggregate(out.result.rows);
    return out;
}

inline std::string timing_csv(const std::vector<TimingRow>& t) {
    std::string out = "condition,family,run,wall_time_s\n";
    for (const auto& r : t)
        out += detail::csv_field(r.condition) + "," + detail::csv_field(r.family) + "," +
               std::to_string(r.run) + "," + detail::fmt_double(r.wall_time_s) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directories written by `viq simulate`:
//
//   manifest.txt            key = value summary plus the canonical config
//   labels.csv              index,label,split,signals (x:y pairs)
//   high_field/NNNNNN.viqt  f32 images
//   low_field/NNNNNN.viqt

inline void write_dataset_dir(const std::filesystem::path& dir, const ExperimentConfig& e,
                              const RunSplits& rs, std::size_t run, const std::string& config_text) {
    const auto& d = rs.data;
    std::vector<std::string> split_of(d.high_field.size(), "test");
    for (auto i : rs.split.train) split_of[i] = "train";
    for (auto i : rs.split.val) split_of[i] = "val";

    std::ostringstream labels;
    labels << "index,label,split,signals\n";
    for (std::size_t i = 0; i < d.high_field.size(); ++i) {
        labels << i << "," << d.high_field.samples[i].label << "," << split_of[i] << ",";
        for (std::size_t s = 0; s < d.records[i].signals.size(); ++s) {
            const auto& sp = d.records[i].signals[s];
            labels << (s ? " " : "") << detail::fmt_double(sp.x0) << ":" << detail::fmt_double(sp.y0);
        }
        labels << "\n";
    }
    std::ostringstream man;
    man << "name = " << e.name << "\n"
        << "run = " << run << "\n"
        << "seed = " << dataset_seed(e, run) << "\n"
        << "task = " << to_string(e.data.task) << "\n"
        << "size = " << e.height() << "x" << e.width() << "\n"
        << "num_samples = " << d.high_field.size() << "\n"
        << "class_counts =";
    for (auto n : d.high_field.class_counts()) man << " " << n;
    man << "\nsplit = " << rs.split.train.size() << " " << rs.split.val.size() << " "
        << rs.split.test.size() << "\n"
        << "config:\n"
        << config_text;

    std::error_code ec;
    for (const char* sub : {"high_field", "low_field"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    for (std::size_t i = 0; i < d.high_field.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.viqt", i);
        write_tensor(dir / "high_field" / name, d.high_field.samples[i].image);
        write_tensor(dir / "low_field" / name, d.low_field.samples[i].image);
    }
    atomic_write_file(dir / "labels.csv", labels.str());
    atomic_write_file(dir / "manifest.txt", man.str());
}

}  // namespace viq
