// viq: command-line front end for simulation, restorer training, capacity
// sweeps, reporting, and the self-test suite.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "viq/viq.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    const auto bytes = viq::read_file_bytes(p);
    return std::string(bytes.begin(), bytes.end());
}

fs::path out_dir_for(const viq::ExperimentConfig& e, const std::string& flag) {
    return flag.empty() ? fs::path(e.output_dir) : fs::path(flag);
}

int cmd_simulate(const std::string& cfg_path, const std::string& out, std::size_t run) {
    const auto text = read_text(cfg_path);
    const auto e = viq::experiment_from_config(viq::Config::parse(text, cfg_path));
    const fs::path dir = out.empty() ? fs::path(e.output_dir) / "dataset" : fs::path(out);
    const auto rs = viq::build_run_data(e, run);
    viq::write_dataset_dir(dir, e, rs, run, text);
    std::printf("wrote %zu samples to %s\n", rs.data.high_field.size(), dir.string().c_str());
    return 0;
}

int cmd_train_restorer(const std::string& cfg_path, const std::string& out, std::size_t run) {
    const auto e = viq::load_experiment(cfg_path);
    const fs::path dir = out_dir_for(e, out);
    const auto rs = viq::build_run_data(e, run);
    const auto model = viq::train_run_restorer(e, rs, run);

    viq::LabeledDataset restored = rs.data.low_field;
    viq::Restorer apply(model);
    for (auto& s : restored.samples) s.image = apply(s.image);
    const auto low = viq::mean_fidelity(rs.data.low_field, rs.data.high_field, rs.split.test);
    const auto rest = viq::mean_fidelity(restored, rs.data.high_field, rs.split.test);

    std::string metrics = "images,split,ssim,psnr\n";
    metrics += "low_field,test," + viq::detail::fmt_double(low.ssim) + "," +
               viq::detail::fmt_double(low.psnr) + "\n";
    metrics += "restored,test," + viq::detail::fmt_double(rest.ssim) + "," +
               viq::detail::fmt_double(rest.psnr) + "\n";
    std::string curve = "epoch,train_loss,val_loss\n";
    for (std::size_t i = 0; i < model.train_loss_curve.size(); ++i) {
        curve += std::to_string(model.train_loss_curve[i].epoch) + "," +
                 viq::detail::fmt_double(model.train_loss_curve[i].loss) + ",";
        if (i < model.val_loss_curve.size()) curve += viq::detail::fmt_double(model.val_loss_curve[i].loss);
        curve += "\n";
    }
    fs::create_directories(dir);
    viq::save_restorer(dir / "restorer.ckpt", model);
    viq::atomic_write_file(dir / "restorer_metrics.csv", metrics);
    viq::atomic_write_file(dir / "restorer_loss.csv", curve);
    std::printf("selected epoch %zu; test SSIM %.4f -> %.4f, PSNR %.2f -> %.2f dB\n",
                model.selected_epoch, low.ssim, rest.ssim, low.psnr, rest.psnr);
    return 0;
}

int cmd_sweep(const std::string& cfg_path, const std::string& out) {
    const auto text = read_text(cfg_path);
    const auto e = viq::experiment_from_config(viq::Config::parse(text, cfg_path));
    const fs::path dir = out_dir_for(e, out);
    const auto sweep = viq::run_capacity_sweep(e);
    viq::ReportOptions opt;
    opt.write_svg = e.write_svg;
    viq::report(sweep.result, dir, opt);
    viq::atomic_write_file(dir / "timing.csv", viq::timing_csv(sweep.timings));
    viq::atomic_write_file(dir / "config.cfg", text);
    for (const auto& f : viq::vinfo_vs_metric(sweep.result.aggregates)) {
        if (f.defined)
            std::printf("%-12s R^2(v_info, %s) = %.4f over %zu families\n", f.condition.c_str(),
                        f.metric.c_str(), f.fit.r_squared, f.points);
        else
            std::printf("%-12s R^2 undefined (%zu families)\n", f.condition.c_str(), f.points);
    }
    std::printf("results in %s\n", dir.string().c_str());
    return 0;
}

int cmd_report(const std::string& csv, const std::string& out, const std::vector<std::string>& conds,
               const std::vector<std::string>& fams, bool no_svg) {
    const auto res = viq::read_results_csv(csv);
    const fs::path src_dir = fs::absolute(csv).parent_path();
    const fs::path dir = out.empty() ? src_dir : fs::absolute(out);
    viq::ReportOptions opt;
    opt.conditions = conds;
    opt.families = fams;
    opt.write_svg = !no_svg;
    // Never overwrite the input table in place.
    opt.write_results = fs::weakly_canonical(dir) != fs::weakly_canonical(src_dir);
    viq::report(res, dir, opt);
    for (const auto& f : viq::vinfo_vs_metric(viq::filter_result(res, opt).aggregates))
        if (f.defined)
            std::printf("%-12s R^2(v_info, %s) = %.4f\n", f.condition.c_str(), f.metric.c_str(),
                        f.fit.r_squared);
    return 0;
}

int cmd_selftest() {
    const auto checks = viq::run_selftest();
    bool ok = true;
    for (const auto& c : checks) {
        std::printf("[%s] %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        ok = ok && c.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"viq: task-based image quality experiments"};
    app.require_subcommand(1);

    std::string cfg, out, csv;
    std::size_t run = 0;
    std::vector<std::string> conds, fams;
    bool no_svg = false;

    auto* sim = app.add_subcommand("simulate", "Write one run's paired dataset as VIQT files");
    sim->add_option("config", cfg, "Experiment config")->required()->check(CLI::ExistingFile);
    sim->add_option("-o,--out", out, "Output directory (default <output.dir>/dataset)");
    sim->add_option("--run", run, "Run index whose seed is used");

    auto* tr = app.add_subcommand("train-restorer", "Train the restorer for one run");
    tr->add_option("config", cfg, "Experiment config")->required()->check(CLI::ExistingFile);
    tr->add_option("-o,--out", out, "Output directory (default output.dir)");
    tr->add_option("--run", run, "Run index whose seed is used");

    auto* sw = app.add_subcommand("sweep", "Run the capacity sweep and write results");
    sw->add_option("config", cfg, "Experiment config")->required()->check(CLI::ExistingFile);
    sw->add_option("-o,--out", out, "Output directory (default output.dir)");

    auto* rep = app.add_subcommand("report", "Recompute aggregates, fits and plots from results.csv");
    rep->add_option("results", csv, "results.csv")->required()->check(CLI::ExistingFile);
    rep->add_option("-o,--out", out, "Output directory (default: next to results.csv)");
    rep->add_option("--condition", conds, "Keep only these conditions");
    rep->add_option("--family", fams, "Keep only these families");
    rep->add_flag("--no-svg", no_svg, "Skip the SVG plots");

    auto* st = app.add_subcommand("selftest", "Run the built-in oracle and property checks");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sim) return cmd_simulate(cfg, out, run);
        if (*tr) return cmd_train_restorer(cfg, out, run);
        if (*sw) return cmd_sweep(cfg, out);
        if (*rep) return cmd_report(csv, out, conds, fams, no_svg);
        if (*st) return cmd_selftest();
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "viq: error: %s\n", ex.what());
        return 1;
    }
    return 1;
}
