// Command-line front end for the low-precision Langevin sampling toolkit.
//
// Subcommands:
//   gaussian-demo   sample a known Gaussian target across stepsizes
//   logreg          softmax regression posterior on image/synthetic data
//   mlp             one-hidden-layer network posterior, optionally with
//                   quantized activations and backprop errors
//   quant-check     Monte-Carlo audits of the quantizers' moments
//   schema          print every config key with its default and meaning
//
// Each run subcommand reads an optional `key = value` config file, then
// applies --override pairs in order, then --seed / --out. Results land in a
// CSV (plus a histogram CSV for the demo). Exit status is 0 when every run
// completed, 1 when a chain aborted or an input was rejected.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lpsgld/experiments.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path,
                    "config file with one 'key = value' per line");
    cmd->add_option("--override", args.overrides,
                    "extra KEY=VALUE assignment applied after the config "
                    "file; repeatable")
        ->type_name("KEY=VALUE");
    cmd->add_option("--seed", args.seed, "base random seed");
    cmd->add_option("--out", args.out, "result CSV path");
}

lpsgld::ExperimentConfig build_config(const CommonArgs& args,
                                      const std::string& experiment) {
    lpsgld::ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = lpsgld::load_config_file(args.config_path);
    for (const auto& o : args.overrides)
        lpsgld::apply_config_line(cfg, o, "--override");
    if (args.seed) cfg.seed = *args.seed;
    if (args.out) cfg.out = *args.out;
    cfg.experiment = experiment;
    return cfg;
}

void print_schema() {
    lpsgld::ExperimentConfig defaults;
    std::printf("%-20s %-28s %s\n", "key", "default", "meaning");
    for (const auto& field : lpsgld::config_schema()) {
        std::string def = field.get(defaults);
        if (def.empty()) def = "(empty)";
        std::printf("%-20s %-28s %s\n", field.key.c_str(), def.c_str(),
                    field.doc.c_str());
    }
}

void report_rows(const lpsgld::ExperimentConfig& cfg,
                 const std::vector<lpsgld::ResultRow>& rows) {
    lpsgld::write_result_csv(cfg.out, rows);
    std::printf("wrote %zu result rows to %s\n", rows.size(), cfg.out.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-precision stochastic-gradient Langevin sampling toolkit"};
    app.require_subcommand(1);

    CommonArgs demo_args, logreg_args, mlp_args, qc_args;
    CLI::App* demo = app.add_subcommand(
        "gaussian-demo", "sample a known Gaussian target across stepsizes");
    add_common(demo, demo_args);
    CLI::App* logreg = app.add_subcommand(
        "logreg", "softmax regression posterior with low-precision samplers");
    add_common(logreg, logreg_args);
    CLI::App* mlp = app.add_subcommand(
        "mlp", "one-hidden-layer network posterior with low-precision samplers");
    add_common(mlp, mlp_args);
    CLI::App* qc = app.add_subcommand(
        "quant-check", "Monte-Carlo audits of quantizer moments");
    add_common(qc, qc_args);
    CLI::App* schema = app.add_subcommand(
        "schema", "print every config key with default and meaning");

    CLI11_PARSE(app, argc, argv);

    try {
        if (schema->parsed()) {
            print_schema();
            return 0;
        }
        if (demo->parsed()) {
            lpsgld::ExperimentConfig cfg = build_config(demo_args, "gaussian-demo");
            lpsgld::DemoOutput out = lpsgld::run_gaussian_demo(cfg);
            lpsgld::write_result_csv(cfg.out, out.rows);
            lpsgld::write_histogram_csv(cfg.histogram_path(), out.hist);
            std::printf("wrote %zu result rows to %s\n", out.rows.size(),
                        cfg.out.c_str());
            std::printf("wrote %zu histogram rows to %s\n", out.hist.size(),
                        cfg.histogram_path().c_str());
            return 0;
        }
        if (logreg->parsed()) {
            lpsgld::ExperimentConfig cfg = build_config(logreg_args, "logreg");
            report_rows(cfg, lpsgld::run_logreg(cfg));
            return 0;
        }
        if (mlp->parsed()) {
            lpsgld::ExperimentConfig cfg = build_config(mlp_args, "mlp");
            report_rows(cfg, lpsgld::run_mlp(cfg));
            return 0;
        }
        if (qc->parsed()) {
            lpsgld::ExperimentConfig cfg = build_config(qc_args, "quant-check");
            std::vector<lpsgld::ResultRow> rows = lpsgld::run_quant_check(cfg);
            for (const auto& r : rows) {
                if (r.metric.size() > 3 &&
                    r.metric.compare(r.metric.size() - 3, 3, "_ok") == 0)
                    std::printf("%-28s %s\n", r.metric.c_str(),
                                r.value == 1.0 ? "ok" : "FAIL");
            }
            report_rows(cfg, rows);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand selected\n";
    return 1;
}
