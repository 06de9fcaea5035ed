// Command-line front end for the s2osc library: open-set runs, streaming
// incremental runs, the confidence-threshold baseline, K sweeps and plotting.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2osc/error.hpp"
#include "s2osc/experiment.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    s2osc::ExperimentConfig cfg;
};

// flags > config file > built-in defaults
void add_common_options(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
    cmd->add_option("--images", opts.cfg.images_path, "IDX image file");
    cmd->add_option("--labels", opts.cfg.labels_path, "IDX label file");
    cmd->add_option("--output-dir", opts.cfg.output_dir, "artifact directory");
    cmd->add_option("--seed", opts.cfg.seed, "master seed");
    cmd->add_option("--known-fraction", opts.cfg.known_fraction,
                    "fraction of each known class used for training");
    cmd->add_option("--n-unknown", opts.cfg.n_unknown, "number of held-out classes");
    cmd->add_option("--known-holdout", opts.cfg.known_holdout,
                    "fraction of known-class data placed in the test pool");
    cmd->add_option("--max-per-class", opts.cfg.max_per_class,
                    "cap instances per class (0 = all)");
    cmd->add_option("--k", opts.cfg.k_filter, "filter size K");
    cmd->add_option("--lambda", opts.cfg.lambda, "distance weight in the filter score");
    cmd->add_option("--alpha", opts.cfg.alpha, "distillation weight");
    cmd->add_option("--lambda-u", opts.cfg.lambda_u, "unsupervised loss weight");
    cmd->add_option("--tau", opts.cfg.tau, "confidence threshold");
    cmd->add_option("--temperature", opts.cfg.temperature, "distillation temperature");
    cmd->add_option("--memory-capacity", opts.cfg.memory_capacity, "exemplar memory size");
    cmd->add_flag("--no-memory", [&opts](std::int64_t) { opts.cfg.memory_enabled = false; },
                  "disable replay/distillation memory in incremental updates");
    cmd->add_option("--baseline-theta", opts.cfg.baseline_theta,
                    "baseline confidence threshold");
    cmd->add_option("--variant", opts.cfg.variant, "auto|multiclass|binary");
    cmd->add_option("--class-arrival", opts.cfg.class_arrival, "single|multi");
    cmd->add_option("--hidden-dim", opts.cfg.hidden_dim, "embedding width");
    cmd->add_option("--conv-channels", opts.cfg.conv_channels, "conv block widths");
    cmd->add_option("--f-logit-gain", opts.cfg.f_logit_gain, "logit scale of f");
    cmd->add_option("--g-logit-gain", opts.cfg.g_logit_gain, "logit scale of g");
    cmd->add_option("--f-epochs", opts.cfg.f_train.epochs, "pretraining epochs");
    cmd->add_option("--g-epochs", opts.cfg.g_train.epochs, "transductive training epochs");
    cmd->add_option("--update-epochs", opts.cfg.update_train.epochs, "incremental update epochs");
}

// re-parse so explicit flags override values loaded from the file
s2osc::ExperimentConfig resolve_config(CLI::App* cmd, CliOptions& opts) {
    if (opts.config_path.empty()) return opts.cfg;
    s2osc::ExperimentConfig merged = s2osc::load_config_file(opts.config_path);
    auto keep_if_set = [cmd](const char* flag, auto& target, const auto& parsed) {
        if (cmd->count(flag) > 0) target = parsed;
    };
    keep_if_set("--images", merged.images_path, opts.cfg.images_path);
    keep_if_set("--labels", merged.labels_path, opts.cfg.labels_path);
    keep_if_set("--output-dir", merged.output_dir, opts.cfg.output_dir);
    keep_if_set("--seed", merged.seed, opts.cfg.seed);
    keep_if_set("--known-fraction", merged.known_fraction, opts.cfg.known_fraction);
    keep_if_set("--n-unknown", merged.n_unknown, opts.cfg.n_unknown);
    keep_if_set("--known-holdout", merged.known_holdout, opts.cfg.known_holdout);
    keep_if_set("--max-per-class", merged.max_per_class, opts.cfg.max_per_class);
    keep_if_set("--k", merged.k_filter, opts.cfg.k_filter);
    keep_if_set("--lambda", merged.lambda, opts.cfg.lambda);
    keep_if_set("--alpha", merged.alpha, opts.cfg.alpha);
    keep_if_set("--lambda-u", merged.lambda_u, opts.cfg.lambda_u);
    keep_if_set("--tau", merged.tau, opts.cfg.tau);
    keep_if_set("--temperature", merged.temperature, opts.cfg.temperature);
    keep_if_set("--memory-capacity", merged.memory_capacity, opts.cfg.memory_capacity);
    keep_if_set("--no-memory", merged.memory_enabled, opts.cfg.memory_enabled);
    keep_if_set("--baseline-theta", merged.baseline_theta, opts.cfg.baseline_theta);
    keep_if_set("--variant", merged.variant, opts.cfg.variant);
    keep_if_set("--class-arrival", merged.class_arrival, opts.cfg.class_arrival);
    keep_if_set("--hidden-dim", merged.hidden_dim, opts.cfg.hidden_dim);
    keep_if_set("--conv-channels", merged.conv_channels, opts.cfg.conv_channels);
    keep_if_set("--f-logit-gain", merged.f_logit_gain, opts.cfg.f_logit_gain);
    keep_if_set("--g-logit-gain", merged.g_logit_gain, opts.cfg.g_logit_gain);
    keep_if_set("--f-epochs", merged.f_train.epochs, opts.cfg.f_train.epochs);
    keep_if_set("--g-epochs", merged.g_train.epochs, opts.cfg.g_train.epochs);
    keep_if_set("--update-epochs", merged.update_train.epochs, opts.cfg.update_train.epochs);
    return merged;
}

void print_summary(const s2osc::RunReport& report) {
    std::printf("accuracy=%.4f precision=%.4f recall=%.4f weighted_f1=%.4f",
                report.averages.accuracy, report.averages.precision, report.averages.recall,
                report.averages.weighted_f1);
    if (report.average_f_out) std::printf(" f_out=%.4f", *report.average_f_out);
    if (report.forgetting) std::printf(" forgetting=%.4f", *report.forgetting);
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"s2osc: transductive open-set and class-incremental experiments"};
    app.require_subcommand(1);

    CliOptions osc_opts, iosc_opts, base_opts, sweep_opts;
    std::vector<int> sweep_ks = {50, 300, 2000};
    std::string plot_report, plot_out = "plots";

    CLI::App* osc = app.add_subcommand("osc", "single-pool open-set run");
    add_common_options(osc, osc_opts);

    CLI::App* iosc = app.add_subcommand("iosc", "streaming class-incremental run");
    add_common_options(iosc, iosc_opts);

    CLI::App* baseline = app.add_subcommand("baseline", "confidence-threshold baseline");
    add_common_options(baseline, base_opts);

    CLI::App* sweep = app.add_subcommand("sweep", "run osc once per K value");
    add_common_options(sweep, sweep_opts);
    sweep->add_option("--k-values", sweep_ks, "K values to sweep");

    CLI::App* plot = app.add_subcommand("plot", "render SVG charts from a report");
    plot->add_option("--report", plot_report, "report or sweep JSON file")->required();
    plot->add_option("--out-dir", plot_out, "directory for the SVG files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (osc->parsed()) {
            print_summary(s2osc::run_osc(resolve_config(osc, osc_opts)));
        } else if (iosc->parsed()) {
            print_summary(s2osc::run_iosc(resolve_config(iosc, iosc_opts)));
        } else if (baseline->parsed()) {
            print_summary(s2osc::run_baseline_threshold(resolve_config(baseline, base_opts)));
        } else if (sweep->parsed()) {
            std::cout << s2osc::run_k_sweep(resolve_config(sweep, sweep_opts), sweep_ks) << '\n';
        } else if (plot->parsed()) {
            for (const std::string& f : s2osc::emit_plots(plot_report, plot_out))
                std::cout << f << '\n';
        }
    } catch (const s2osc::Error& e) {
        nlohmann::json err;
        err["stage"] = e.stage();
        err["error"] = e.what();
        std::cerr << err.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["stage"] = "unexpected";
        err["error"] = e.what();
        std::cerr << err.dump() << '\n';
        return 1;
    }
    return 0;
}
