#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2osc/metrics.hpp"
#include "s2osc/net.hpp"
#include "s2osc/ssl.hpp"

namespace s2osc {

struct ExperimentConfig {
    std::string images_path;
    std::string labels_path;
    std::string protocol = "osc";  // osc | iosc
    std::string output_dir = "out";

    double known_fraction = 0.5;
    int n_unknown = 1;
    double known_holdout = 0.33;
    int max_per_class = 0;  // 0 = use all instances

    int k_filter = 300;
    double lambda = 1.0;
    double alpha = 0.3;
    double lambda_u = 0.2;
    double tau = 0.85;
    double temperature = 3.0;
    int memory_capacity = 2000;
    bool memory_enabled = true;
    double baseline_theta = 0.5;

    std::string variant = "auto";        // auto | multiclass | binary
    std::string class_arrival = "single";  // single | multi
    double eval_slice_fraction = 0.2;

    std::vector<int> conv_channels = {4, 8};
    int hidden_dim = 32;
    double f_logit_gain = 1.0;
    double g_logit_gain = 1.0;

    TrainConfig f_train{.epochs = 20, .batch_size = 64, .learning_rate = 0.01,
                        .weight_decay = 0.001, .momentum = 0.9, .seed = 0};
    TrainConfig g_train{.epochs = 30, .batch_size = 64, .learning_rate = 0.005,
                        .weight_decay = 0.0005, .momentum = 0.9, .seed = 0};
    TrainConfig update_train{.epochs = 10, .batch_size = 64, .learning_rate = 0.01,
                             .weight_decay = 0.001, .momentum = 0.9, .seed = 0};

    std::uint64_t seed = 0;

    void validate() const;
};

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Full S2OSC pipeline on one test pool. Artifacts are persisted under
// cfg.output_dir (config.snapshot, splits/, checkpoints/, filters/, reports/,
// plots/).
RunReport run_osc(const ExperimentConfig& cfg);

// Streaming I-S2OSC: per-window detection, oracle labeling, incremental
// update, memory maintenance, forgetting measure.
RunReport run_iosc(const ExperimentConfig& cfg);

// Naive confidence-threshold baseline: unknown when max softmax < theta.
RunReport run_baseline_threshold(const ExperimentConfig& cfg);

// Runs run_osc once per K; writes <output_dir>/reports/sweep.json and
// returns its text.
std::string run_k_sweep(const ExperimentConfig& cfg, const std::vector<int>& k_values);

// Renders SVG plots (per-window curves, K curve when present, PCA projection
// of exported embeddings). Returns the files written.
std::vector<std::string> emit_plots(const std::string& report_json_path,
                                    const std::string& out_dir);

}  // namespace s2osc
