#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2osc/dataset.hpp"

namespace s2osc {

// Network shape: each conv block is 3x3 (pad 1) + ReLU + 2x2 max-pool, then a
// ReLU hidden layer whose activations are the embedding, then a linear head.
struct Architecture {
    int in_channels = 1;
    int in_height = 0;
    int in_width = 0;
    std::vector<int> conv_channels;
    int hidden_dim = 32;
    int n_classes = 0;
    // Fixed multiplier on the head logits. Values > 1 sharpen the softmax,
    // standing in for the output scale a much deeper backbone would reach;
    // the confidence-gated losses depend on predictions actually crossing τ.
    double logit_gain = 1.0;

    int flat_dim() const;
    std::size_t param_count() const;
    bool operator==(const Architecture&) const = default;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 64;
    double learning_rate = 0.01;
    double weight_decay = 0.001;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

// Per-example activation record kept between forward_cached() and backward().
struct ForwardCache {
    const Example* input = nullptr;
    std::vector<std::vector<double>> conv_pre;  // pre-ReLU conv maps per block
    std::vector<std::vector<double>> pool_out;  // pooled maps per block
    std::vector<std::vector<int>> pool_argmax;  // winning index per pooled cell
    std::vector<double> hidden_pre;
    std::vector<double> embedding;
    std::vector<double> logits;
};

// Trainable classifier with logits, probabilities and penultimate embeddings.
class Network {
public:
    Network() = default;
    Network(const Architecture& arch, std::uint64_t init_seed);

    const Architecture& arch() const { return arch_; }
    int n_classes() const { return arch_.n_classes; }
    int embed_dim() const { return arch_.hidden_dim; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Forward pass; logits sized n_classes, embedding sized hidden_dim.
    void forward(const Example& x, std::vector<double>& logits, std::vector<double>& embedding) const;
    // Forward keeping activations for a subsequent backward().
    void forward_cached(const Example& x, ForwardCache& cache) const;
    // Accumulates dLoss/dparams into grad given dLoss/dlogits.
    void backward(const ForwardCache& cache, const std::vector<double>& dlogits,
                  std::vector<double>& grad) const;

    std::vector<double> logits(const Example& x) const;
    std::vector<double> probabilities(const Example& x) const;
    std::vector<double> embedding(const Example& x) const;

    // Returns a copy with `extra` zero-initialized rows appended to the head;
    // existing class outputs are preserved exactly.
    Network with_extended_head(int extra) const;

    void save(const std::string& path) const;
    static Network load(const std::string& path);

private:
    std::size_t param_count_before_head() const;

    Architecture arch_;
    std::vector<double> params_;
};

// SGD with Nesterov momentum; owns the velocity buffer.
class SgdOptimizer {
public:
    SgdOptimizer(std::size_t n_params, double lr, double momentum, double weight_decay)
        : velocity_(n_params, 0.0), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
    void step(std::vector<double>& params, const std::vector<double>& grad);

private:
    std::vector<double> velocity_;
    double lr_;
    double momentum_;
    double weight_decay_;
};

struct ClassCenters {
    std::map<int, std::vector<double>> centers;
    std::string source_model;
};

struct PretrainResult {
    Network model;
    std::vector<double> epoch_losses;
    // labels are remapped to contiguous head indices; index_of[class id] = row
    std::map<int, int> index_of;
    std::vector<int> class_of;  // inverse map
};

std::vector<double> softmax(const std::vector<double>& logits);

// Softmax-T: raise probabilities to the power 1/T and renormalize.
std::vector<double> softmax_T(const std::vector<double>& probs, double temperature);

// Minimizes mean cross-entropy over the training set (mini-batch SGD with
// Nesterov momentum). Labels may be any distinct ints; the head indexes them
// in sorted order.
PretrainResult pretrain_f(const ExampleSet& train, const Architecture& arch, const TrainConfig& cfg);

// Row-stochastic probability matrix, one row per example.
std::vector<std::vector<double>> predict_proba(const Network& model, const ExampleSet& batch);

ClassCenters compute_centers(const Network& model, const ExampleSet& train);

void save_centers(const std::string& path, const ClassCenters& centers);
ClassCenters load_centers(const std::string& path);

// Cross-entropy loss and logit gradient for a single head index.
double cross_entropy_loss(const std::vector<double>& logits, int target_index,
                          std::vector<double>* dlogits);

}  // namespace s2osc
