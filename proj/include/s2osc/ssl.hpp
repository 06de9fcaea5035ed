#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "s2osc/net.hpp"

namespace s2osc {

// Label value marking the unknown super-class in labeled batches.
constexpr int kSuperClassLabel = -2;

enum class SslVariant { kMulticlass, kBinarySuperclass };

struct SslConfig {
    double alpha = 0.3;
    double lambda_u = 0.2;
    double tau = 0.85;
    double temperature = 3.0;
    TrainConfig train{.epochs = 30, .batch_size = 64, .learning_rate = 0.005,
                      .weight_decay = 0.0005, .momentum = 0.9, .seed = 0};
    SslVariant variant = SslVariant::kMulticlass;
    bool init_from_f = false;
    bool fold_labeled_into_unlabeled = false;
    // logit gain for the freshly built g (ignored when init_from_f); the
    // teacher f keeps its own gain
    double logit_gain = 1.0;
};

struct SslBatchLoss {
    double l_s = 0.0;
    double l_u = 0.0;
    double total = 0.0;
    int n_unlabeled_retained = 0;
};

// Head layout of g: rows 0..C-1 follow `index_of` (known class id -> row),
// row C is the super-class.

// L_s over a labeled batch (labels are known class ids or kSuperClassLabel).
// When `grad` is non-null the gradient w.r.t. g's parameters is accumulated.
double supervised_loss(const Network& g, const Network& f_star,
                       const std::map<int, int>& index_of, const ExampleSet& batch,
                       const SslConfig& cfg, std::vector<double>* grad = nullptr);

// L_u over an unlabeled batch; pseudo-labels come from the clean input, the
// loss is applied to the weakly augmented view. Returns (loss, retained).
std::pair<double, int> unsupervised_loss(const Network& g, const Network& f_star,
                                         const std::map<int, int>& index_of,
                                         const ExampleSet& batch, const SslConfig& cfg,
                                         std::uint64_t seed, std::vector<double>* grad = nullptr);

// Binary super-class variant: g2 has two outputs, row 0 = known super-class,
// row 1 = unknown super-class. Labeled examples carry label 0 or 1.
SslBatchLoss binary_variant_loss(const Network& g2, const Network& f_star,
                                 const ExampleSet& labeled, const ExampleSet& unlabeled,
                                 const SslConfig& cfg, std::uint64_t seed,
                                 std::vector<double>* grad = nullptr);

struct TrainGResult {
    Network g;
    std::string csv_log;  // epoch,l_s,l_u,retained_fraction,labeled_accuracy
    std::vector<std::string> warnings;
};

// Trains the C+1-way transductive classifier from scratch (or from f when
// cfg.init_from_f), mixing labeled and unlabeled batches each epoch.
TrainGResult train_g(const Network& f_star, const std::map<int, int>& index_of,
                     const ExampleSet& x_labeled, const ExampleSet& u_pool, const SslConfig& cfg);

// Binary-variant counterpart; labels in `x_labeled` must be 0 (known) or 1
// (unknown super-class).
TrainGResult train_g_binary(const Network& f_star, const ExampleSet& x_labeled,
                            const ExampleSet& u_pool, const SslConfig& cfg);

// Argmax over g's C+1 outputs; returns known class ids or kSuperClassLabel.
// Ties resolve to the lowest head row.
std::map<std::int64_t, int> classify_pool(const Network& g, const std::vector<int>& class_of,
                                          const ExampleSet& pool);

// Known-class distribution of g with the super-class logit dropped and the
// remainder renormalized (exposed for tests).
std::vector<double> renormalized_known(const std::vector<double>& g_logits, int n_known);

}  // namespace s2osc
