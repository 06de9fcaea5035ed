#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2osc/net.hpp"

namespace s2osc {

// Weighting + selection outcome: the pseudo-out-of-class set and the stored
// per-class exemplar set.
struct FilterOutcome {
    std::map<std::int64_t, double> weights;
    std::vector<std::int64_t> d_out;            // pseudo-labeled super-class
    std::map<int, std::vector<std::int64_t>> d_in;  // K exemplar ids per class
    double lambda_used = 1.0;
    std::vector<std::string> warnings;
};

// Shannon entropy with natural log; 0 ln 0 := 0.
double prediction_entropy(const std::vector<double>& probs);

// Minimum squared Euclidean distance to any class center.
double center_distance(const std::vector<double>& embedding, const ClassCenters& centers);

// w_j = entropy + lambda * min center distance, per pool instance.
std::map<std::int64_t, double> score_pool(const Network& model_f, const ClassCenters& centers,
                                          const ExampleSet& pool, double lambda);

// K largest-weight instances; ties broken by ascending instance id.
std::vector<std::int64_t> select_filtered(const std::map<std::int64_t, double>& weights, int k,
                                          std::vector<std::string>* warnings = nullptr);

// Uniform random K exemplars per class under seed.
std::map<int, std::vector<std::int64_t>> select_exemplars(const ExampleSet& train, int k,
                                                          std::uint64_t seed,
                                                          std::vector<std::string>* warnings = nullptr);

// weights elided from the JSON when the pool exceeds `weight_elide_threshold`
std::string filter_outcome_to_json(const FilterOutcome& outcome,
                                   std::size_t weight_elide_threshold = 100000);

}  // namespace s2osc
