#include "s2osc/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "s2osc/error.hpp"

namespace s2osc {

double prediction_entropy(const std::vector<double>& probs) {
    double sum = 0.0;
    for (double p : probs) sum += p;
    if (std::abs(sum - 1.0) > 1e-4) throw InputError("entropy input is not a distribution");
    double u = 0.0;
    for (double p : probs)
        if (p > 0.0) u -= p * std::log(p);
    return u;
}

double center_distance(const std::vector<double>& embedding, const ClassCenters& centers) {
    if (centers.centers.empty()) throw StateError("no class centers available");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [label, center] : centers.centers) {
        if (center.size() != embedding.size())
            throw InputError("embedding dimension does not match centers");
        double d = 0.0;
        for (std::size_t i = 0; i < center.size(); ++i) {
            double diff = embedding[i] - center[i];
            d += diff * diff;
        }
        best = std::min(best, d);
    }
    return best;
}

std::map<std::int64_t, double> score_pool(const Network& model_f, const ClassCenters& centers,
                                          const ExampleSet& pool, double lambda) {
    if (lambda < 0.0) throw ParameterError("lambda must be nonnegative");
    std::map<std::int64_t, double> weights;
    std::vector<double> logits, embedding;
    for (const Example& e : pool) {
        model_f.forward(e, logits, embedding);
        double u = prediction_entropy(softmax(logits));
        double d = center_distance(embedding, centers);
        weights[e.instance_id] = u + lambda * d;
    }
    return weights;
}

std::vector<std::int64_t> select_filtered(const std::map<std::int64_t, double>& weights, int k,
                                          std::vector<std::string>* warnings) {
    if (k < 1) throw ParameterError("K must be at least 1");
    std::vector<std::pair<std::int64_t, double>> entries(weights.begin(), weights.end());
    // largest weight first; equal weights resolved by ascending instance id
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) {
                         if (a.second != b.second) return a.second > b.second;
                         return a.first < b.first;
                     });
    std::size_t take = static_cast<std::size_t>(k);
    if (take > entries.size()) {
        if (warnings)
            warnings->push_back("K=" + std::to_string(k) + " exceeds pool size " +
                                std::to_string(entries.size()) + "; selecting entire pool");
        take = entries.size();
    }
    std::vector<std::int64_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(entries[i].first);
    return out;
}

std::map<int, std::vector<std::int64_t>> select_exemplars(const ExampleSet& train, int k,
                                                          std::uint64_t seed,
                                                          std::vector<std::string>* warnings) {
    if (k < 1) throw ParameterError("K must be at least 1");
    std::map<int, std::vector<std::int64_t>> by_class;
    for (const Example& e : train) by_class[e.label].push_back(e.instance_id);
    std::map<int, std::vector<std::int64_t>> out;
    for (auto& [label, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        Rng rng(mix_seed(seed, 0xd11, static_cast<std::uint64_t>(label)));
        rng.shuffle(ids);
        if (ids.size() < static_cast<std::size_t>(k)) {
            if (warnings)
                warnings->push_back("class " + std::to_string(label) + " has only " +
                                    std::to_string(ids.size()) + " instances for K=" +
                                    std::to_string(k) + "; taking all");
            out[label] = ids;
        } else {
            out[label].assign(ids.begin(), ids.begin() + k);
        }
        std::sort(out[label].begin(), out[label].end());
    }
    return out;
}

std::string filter_outcome_to_json(const FilterOutcome& outcome,
                                   std::size_t weight_elide_threshold) {
    nlohmann::json j;
    j["lambda_used"] = outcome.lambda_used;
    j["d_out"] = outcome.d_out;
    nlohmann::json d_in = nlohmann::json::object();
    for (const auto& [label, ids] : outcome.d_in) d_in[std::to_string(label)] = ids;
    j["d_in"] = d_in;
    j["warnings"] = outcome.warnings;
    if (outcome.weights.size() <= weight_elide_threshold) {
        nlohmann::json w = nlohmann::json::object();
        for (const auto& [id, weight] : outcome.weights) w[std::to_string(id)] = weight;
        j["weights"] = w;
    } else {
        j["weights_elided"] = true;
    }
    return j.dump(2);
}

}  // namespace s2osc
