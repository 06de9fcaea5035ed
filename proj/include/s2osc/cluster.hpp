#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace s2osc {

struct ClusterAssignment {
    std::map<std::int64_t, int> assignments;  // instance id -> cluster in 0..B-1
    std::vector<std::vector<double>> centroids;
    int iterations_run = 0;
    std::vector<double> wcss_history;  // within-cluster sum of squares per iteration
};

// Lloyd's algorithm with k-means++ seeding. `ids` names the rows of
// `embeddings`; both must have length N >= b.
ClusterAssignment kmeans(const std::vector<std::vector<double>>& embeddings,
                         const std::vector<std::int64_t>& ids, int b, std::uint64_t seed,
                         int max_iter = 100, double tol = 1e-8);

// Optimal one-to-one cluster -> class mapping maximizing matched count
// (Hungarian algorithm on the contingency table). Clusters that cannot be
// matched map to -1.
std::map<int, int> match_clusters(const ClusterAssignment& assignment,
                                  const std::map<std::int64_t, int>& truth);

// Min-cost assignment of rows to columns; cost must be square or wide after
// padding, returns row -> column. Exposed for tests.
std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

std::string cluster_assignment_to_json(const ClusterAssignment& assignment);

}  // namespace s2osc
