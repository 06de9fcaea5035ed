#include "s2osc/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "s2osc/error.hpp"
#include "s2osc/rng.hpp"

namespace s2osc {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

}  // namespace

ClusterAssignment kmeans(const std::vector<std::vector<double>>& embeddings,
                         const std::vector<std::int64_t>& ids, int b, std::uint64_t seed,
                         int max_iter, double tol) {
    std::size_t n = embeddings.size();
    if (ids.size() != n) throw InputError("ids/embeddings length mismatch");
    if (b < 1) throw ParameterError("cluster count must be at least 1");
    if (n < static_cast<std::size_t>(b))
        throw ParameterError("cannot form " + std::to_string(b) + " clusters from " +
                             std::to_string(n) + " points");

    Rng rng(mix_seed(seed, 0xc1a5));

    // k-means++ seeding
    std::vector<std::vector<double>> centroids;
    centroids.push_back(embeddings[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
    std::vector<double> min_d(n, 0.0);
    while (centroids.size() < static_cast<std::size_t>(b)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = sq_dist(embeddings[i], centroids[0]);
            for (std::size_t c = 1; c < centroids.size(); ++c)
                d = std::min(d, sq_dist(embeddings[i], centroids[c]));
            min_d[i] = d;
            total += d;
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        } else {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_d[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(embeddings[pick]);
    }

    std::vector<int> assign(n, 0);
    ClusterAssignment result;
    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment step + objective
        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < b; ++c) {
                double d = sq_dist(embeddings[i], centroids[static_cast<std::size_t>(c)]);
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            wcss += best;
        }
        result.wcss_history.push_back(wcss);
        result.iterations_run = iter + 1;

        // update step
        std::vector<std::vector<double>> next(static_cast<std::size_t>(b),
                                              std::vector<double>(embeddings[0].size(), 0.0));
        std::vector<int> counts(static_cast<std::size_t>(b), 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[static_cast<std::size_t>(assign[i])] += 1;
            for (std::size_t j = 0; j < embeddings[i].size(); ++j)
                next[static_cast<std::size_t>(assign[i])][j] += embeddings[i][j];
        }
        double shift = 0.0;
        for (int c = 0; c < b; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) continue;  // keep empty centroid in place
            for (double& v : next[static_cast<std::size_t>(c)])
                v /= counts[static_cast<std::size_t>(c)];
            shift += sq_dist(next[static_cast<std::size_t>(c)], centroids[static_cast<std::size_t>(c)]);
            centroids[static_cast<std::size_t>(c)] = next[static_cast<std::size_t>(c)];
        }
        if (shift < tol) break;
    }

    result.centroids = std::move(centroids);
    for (std::size_t i = 0; i < n; ++i) result.assignments[ids[i]] = assign[i];
    return result;
}

std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    if (cost.empty()) return {};
    int n = static_cast<int>(cost.size());
    int m = static_cast<int>(cost[0].size());
    int size = std::max(n, m);

    // pad to square
    std::vector<std::vector<double>> a(static_cast<std::size_t>(size) + 1,
                                       std::vector<double>(static_cast<std::size_t>(size) + 1, 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) a[i + 1][j + 1] = cost[i][j];

    std::vector<double> u(static_cast<std::size_t>(size) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(size) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(size) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(size) + 1, 0);

    for (int i = 1; i <= size; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(size) + 1,
                                 std::numeric_limits<double>::infinity());
        std::vector<bool> used(static_cast<std::size_t>(size) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            int i0 = match[static_cast<std::size_t>(j0)];
            double delta = std::numeric_limits<double>::infinity();
            int j1 = 0;
            for (int j = 1; j <= size; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = a[i0][j] - u[i0] - v[j];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= size; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[match[static_cast<std::size_t>(j)]] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= size; ++j) {
        int i = match[static_cast<std::size_t>(j)];
        if (i >= 1 && i <= n && j <= m) row_to_col[static_cast<std::size_t>(i - 1)] = j - 1;
    }
    return row_to_col;
}

std::map<int, int> match_clusters(const ClusterAssignment& assignment,
                                  const std::map<std::int64_t, int>& truth) {
    int n_clusters = static_cast<int>(assignment.centroids.size());
    std::set<int> class_set;
    for (const auto& [id, cluster] : assignment.assignments) {
        auto it = truth.find(id);
        if (it == truth.end())
            throw InputError("truth does not cover clustered instance " + std::to_string(id));
        class_set.insert(it->second);
    }
    std::vector<int> classes(class_set.begin(), class_set.end());

    // contingency counts; Hungarian minimizes, so negate
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(n_clusters),
                                          std::vector<double>(classes.size(), 0.0));
    for (const auto& [id, cluster] : assignment.assignments) {
        int cls = truth.at(id);
        std::size_t col = static_cast<std::size_t>(
            std::lower_bound(classes.begin(), classes.end(), cls) - classes.begin());
        cost[static_cast<std::size_t>(cluster)][col] -= 1.0;
    }

    std::vector<int> row_to_col = hungarian_min_cost(cost);
    std::map<int, int> mapping;
    for (int c = 0; c < n_clusters; ++c) {
        int col = row_to_col[static_cast<std::size_t>(c)];
        mapping[c] = (col >= 0 && col < static_cast<int>(classes.size()))
                         ? classes[static_cast<std::size_t>(col)]
                         : -1;
    }
    return mapping;
}

std::string cluster_assignment_to_json(const ClusterAssignment& assignment) {
    nlohmann::json j;
    nlohmann::json a = nlohmann::json::object();
    for (const auto& [id, cluster] : assignment.assignments) a[std::to_string(id)] = cluster;
    j["assignments"] = a;
    j["centroids"] = assignment.centroids;
    j["iterations_run"] = assignment.iterations_run;
    return j.dump(2);
}

}  // namespace s2osc
