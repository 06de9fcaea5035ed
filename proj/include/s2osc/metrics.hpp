#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace s2osc {

struct ConfusionMatrix {
    std::vector<int> label_order;           // class ids, row/column order
    std::vector<std::vector<long long>> counts;  // counts[truth][prediction]

    static ConfusionMatrix from_pairs(const std::vector<int>& truth,
                                      const std::vector<int>& prediction);
    long long total() const;
};

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double weighted_f1 = 0.0;
};

struct WindowReport {
    int window_index = 0;
    ClassificationMetrics metrics;
    std::optional<double> f_out;
    std::map<int, double> acc_per_classset;  // window j -> acc_{k,j}
    double average_accuracy = 0.0;           // A_k
    double pseudo_label_purity = -1.0;       // fraction of true out-of-class in d_out
    long long n_instances = 0;
};

struct RunReport {
    std::vector<WindowReport> windows;
    ClassificationMetrics averages;
    std::optional<double> average_f_out;
    std::optional<double> forgetting;
    std::optional<double> oracle_accuracy;  // A*
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

// F1 of the unknown-vs-known binary task, unknown as positive.
// tp/fp/fn all zero means no unknown data existed in the window -> nullopt.
std::optional<double> f_out(long long tp, long long fp, long long fn);

// (A* - mean(A)) / A*
double forgetting(const std::vector<double>& per_window_avg_acc, double a_star);

RunReport average_over_windows(const std::vector<WindowReport>& reports);

std::string run_report_to_json(const RunReport& report);
std::string window_reports_to_csv(const std::vector<WindowReport>& reports);

}  // namespace s2osc
