#include "s2osc/metrics.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "s2osc/error.hpp"

namespace s2osc {

ConfusionMatrix ConfusionMatrix::from_pairs(const std::vector<int>& truth,
                                            const std::vector<int>& prediction) {
    if (truth.size() != prediction.size())
        throw InputError("truth and prediction length mismatch");
    std::set<int> labels(truth.begin(), truth.end());
    labels.insert(prediction.begin(), prediction.end());
    ConfusionMatrix cm;
    cm.label_order.assign(labels.begin(), labels.end());
    std::map<int, std::size_t> index;
    for (std::size_t i = 0; i < cm.label_order.size(); ++i) index[cm.label_order[i]] = i;
    cm.counts.assign(cm.label_order.size(), std::vector<long long>(cm.label_order.size(), 0));
    for (std::size_t i = 0; i < truth.size(); ++i)
        cm.counts[index[truth[i]]][index[prediction[i]]] += 1;
    return cm;
}

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (const auto& row : counts)
        for (long long v : row) t += v;
    return t;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
    long long total = cm.total();
    if (total == 0) throw InputError("metrics are undefined on an empty confusion matrix");
    std::size_t n = cm.label_order.size();

    long long trace = 0;
    for (std::size_t i = 0; i < n; ++i) trace += cm.counts[i][i];

    ClassificationMetrics m;
    m.accuracy = static_cast<double>(trace) / static_cast<double>(total);

    double precision_sum = 0.0, recall_sum = 0.0, weighted_f1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        long long tp = cm.counts[i][i];
        long long support = 0, predicted = 0;
        for (std::size_t j = 0; j < n; ++j) {
            support += cm.counts[i][j];
            predicted += cm.counts[j][i];
        }
        double precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        double recall = support > 0 ? static_cast<double>(tp) / support : 0.0;
        double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                               : 0.0;
        precision_sum += precision;
        recall_sum += recall;
        weighted_f1 += (static_cast<double>(support) / total) * f1;
    }
    m.precision = precision_sum / static_cast<double>(n);
    m.recall = recall_sum / static_cast<double>(n);
    m.weighted_f1 = weighted_f1;
    return m;
}

std::optional<double> f_out(long long tp, long long fp, long long fn) {
    if (tp == 0 && fp == 0 && fn == 0) return std::nullopt;  // vacuous window
    long long denom = 2 * tp + fp + fn;
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double forgetting(const std::vector<double>& per_window_avg_acc, double a_star) {
    if (a_star <= 0.0) throw ParameterError("oracle accuracy must be positive");
    if (per_window_avg_acc.empty()) throw InputError("forgetting requires at least one window");
    double mean = 0.0;
    for (double a : per_window_avg_acc) mean += a;
    mean /= static_cast<double>(per_window_avg_acc.size());
    return (a_star - mean) / a_star;
}

RunReport average_over_windows(const std::vector<WindowReport>& reports) {
    if (reports.empty()) throw InputError("at least one window report required");
    RunReport run;
    run.windows = reports;
    double f_out_sum = 0.0;
    int f_out_count = 0;
    for (const WindowReport& w : reports) {
        run.averages.accuracy += w.metrics.accuracy;
        run.averages.precision += w.metrics.precision;
        run.averages.recall += w.metrics.recall;
        run.averages.weighted_f1 += w.metrics.weighted_f1;
        if (w.f_out) {
            f_out_sum += *w.f_out;
            f_out_count += 1;
        }
    }
    double n = static_cast<double>(reports.size());
    run.averages.accuracy /= n;
    run.averages.precision /= n;
    run.averages.recall /= n;
    run.averages.weighted_f1 /= n;
    if (f_out_count > 0) run.average_f_out = f_out_sum / f_out_count;
    return run;
}

namespace {

nlohmann::json metrics_to_json(const ClassificationMetrics& m) {
    return {{"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"weighted_f1", m.weighted_f1}};
}

}  // namespace

std::string run_report_to_json(const RunReport& report) {
    nlohmann::json j;
    j["averages"] = metrics_to_json(report.averages);
    if (report.average_f_out) j["average_f_out"] = *report.average_f_out;
    if (report.forgetting) j["forgetting"] = *report.forgetting;
    if (report.oracle_accuracy) j["oracle_accuracy"] = *report.oracle_accuracy;
    j["windows"] = nlohmann::json::array();
    for (const WindowReport& w : report.windows) {
        nlohmann::json jw;
        jw["window_index"] = w.window_index;
        jw["metrics"] = metrics_to_json(w.metrics);
        if (w.f_out) jw["f_out"] = *w.f_out;
        jw["n_instances"] = w.n_instances;
        if (w.pseudo_label_purity >= 0.0) jw["pseudo_label_purity"] = w.pseudo_label_purity;
        if (!w.acc_per_classset.empty()) {
            nlohmann::json accs = nlohmann::json::object();
            for (const auto& [window_j, acc] : w.acc_per_classset)
                accs[std::to_string(window_j)] = acc;
            jw["acc_per_classset"] = accs;
            jw["average_accuracy"] = w.average_accuracy;
        }
        j["windows"].push_back(jw);
    }
    return j.dump(2);
}

std::string window_reports_to_csv(const std::vector<WindowReport>& reports) {
    std::ostringstream out;
    out << "window,accuracy,precision,recall,weighted_f1,f_out\n";
    out.precision(17);
    for (const WindowReport& w : reports) {
        out << w.window_index << ',' << w.metrics.accuracy << ',' << w.metrics.precision << ','
            << w.metrics.recall << ',' << w.metrics.weighted_f1 << ',';
        if (w.f_out) out << *w.f_out;
        out << '\n';
    }
    return out.str();
}

}  // namespace s2osc
