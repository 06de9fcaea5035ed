#include "s2osc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "s2osc/cluster.hpp"
#include "s2osc/dataset.hpp"
#include "s2osc/error.hpp"
#include "s2osc/filter.hpp"
#include "s2osc/incremental.hpp"
#include "s2osc/rng.hpp"

namespace fs = std::filesystem;

namespace s2osc {

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExampleSet subsample_per_class(const ExampleSet& data, int max_per_class, std::uint64_t seed) {
    if (max_per_class <= 0) return data;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
    ExampleSet out;
    for (auto& [label, idx] : by_class) {
        Rng rng(mix_seed(seed, 0x5b, static_cast<std::uint64_t>(label)));
        rng.shuffle(idx);
        std::size_t take = std::min(idx.size(), static_cast<std::size_t>(max_per_class));
        for (std::size_t i = 0; i < take; ++i) out.push_back(data[idx[i]]);
    }
    std::sort(out.begin(), out.end(),
              [](const Example& a, const Example& b) { return a.instance_id < b.instance_id; });
    return out;
}

std::string split_to_json(const OscSplit& split) {
    nlohmann::json j;
    std::vector<std::int64_t> train_ids, test_ids;
    for (const Example& e : split.train) train_ids.push_back(e.instance_id);
    for (const Example& e : split.test_pool) test_ids.push_back(e.instance_id);
    j["train_ids"] = train_ids;
    j["test_ids"] = test_ids;
    j["known_classes"] = std::vector<int>(split.known_classes.begin(), split.known_classes.end());
    j["unknown_classes"] =
        std::vector<int>(split.unknown_classes.begin(), split.unknown_classes.end());
    return j.dump(2);
}

Architecture make_arch(const ExperimentConfig& cfg, const Example& sample) {
    Architecture arch;
    arch.in_channels = sample.channels;
    arch.in_height = sample.height;
    arch.in_width = sample.width;
    arch.conv_channels = cfg.conv_channels;
    arch.hidden_dim = cfg.hidden_dim;
    arch.logit_gain = cfg.f_logit_gain;
    return arch;
}

SslConfig make_ssl_config(const ExperimentConfig& cfg, bool binary) {
    SslConfig ssl;
    ssl.alpha = cfg.alpha;
    ssl.lambda_u = cfg.lambda_u;
    ssl.tau = cfg.tau;
    ssl.temperature = cfg.temperature;
    ssl.train = cfg.g_train;
    ssl.train.seed = mix_seed(cfg.seed, 0x6, 0);
    ssl.variant = binary ? SslVariant::kBinarySuperclass : SslVariant::kMulticlass;
    ssl.fold_labeled_into_unlabeled = binary;
    ssl.logit_gain = cfg.g_logit_gain;
    return ssl;
}

// Scores one pool: known-class predictions pass through, super-class
// predictions are subdivided by k-means on `embed_net` embeddings and mapped
// to truth classes with the Hungarian matcher (scoring only).
WindowReport score_predictions(const ExampleSet& pool,
                               const std::map<std::int64_t, int>& predictions,
                               const std::set<int>& unknown_truth, int n_clusters,
                               const Network& embed_net, std::uint64_t seed, int window_index) {
    std::vector<std::int64_t> novel_ids;
    std::map<std::int64_t, const Example*> by_id;
    for (const Example& e : pool) by_id[e.instance_id] = &e;
    for (const auto& [id, pred] : predictions)
        if (pred == kSuperClassLabel) novel_ids.push_back(id);

    std::map<std::int64_t, int> resolved;  // C' instances -> concrete class id
    if (!novel_ids.empty()) {
        int b = std::min<int>(n_clusters, static_cast<int>(novel_ids.size()));
        std::vector<std::vector<double>> embeddings;
        embeddings.reserve(novel_ids.size());
        for (std::int64_t id : novel_ids) embeddings.push_back(embed_net.embedding(*by_id.at(id)));
        ClusterAssignment clusters = kmeans(embeddings, novel_ids, b, mix_seed(seed, 0x53));
        std::map<std::int64_t, int> truth;
        for (std::int64_t id : novel_ids) truth[id] = by_id.at(id)->label;
        std::map<int, int> mapping = match_clusters(clusters, truth);
        for (std::int64_t id : novel_ids) resolved[id] = mapping.at(clusters.assignments.at(id));
    }

    std::vector<int> truth_vec, pred_vec;
    long long tp = 0, fp = 0, fn = 0;
    for (const Example& e : pool) {
        auto it = predictions.find(e.instance_id);
        if (it == predictions.end()) throw StateError("pool instance without prediction");
        int pred = it->second == kSuperClassLabel ? resolved.at(e.instance_id) : it->second;
        truth_vec.push_back(e.label);
        pred_vec.push_back(pred);
        bool truth_unknown = unknown_truth.count(e.label) > 0;
        bool pred_unknown = it->second == kSuperClassLabel;
        if (truth_unknown && pred_unknown) tp += 1;
        if (!truth_unknown && pred_unknown) fp += 1;
        if (truth_unknown && !pred_unknown) fn += 1;
    }

    WindowReport report;
    report.window_index = window_index;
    report.metrics = classification_metrics(ConfusionMatrix::from_pairs(truth_vec, pred_vec));
    report.f_out = f_out(tp, fp, fn);
    report.n_instances = static_cast<long long>(pool.size());
    return report;
}

void export_embeddings_tsv(const std::string& path, const Network& net, const ExampleSet& pool,
                           const std::map<std::int64_t, int>& predictions) {
    std::ostringstream out;
    out.precision(10);
    out << "instance_id\ttruth\tprediction";
    for (int i = 0; i < net.embed_dim(); ++i) out << "\te" << i;
    out << '\n';
    for (const Example& e : pool) {
        std::vector<double> emb = net.embedding(e);
        auto it = predictions.find(e.instance_id);
        out << e.instance_id << '\t' << e.label << '\t'
            << (it == predictions.end() ? kAbsentLabel : it->second);
        for (double v : emb) out << '\t' << v;
        out << '\n';
    }
    write_text(path, out.str());
}

struct RunDirs {
    std::string root, splits, checkpoints, filters, reports, plots;
};

RunDirs prepare_dirs(const ExperimentConfig& cfg) {
    RunDirs d;
    d.root = cfg.output_dir;
    d.splits = cfg.output_dir + "/splits";
    d.checkpoints = cfg.output_dir + "/checkpoints";
    d.filters = cfg.output_dir + "/filters";
    d.reports = cfg.output_dir + "/reports";
    d.plots = cfg.output_dir + "/plots";
    for (const std::string& p : {d.root, d.splits, d.checkpoints, d.filters, d.reports, d.plots})
        fs::create_directories(p);
    write_text(d.root + "/config.snapshot", serialize_config(cfg));
    return d;
}

ExampleSet examples_by_ids(const ExampleSet& source, const std::vector<std::int64_t>& ids) {
    std::map<std::int64_t, const Example*> by_id;
    for (const Example& e : source) by_id[e.instance_id] = &e;
    ExampleSet out;
    for (std::int64_t id : ids) out.push_back(*by_id.at(id));
    return out;
}

double purity_of(const std::vector<std::int64_t>& d_out, const ExampleSet& pool,
                 const std::set<int>& unknown) {
    if (d_out.empty()) return 0.0;
    std::map<std::int64_t, int> truth;
    for (const Example& e : pool) truth[e.instance_id] = e.label;
    long long hits = 0;
    for (std::int64_t id : d_out)
        if (unknown.count(truth.at(id))) hits += 1;
    return static_cast<double>(hits) / static_cast<double>(d_out.size());
}

// detection on one pool with a given teacher model and per-class data store;
// returns predictions and persists filter artifacts
struct DetectionResult {
    std::map<std::int64_t, int> predictions;
    Network g;
    FilterOutcome filter;
    std::string train_log;
};

DetectionResult detect_pool(const ExperimentConfig& cfg, const Network& f_model,
                            const std::map<int, int>& index_of, const std::vector<int>& class_of,
                            const ExampleSet& class_store, const ExampleSet& pool, bool binary,
                            std::uint64_t seed) {
    ClassCenters centers = compute_centers(f_model, class_store);
    DetectionResult result;
    result.filter.lambda_used = cfg.lambda;
    result.filter.weights = score_pool(f_model, centers, pool, cfg.lambda);
    result.filter.d_out =
        select_filtered(result.filter.weights, cfg.k_filter, &result.filter.warnings);
    result.filter.d_in =
        select_exemplars(class_store, cfg.k_filter, mix_seed(seed, 0xd1), &result.filter.warnings);

    std::set<std::int64_t> d_out_set(result.filter.d_out.begin(), result.filter.d_out.end());
    ExampleSet unlabeled;
    for (const Example& e : pool)
        if (!d_out_set.count(e.instance_id)) {
            Example u = e;
            u.label = kAbsentLabel;
            unlabeled.push_back(std::move(u));
        }

    SslConfig ssl = make_ssl_config(cfg, binary);
    std::map<std::int64_t, const Example*> store_by_id;
    for (const Example& e : class_store) store_by_id[e.instance_id] = &e;

    if (binary) {
        ExampleSet labeled;
        for (std::int64_t id : result.filter.d_out) {
            Example e = *std::find_if(pool.begin(), pool.end(),
                                      [id](const Example& p) { return p.instance_id == id; });
            e.label = 1;
            labeled.push_back(std::move(e));
        }
        // K known examples total, for balance with |d_out|
        std::vector<std::int64_t> known_ids;
        for (const auto& [label, ids] : result.filter.d_in)
            known_ids.insert(known_ids.end(), ids.begin(), ids.end());
        Rng rng(mix_seed(seed, 0xba1));
        rng.shuffle(known_ids);
        std::size_t take = std::min(known_ids.size(), static_cast<std::size_t>(cfg.k_filter));
        for (std::size_t i = 0; i < take; ++i) {
            Example e = *store_by_id.at(known_ids[i]);
            e.label = 0;
            labeled.push_back(std::move(e));
        }
        TrainGResult tg = train_g_binary(f_model, labeled, unlabeled, ssl);
        result.train_log = tg.csv_log;
        // known predictions are subdivided by the teacher
        for (const Example& e : pool) {
            std::vector<double> p = tg.g.probabilities(e);
            if (p[1] > p[0]) {
                result.predictions[e.instance_id] = kSuperClassLabel;
            } else {
                std::vector<double> pf = f_model.probabilities(e);
                int best = 0;
                for (std::size_t i = 1; i < pf.size(); ++i)
                    if (pf[i] > pf[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
                result.predictions[e.instance_id] = class_of[static_cast<std::size_t>(best)];
            }
        }
        result.g = std::move(tg.g);
    } else {
        ExampleSet labeled;
        for (const auto& [label, ids] : result.filter.d_in)
            for (std::int64_t id : ids) labeled.push_back(*store_by_id.at(id));
        std::map<std::int64_t, const Example*> pool_by_id;
        for (const Example& e : pool) pool_by_id[e.instance_id] = &e;
        for (std::int64_t id : result.filter.d_out) {
            Example e = *pool_by_id.at(id);
            e.label = kSuperClassLabel;
            labeled.push_back(std::move(e));
        }
        TrainGResult tg = train_g(f_model, index_of, labeled, unlabeled, ssl);
        result.train_log = tg.csv_log;
        result.predictions = classify_pool(tg.g, class_of, pool);
        result.g = std::move(tg.g);
    }
    return result;
}

RunReport finalize_single_window(const RunDirs& dirs, WindowReport window) {
    RunReport run = average_over_windows({std::move(window)});
    write_text(dirs.reports + "/report.json", run_report_to_json(run));
    write_text(dirs.reports + "/windows.csv", window_reports_to_csv(run.windows));
    return run;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (images_path.empty() || labels_path.empty())
        throw Error("config", "dataset paths are required");
    if (!fs::exists(images_path)) throw Error("config", "missing dataset file: " + images_path);
    if (!fs::exists(labels_path)) throw Error("config", "missing dataset file: " + labels_path);
    if (protocol != "osc" && protocol != "iosc") throw Error("config", "protocol must be osc|iosc");
    if (n_unknown < 1) throw Error("config", "n_unknown must be >= 1");
    if (known_holdout <= 0.0 || known_holdout >= 1.0)
        throw Error("config", "known_holdout must lie in (0,1)");
    if (k_filter < 1) throw Error("config", "k_filter must be >= 1");
    if (lambda < 0.0 || alpha < 0.0 || lambda_u < 0.0)
        throw Error("config", "lambda, alpha and lambda_u must be nonnegative");
    if (tau <= 0.0 || tau >= 1.0) throw Error("config", "tau must lie in (0,1)");
    if (temperature <= 0.0) throw Error("config", "temperature must be positive");
    if (memory_capacity < 1) throw Error("config", "memory capacity must be >= 1");
    if (f_logit_gain <= 0.0 || g_logit_gain <= 0.0)
        throw Error("config", "logit gains must be positive");
    if (variant != "auto" && variant != "multiclass" && variant != "binary")
        throw Error("config", "variant must be auto|multiclass|binary");
    if (class_arrival != "single" && class_arrival != "multi")
        throw Error("config", "class_arrival must be single|multi");
    for (const TrainConfig* t : {&f_train, &g_train, &update_train})
        if (t->epochs < 1 || t->batch_size < 1 || t->learning_rate <= 0.0 ||
            t->weight_decay < 0.0 || t->momentum < 0.0 || t->momentum >= 1.0)
            throw Error("config", "invalid training hyperparameters");
}

RunReport run_osc(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.protocol = "osc";
    c.validate();
    RunDirs dirs = prepare_dirs(c);

    ExampleSet dataset = load_idx_dataset(c.images_path, c.labels_path);
    dataset = subsample_per_class(dataset, c.max_per_class, mix_seed(c.seed, 0x5a));
    OscSplit split =
        make_osc_split(dataset, c.known_fraction, c.n_unknown, c.known_holdout, c.seed);
    write_text(dirs.splits + "/split.json", split_to_json(split));

    TrainConfig f_cfg = c.f_train;
    f_cfg.seed = mix_seed(c.seed, 0xf);
    PretrainResult pre = pretrain_f(split.train, make_arch(c, split.train[0]), f_cfg);
    pre.model.save(dirs.checkpoints + "/f.ckpt");
    save_centers(dirs.checkpoints + "/centers.bin",
                 compute_centers(pre.model, split.train));

    bool binary = c.variant == "binary" || (c.variant == "auto" && c.n_unknown > 1);
    DetectionResult det = detect_pool(c, pre.model, pre.index_of, pre.class_of, split.train,
                                      split.test_pool, binary, c.seed);
    write_text(dirs.filters + "/filter.json", filter_outcome_to_json(det.filter));
    write_text(dirs.reports + "/g_training_log.csv", det.train_log);
    det.g.save(dirs.checkpoints + "/g.ckpt");

    WindowReport window =
        score_predictions(split.test_pool, det.predictions, split.unknown_classes, c.n_unknown,
                          det.g, mix_seed(c.seed, 0xc), 0);
    window.pseudo_label_purity = purity_of(det.filter.d_out, split.test_pool, split.unknown_classes);

    export_embeddings_tsv(dirs.plots + "/embeddings.tsv", det.g, split.test_pool, det.predictions);
    return finalize_single_window(dirs, std::move(window));
}

RunReport run_baseline_threshold(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.protocol = "osc";
    c.validate();
    RunDirs dirs = prepare_dirs(c);

    ExampleSet dataset = load_idx_dataset(c.images_path, c.labels_path);
    dataset = subsample_per_class(dataset, c.max_per_class, mix_seed(c.seed, 0x5a));
    OscSplit split =
        make_osc_split(dataset, c.known_fraction, c.n_unknown, c.known_holdout, c.seed);
    write_text(dirs.splits + "/split.json", split_to_json(split));

    TrainConfig f_cfg = c.f_train;
    f_cfg.seed = mix_seed(c.seed, 0xf);
    PretrainResult pre = pretrain_f(split.train, make_arch(c, split.train[0]), f_cfg);
    pre.model.save(dirs.checkpoints + "/f.ckpt");

    std::map<std::int64_t, int> predictions;
    for (const Example& e : split.test_pool) {
        std::vector<double> p = pre.model.probabilities(e);
        int best = 0;
        for (std::size_t i = 1; i < p.size(); ++i)
            if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
        predictions[e.instance_id] = p[static_cast<std::size_t>(best)] < c.baseline_theta
                                         ? kSuperClassLabel
                                         : pre.class_of[static_cast<std::size_t>(best)];
    }

    WindowReport window =
        score_predictions(split.test_pool, predictions, split.unknown_classes, c.n_unknown,
                          pre.model, mix_seed(c.seed, 0xc), 0);
    export_embeddings_tsv(dirs.plots + "/embeddings.tsv", pre.model, split.test_pool, predictions);
    return finalize_single_window(dirs, std::move(window));
}

RunReport run_iosc(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.protocol = "iosc";
    c.validate();
    RunDirs dirs = prepare_dirs(c);

    ExampleSet dataset = load_idx_dataset(c.images_path, c.labels_path);
    dataset = subsample_per_class(dataset, c.max_per_class, mix_seed(c.seed, 0x5a));
    OscSplit split =
        make_osc_split(dataset, c.known_fraction, c.n_unknown, c.known_holdout, c.seed);
    write_text(dirs.splits + "/split.json", split_to_json(split));

    ClassArrival arrival =
        c.class_arrival == "multi" ? ClassArrival::kMulti : ClassArrival::kSingle;
    StreamSchedule schedule = build_stream(split, arrival, c.seed);
    write_text(dirs.splits + "/schedule.json", stream_schedule_to_json(schedule));

    TrainConfig f_cfg = c.f_train;
    f_cfg.seed = mix_seed(c.seed, 0xf);
    PretrainResult pre = pretrain_f(split.train, make_arch(c, split.train[0]), f_cfg);
    pre.model.save(dirs.checkpoints + "/f_window0.ckpt");

    IncrementalModel model{std::move(pre.model), pre.index_of, pre.class_of};

    MemoryBuffer memory;
    memory.capacity = static_cast<std::size_t>(c.memory_capacity);
    memory = update_memory(memory, split.train, mix_seed(c.seed, 0x3e));

    // frozen evaluation slices for the forgetting measure; slice 0 comes from
    // the initial training classes
    std::map<int, ExampleSet> slices;
    {
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < split.train.size(); ++i)
            by_class[split.train[i].label].push_back(i);
        for (auto& [label, idx] : by_class) {
            Rng rng(mix_seed(c.seed, 0x51c, static_cast<std::uint64_t>(label)));
            rng.shuffle(idx);
            std::size_t take =
                std::max<std::size_t>(1, static_cast<std::size_t>(idx.size() * c.eval_slice_fraction));
            for (std::size_t i = 0; i < take; ++i) slices[0].push_back(split.train[idx[i]]);
        }
    }

    auto slice_accuracy = [](const Network& net, const std::vector<int>& class_of,
                             const ExampleSet& slice) {
        long long correct = 0;
        for (const Example& e : slice) {
            std::vector<double> p = net.probabilities(e);
            int best = 0;
            for (std::size_t i = 1; i < p.size(); ++i)
                if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
            if (class_of[static_cast<std::size_t>(best)] == e.label) correct += 1;
        }
        return slice.empty() ? 0.0
                             : static_cast<double>(correct) / static_cast<double>(slice.size());
    };

    std::map<std::int64_t, const Example*> pool_by_id;
    for (const Example& e : split.test_pool) pool_by_id[e.instance_id] = &e;

    ExampleSet all_revealed = split.train;  // grows with each oracle query
    std::vector<WindowReport> windows;
    std::vector<double> avg_accs;

    for (const StreamWindow& win : schedule.windows) {
        ExampleSet pool;
        for (std::int64_t id : win.instance_ids) pool.push_back(*pool_by_id.at(id));

        std::set<int> unknown_truth;
        for (const Example& e : pool)
            if (!model.index_of.count(e.label)) unknown_truth.insert(e.label);

        bool binary = c.variant == "binary" ||
                      (c.variant == "auto" && win.novel_class_ids.size() > 1);
        ExampleSet class_store = memory.all_examples();
        DetectionResult det =
            detect_pool(c, model.net, model.index_of, model.class_of, class_store, pool, binary,
                        mix_seed(c.seed, 0xd0, static_cast<std::uint64_t>(win.window_index)));
        write_text(dirs.filters + "/filter_window" + std::to_string(win.window_index) + ".json",
                   filter_outcome_to_json(det.filter));

        WindowReport report = score_predictions(
            pool, det.predictions, unknown_truth,
            std::max<int>(1, static_cast<int>(win.novel_class_ids.size())), det.g,
            mix_seed(c.seed, 0xc, static_cast<std::uint64_t>(win.window_index)), win.window_index);
        report.pseudo_label_purity = purity_of(det.filter.d_out, pool, unknown_truth);

        // oracle labeling of detected out-of-class instances
        ExampleSet oracle = label_oracle(det.predictions, pool);
        for (const Example& e : oracle) all_revealed.push_back(e);

        // reserve a frozen evaluation slice per novel class
        std::map<int, ExampleSet> novel_by_class;
        for (const Example& e : oracle)
            if (!model.index_of.count(e.label)) novel_by_class[e.label].push_back(e);
        std::set<std::int64_t> slice_ids;
        for (auto& [label, examples] : novel_by_class) {
            std::vector<std::size_t> idx(examples.size());
            std::iota(idx.begin(), idx.end(), 0);
            Rng rng(mix_seed(c.seed, 0x51c, static_cast<std::uint64_t>(label)));
            rng.shuffle(idx);
            std::size_t take = std::max<std::size_t>(
                1, static_cast<std::size_t>(examples.size() * c.eval_slice_fraction));
            for (std::size_t i = 0; i < take && i < idx.size(); ++i) {
                slices[win.window_index].push_back(examples[idx[i]]);
                slice_ids.insert(examples[idx[i]].instance_id);
            }
        }

        UpdatePacket packet;
        packet.window_index = win.window_index;
        for (const Example& e : oracle)
            if (!slice_ids.count(e.instance_id)) packet.newly_labeled.push_back(e);

        MemoryBuffer update_view;  // empty when replay is disabled
        update_view.capacity = memory.capacity;
        if (c.memory_enabled) update_view = memory;
        packet.q_targets = capture_q_targets(model.net, update_view);

        if (!packet.newly_labeled.empty()) {
            TrainConfig u_cfg = c.update_train;
            u_cfg.seed = mix_seed(c.seed, 0x4d, static_cast<std::uint64_t>(win.window_index));
            model = incremental_update(model, update_view, packet, u_cfg);
            model.net.save(dirs.checkpoints + "/f_window" + std::to_string(win.window_index) +
                           ".ckpt");
        }

        // memory admits only truly novel classes, slices stay held out
        ExampleSet novel_for_memory;
        for (const auto& [label, examples] : novel_by_class)
            for (const Example& e : examples)
                if (!slice_ids.count(e.instance_id)) novel_for_memory.push_back(e);
        if (!novel_for_memory.empty())
            memory = update_memory(memory, novel_for_memory,
                                   mix_seed(c.seed, 0x7e, static_cast<std::uint64_t>(win.window_index)));
        write_text(dirs.splits + "/memory_window" + std::to_string(win.window_index) + ".json",
                   memory.manifest_json());

        double acc_sum = 0.0;
        int n_slices = 0;
        for (const auto& [j, slice] : slices) {
            if (j > win.window_index) continue;
            double acc = slice_accuracy(model.net, model.class_of, slice);
            report.acc_per_classset[j] = acc;
            acc_sum += acc;
            n_slices += 1;
        }
        report.average_accuracy = n_slices > 0 ? acc_sum / n_slices : 0.0;
        avg_accs.push_back(report.average_accuracy);
        windows.push_back(std::move(report));
    }

    RunReport run = average_over_windows(windows);

    // oracle reference A*: joint training on everything revealed
    {
        TrainConfig joint_cfg = c.f_train;
        joint_cfg.seed = mix_seed(c.seed, 0xa5);
        std::set<std::int64_t> held_out;
        for (const auto& [j, slice] : slices)
            for (const Example& e : slice) held_out.insert(e.instance_id);
        ExampleSet joint_train;
        for (const Example& e : all_revealed)
            if (!held_out.count(e.instance_id)) joint_train.push_back(e);
        PretrainResult joint = pretrain_f(joint_train, make_arch(c, joint_train[0]), joint_cfg);
        double acc_sum = 0.0;
        for (const auto& [j, slice] : slices)
            acc_sum += slice_accuracy(joint.model, joint.class_of, slice);
        double a_star = acc_sum / static_cast<double>(slices.size());
        run.oracle_accuracy = a_star;
        if (a_star > 0.0) run.forgetting = forgetting(avg_accs, a_star);
    }

    write_text(dirs.reports + "/report.json", run_report_to_json(run));
    write_text(dirs.reports + "/windows.csv", window_reports_to_csv(run.windows));
    return run;
}

std::string run_k_sweep(const ExperimentConfig& cfg, const std::vector<int>& k_values) {
    nlohmann::json sweep = nlohmann::json::array();
    for (int k : k_values) {
        ExperimentConfig c = cfg;
        c.k_filter = k;
        c.output_dir = cfg.output_dir + "/k" + std::to_string(k);
        RunReport report = run_osc(c);
        nlohmann::json entry;
        entry["k"] = k;
        entry["accuracy"] = report.averages.accuracy;
        entry["precision"] = report.averages.precision;
        entry["recall"] = report.averages.recall;
        entry["weighted_f1"] = report.averages.weighted_f1;
        if (report.average_f_out) entry["f_out"] = *report.average_f_out;
        sweep.push_back(entry);
    }
    nlohmann::json j;
    j["k_sweep"] = sweep;
    std::string text = j.dump(2);
    fs::create_directories(cfg.output_dir + "/reports");
    write_text(cfg.output_dir + "/reports/sweep.json", text);
    return text;
}

// ---------------------------------------------------------------------------
// config serialization: flat key = value lines

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "images_path = " << cfg.images_path << '\n';
    out << "labels_path = " << cfg.labels_path << '\n';
    out << "protocol = " << cfg.protocol << '\n';
    out << "output_dir = " << cfg.output_dir << '\n';
    out << "known_fraction = " << cfg.known_fraction << '\n';
    out << "n_unknown = " << cfg.n_unknown << '\n';
    out << "known_holdout = " << cfg.known_holdout << '\n';
    out << "max_per_class = " << cfg.max_per_class << '\n';
    out << "k_filter = " << cfg.k_filter << '\n';
    out << "lambda = " << cfg.lambda << '\n';
    out << "alpha = " << cfg.alpha << '\n';
    out << "lambda_u = " << cfg.lambda_u << '\n';
    out << "tau = " << cfg.tau << '\n';
    out << "temperature = " << cfg.temperature << '\n';
    out << "memory_capacity = " << cfg.memory_capacity << '\n';
    out << "memory_enabled = " << (cfg.memory_enabled ? "true" : "false") << '\n';
    out << "baseline_theta = " << cfg.baseline_theta << '\n';
    out << "variant = " << cfg.variant << '\n';
    out << "class_arrival = " << cfg.class_arrival << '\n';
    out << "eval_slice_fraction = " << cfg.eval_slice_fraction << '\n';
    out << "conv_channels = ";
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i)
        out << (i ? "," : "") << cfg.conv_channels[i];
    out << '\n';
    out << "hidden_dim = " << cfg.hidden_dim << '\n';
    out << "f_logit_gain = " << cfg.f_logit_gain << '\n';
    out << "g_logit_gain = " << cfg.g_logit_gain << '\n';
    auto train = [&](const std::string& prefix, const TrainConfig& t) {
        out << prefix << "_epochs = " << t.epochs << '\n';
        out << prefix << "_batch_size = " << t.batch_size << '\n';
        out << prefix << "_learning_rate = " << t.learning_rate << '\n';
        out << prefix << "_weight_decay = " << t.weight_decay << '\n';
        out << prefix << "_momentum = " << t.momentum << '\n';
    };
    train("f", cfg.f_train);
    train("g", cfg.g_train);
    train("update", cfg.update_train);
    out << "seed = " << cfg.seed << '\n';
    return out.str();
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no += 1;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            std::size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            std::size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config", "malformed config line " + std::to_string(line_no));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        // strip optional quotes
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);

        auto as_double = [&] { return std::stod(value); };
        auto as_int = [&] { return std::stoi(value); };
        auto as_bool = [&] { return value == "true" || value == "1"; };

        if (key == "images_path") cfg.images_path = value;
        else if (key == "labels_path") cfg.labels_path = value;
        else if (key == "protocol") cfg.protocol = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else if (key == "known_fraction") cfg.known_fraction = as_double();
        else if (key == "n_unknown") cfg.n_unknown = as_int();
        else if (key == "known_holdout") cfg.known_holdout = as_double();
        else if (key == "max_per_class") cfg.max_per_class = as_int();
        else if (key == "k_filter") cfg.k_filter = as_int();
        else if (key == "lambda") cfg.lambda = as_double();
        else if (key == "alpha") cfg.alpha = as_double();
        else if (key == "lambda_u") cfg.lambda_u = as_double();
        else if (key == "tau") cfg.tau = as_double();
        else if (key == "temperature") cfg.temperature = as_double();
        else if (key == "memory_capacity") cfg.memory_capacity = as_int();
        else if (key == "memory_enabled") cfg.memory_enabled = as_bool();
        else if (key == "baseline_theta") cfg.baseline_theta = as_double();
        else if (key == "variant") cfg.variant = value;
        else if (key == "class_arrival") cfg.class_arrival = value;
        else if (key == "eval_slice_fraction") cfg.eval_slice_fraction = as_double();
        else if (key == "hidden_dim") cfg.hidden_dim = as_int();
        else if (key == "f_logit_gain") cfg.f_logit_gain = as_double();
        else if (key == "g_logit_gain") cfg.g_logit_gain = as_double();
        else if (key == "conv_channels") {
            cfg.conv_channels.clear();
            std::istringstream cs(value);
            std::string item;
            while (std::getline(cs, item, ','))
                if (!item.empty()) cfg.conv_channels.push_back(std::stoi(item));
        } else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "f_epochs") cfg.f_train.epochs = as_int();
        else if (key == "f_batch_size") cfg.f_train.batch_size = as_int();
        else if (key == "f_learning_rate") cfg.f_train.learning_rate = as_double();
        else if (key == "f_weight_decay") cfg.f_train.weight_decay = as_double();
        else if (key == "f_momentum") cfg.f_train.momentum = as_double();
        else if (key == "g_epochs") cfg.g_train.epochs = as_int();
        else if (key == "g_batch_size") cfg.g_train.batch_size = as_int();
        else if (key == "g_learning_rate") cfg.g_train.learning_rate = as_double();
        else if (key == "g_weight_decay") cfg.g_train.weight_decay = as_double();
        else if (key == "g_momentum") cfg.g_train.momentum = as_double();
        else if (key == "update_epochs") cfg.update_train.epochs = as_int();
        else if (key == "update_batch_size") cfg.update_train.batch_size = as_int();
        else if (key == "update_learning_rate") cfg.update_train.learning_rate = as_double();
        else if (key == "update_weight_decay") cfg.update_train.weight_decay = as_double();
        else if (key == "update_momentum") cfg.update_train.momentum = as_double();
        else throw Error("config", "unknown config key: " + key);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    return parse_config(read_text(path));
}

// ---------------------------------------------------------------------------
// plotting: self-contained SVG output

namespace {

std::string svg_line_chart(const std::string& title,
                           const std::vector<double>& xs,
                           const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    constexpr int width = 640, height = 420, margin = 60;
    const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};

    double x_min = xs.front(), x_max = xs.back();
    if (x_max == x_min) x_max = x_min + 1.0;
    double y_min = 0.0, y_max = 1.0;
    for (const auto& [name, ys] : series)
        for (double y : ys) {
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (y_max == y_min) y_max = y_min + 1.0;

    auto px = [&](double x) {
        return margin + (x - x_min) / (x_max - x_min) * (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin);
    };

    std::ostringstream svg;
    svg.precision(6);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n";
    svg << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
        << "' y2='" << height - margin << "' stroke='black'/>\n";
    svg << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
        << height - margin << "' stroke='black'/>\n";
    int color = 0;
    for (const auto& [name, ys] : series) {
        svg << "<polyline fill='none' stroke='" << palette[color % 5] << "' stroke-width='2' points='";
        for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i)
            svg << px(xs[i]) << ',' << py(ys[i]) << ' ';
        svg << "'/>\n";
        svg << "<text x='" << width - margin + 4 << "' y='" << margin + 16 * color
            << "' font-size='11' fill='" << palette[color % 5] << "'>" << name << "</text>\n";
        color += 1;
    }
    for (std::size_t i = 0; i < xs.size(); ++i)
        svg << "<text x='" << px(xs[i]) << "' y='" << height - margin + 16
            << "' text-anchor='middle' font-size='10'>" << xs[i] << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

// top-2 principal components via power iteration with deflation
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows) {
    std::size_t n = rows.size();
    std::size_t d = rows[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<std::vector<double>> centered = rows;
    for (auto& r : centered)
        for (std::size_t j = 0; j < d; ++j) r[j] -= mean[j];

    auto power_component = [&](const std::vector<std::vector<double>>& x) {
        std::vector<double> v(d, 0.0);
        v[0] = 1.0;
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> next(d, 0.0);
            for (const auto& r : x) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += r[j] * v[j];
                for (std::size_t j = 0; j < d; ++j) next[j] += dot * r[j];
            }
            double norm = 0.0;
            for (double val : next) norm += val * val;
            norm = std::sqrt(norm);
            if (norm < 1e-12) break;
            for (std::size_t j = 0; j < d; ++j) v[j] = next[j] / norm;
        }
        return v;
    };

    std::vector<double> pc1 = power_component(centered);
    std::vector<std::vector<double>> deflated = centered;
    for (auto& r : deflated) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += r[j] * pc1[j];
        for (std::size_t j = 0; j < d; ++j) r[j] -= dot * pc1[j];
    }
    std::vector<double> pc2 = power_component(deflated);

    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            a += centered[i][j] * pc1[j];
            b += centered[i][j] * pc2[j];
        }
        out[i] = {a, b};
    }
    return out;
}

}  // namespace

std::vector<std::string> emit_plots(const std::string& report_json_path,
                                    const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    nlohmann::json j = nlohmann::json::parse(read_text(report_json_path));

    if (j.contains("k_sweep")) {
        std::vector<double> xs;
        std::vector<double> acc, f1;
        for (const auto& entry : j["k_sweep"]) {
            xs.push_back(entry.at("k").get<double>());
            acc.push_back(entry.at("accuracy").get<double>());
            f1.push_back(entry.at("weighted_f1").get<double>());
        }
        if (!xs.empty()) {
            std::string path = out_dir + "/k_sensitivity.svg";
            write_text(path, svg_line_chart("metrics vs filter size K", xs,
                                            {{"accuracy", acc}, {"weighted_f1", f1}}));
            written.push_back(path);
        }
    }

    if (j.contains("windows")) {
        std::vector<double> xs;
        std::vector<double> acc, prec, rec, f1;
        for (const auto& w : j["windows"]) {
            xs.push_back(w.at("window_index").get<double>());
            acc.push_back(w.at("metrics").at("accuracy").get<double>());
            prec.push_back(w.at("metrics").at("precision").get<double>());
            rec.push_back(w.at("metrics").at("recall").get<double>());
            f1.push_back(w.at("metrics").at("weighted_f1").get<double>());
        }
        if (!xs.empty()) {
            std::string path = out_dir + "/window_metrics.svg";
            write_text(path, svg_line_chart("per-window metrics", xs,
                                            {{"accuracy", acc},
                                             {"precision", prec},
                                             {"recall", rec},
                                             {"weighted_f1", f1}}));
            written.push_back(path);
        }
    }

    // PCA projection of exported embeddings, when present next to the report
    fs::path embeddings =
        fs::path(report_json_path).parent_path().parent_path() / "plots" / "embeddings.tsv";
    if (fs::exists(embeddings)) {
        std::ifstream in(embeddings);
        std::string header;
        std::getline(in, header);
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        std::string line;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ls, field, '\t')) fields.push_back(field);
            if (fields.size() < 4) continue;
            labels.push_back(std::stoi(fields[1]));
            std::vector<double> row;
            for (std::size_t i = 3; i < fields.size(); ++i) row.push_back(std::stod(fields[i]));
            rows.push_back(std::move(row));
        }
        if (rows.empty()) {
            write_text(out_dir + "/pca_skipped.txt", "no embeddings exported; projection skipped\n");
            written.push_back(out_dir + "/pca_skipped.txt");
        } else {
            auto projected = pca_2d(rows);
            double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
            for (const auto& p : projected) {
                x_min = std::min(x_min, p[0]);
                x_max = std::max(x_max, p[0]);
                y_min = std::min(y_min, p[1]);
                y_max = std::max(y_max, p[1]);
            }
            if (x_max == x_min) x_max = x_min + 1;
            if (y_max == y_min) y_max = y_min + 1;
            const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
            std::ostringstream svg;
            svg.precision(6);
            svg << "<svg xmlns='http://www.w3.org/2000/svg' width='600' height='600'>\n"
                << "<rect width='100%' height='100%' fill='white'/>\n";
            for (std::size_t i = 0; i < projected.size(); ++i) {
                double px = 40 + (projected[i][0] - x_min) / (x_max - x_min) * 520;
                double py = 560 - (projected[i][1] - y_min) / (y_max - y_min) * 520;
                int lab = labels[i] >= 0 ? labels[i] : 0;
                svg << "<circle cx='" << px << "' cy='" << py << "' r='2.5' fill='"
                    << palette[lab % 10] << "'/>\n";
            }
            svg << "</svg>\n";
            std::string path = out_dir + "/embedding_pca.svg";
            write_text(path, svg.str());
            written.push_back(path);
        }
    }
    return written;
}

}  // namespace s2osc
