#include "s2osc/incremental.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "s2osc/error.hpp"
#include "s2osc/rng.hpp"
#include "s2osc/ssl.hpp"

namespace s2osc {

std::size_t MemoryBuffer::total() const {
    std::size_t n = 0;
    for (const auto& [label, examples] : store) n += examples.size();
    return n;
}

ExampleSet MemoryBuffer::all_examples() const {
    ExampleSet out;
    for (const auto& [label, examples] : store)
        out.insert(out.end(), examples.begin(), examples.end());
    return out;
}

std::string MemoryBuffer::manifest_json() const {
    nlohmann::json j;
    j["capacity"] = capacity;
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [label, examples] : store) {
        std::vector<std::int64_t> ids;
        for (const Example& e : examples) ids.push_back(e.instance_id);
        classes[std::to_string(label)] = ids;
    }
    j["store"] = classes;
    return j.dump(2);
}

std::map<std::int64_t, std::vector<double>> capture_q_targets(const Network& f_prev,
                                                              const MemoryBuffer& memory) {
    std::map<std::int64_t, std::vector<double>> q;
    for (const auto& [label, examples] : memory.store)
        for (const Example& e : examples) q[e.instance_id] = f_prev.probabilities(e);
    return q;
}

double incremental_loss(const IncrementalModel& model, const ExampleSet& labeled,
                        const ExampleSet& memory_batch,
                        const std::map<std::int64_t, std::vector<double>>& q_targets,
                        std::vector<double>* grad) {
    double loss = 0.0;
    ForwardCache cache;
    std::vector<double> dlogits;
    std::size_t n_out = static_cast<std::size_t>(model.net.n_classes());

    // classification term over new labels and memory replay
    auto classification = [&](const Example& e) {
        int row = model.index_of.at(e.label);
        model.net.forward_cached(e, cache);
        loss += cross_entropy_loss(cache.logits, row, grad ? &dlogits : nullptr);
        if (grad) model.net.backward(cache, dlogits, *grad);
    };
    for (const Example& e : labeled) classification(e);
    for (const Example& e : memory_batch) classification(e);

    // distillation term: reproduce f^{t-1}'s scores on the memory
    for (const Example& e : memory_batch) {
        auto it = q_targets.find(e.instance_id);
        if (it == q_targets.end())
            throw StateError("missing distillation target for memory instance " +
                             std::to_string(e.instance_id));
        const std::vector<double>& q_old = it->second;
        // align to the extended head: zeros for new classes
        std::vector<double> q(n_out, 0.0);
        std::copy(q_old.begin(), q_old.end(), q.begin());

        model.net.forward_cached(e, cache);
        std::vector<double> p = softmax(cache.logits);
        for (std::size_t c = 0; c < n_out; ++c)
            if (q[c] > 0.0) loss += -q[c] * std::log(std::max(p[c], 1e-300));
        if (grad) {
            // d/dz of -sum q log softmax(z) with sum(q)=1 is p - q
            dlogits.assign(n_out, 0.0);
            for (std::size_t c = 0; c < n_out; ++c) dlogits[c] = p[c] - q[c];
            model.net.backward(cache, dlogits, *grad);
        }
    }
    return loss;
}

IncrementalModel incremental_update(const IncrementalModel& f_prev, const MemoryBuffer& memory,
                                    const UpdatePacket& packet, const TrainConfig& cfg) {
    if (packet.newly_labeled.empty())
        throw InputError("incremental update requires newly labeled data");

    std::set<int> novel;
    for (const Example& e : packet.newly_labeled)
        if (!f_prev.index_of.count(e.label)) novel.insert(e.label);

    IncrementalModel model;
    model.index_of = f_prev.index_of;
    model.class_of = f_prev.class_of;
    for (int c : novel) {
        model.index_of[c] = static_cast<int>(model.class_of.size());
        model.class_of.push_back(c);
    }
    model.net = f_prev.net.with_extended_head(static_cast<int>(novel.size()));

    ExampleSet replay = memory.all_examples();
    ExampleSet labeled = packet.newly_labeled;

    SgdOptimizer opt(model.net.params().size(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    std::vector<double> grad(model.net.params().size());

    // joint pass over new labels and memory, mini-batched per Algorithm-style
    // SGD; the loss gradient is averaged within each batch
    std::vector<std::size_t> lab_order(labeled.size());
    std::iota(lab_order.begin(), lab_order.end(), 0);
    std::vector<std::size_t> mem_order(replay.size());
    std::iota(mem_order.begin(), mem_order.end(), 0);

    std::size_t b = static_cast<std::size_t>(cfg.batch_size);
    std::size_t steps = (std::max(labeled.size(), replay.size()) + b - 1) / b;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0x1ec, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(lab_order);
        rng.shuffle(mem_order);
        for (std::size_t step = 0; step < steps; ++step) {
            ExampleSet lab_batch;
            if (step * b < labeled.size()) {
                std::size_t end = std::min(labeled.size(), (step + 1) * b);
                for (std::size_t i = step * b; i < end; ++i) lab_batch.push_back(labeled[lab_order[i]]);
            }
            ExampleSet mem_batch;
            if (step * b < replay.size()) {
                std::size_t end = std::min(replay.size(), (step + 1) * b);
                for (std::size_t i = step * b; i < end; ++i) mem_batch.push_back(replay[mem_order[i]]);
            }
            if (lab_batch.empty() && mem_batch.empty()) continue;
            std::fill(grad.begin(), grad.end(), 0.0);
            incremental_loss(model, lab_batch, mem_batch, packet.q_targets, &grad);
            double inv = 1.0 / static_cast<double>(lab_batch.size() + mem_batch.size());
            for (double& g : grad) g *= inv;
            opt.step(model.net.params(), grad);
        }
    }
    return model;
}

MemoryBuffer update_memory(const MemoryBuffer& memory, const ExampleSet& new_class_data,
                           std::uint64_t seed, std::vector<std::string>* warnings) {
    std::map<int, ExampleSet> incoming;
    for (const Example& e : new_class_data) {
        if (memory.store.count(e.label))
            throw ProtocolError("class " + std::to_string(e.label) + " is already stored");
        incoming[e.label].push_back(e);
    }
    for (auto it = incoming.begin(); it != incoming.end();) {
        if (it->second.empty()) {
            if (warnings)
                warnings->push_back("new class " + std::to_string(it->first) +
                                    " has no instances; skipped");
            it = incoming.erase(it);
        } else {
            ++it;
        }
    }

    MemoryBuffer out = memory;
    std::size_t n_incoming = 0;
    for (const auto& [label, examples] : incoming) n_incoming += examples.size();

    if (out.total() + n_incoming <= out.capacity) {
        for (const auto& [label, examples] : incoming) out.store[label] = examples;
        return out;
    }

    std::size_t n_classes = out.store.size() + incoming.size();
    std::size_t quota = out.capacity / n_classes;
    // shrink existing classes, dropping the most recently added first
    for (auto& [label, examples] : out.store)
        if (examples.size() > quota) examples.resize(quota);
    // fill new classes up to quota with a uniform random draw
    for (const auto& [label, examples] : incoming) {
        std::vector<std::size_t> idx(examples.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(mix_seed(seed, 0x3e3, static_cast<std::uint64_t>(label)));
        rng.shuffle(idx);
        ExampleSet kept;
        for (std::size_t i = 0; i < std::min(quota, idx.size()); ++i)
            kept.push_back(examples[idx[i]]);
        std::sort(kept.begin(), kept.end(),
                  [](const Example& a, const Example& b) { return a.instance_id < b.instance_id; });
        out.store[label] = std::move(kept);
    }
    return out;
}

ExampleSet label_oracle(const std::map<std::int64_t, int>& predictions,
                        const ExampleSet& truth_source) {
    std::map<std::int64_t, const Example*> by_id;
    for (const Example& e : truth_source) by_id[e.instance_id] = &e;

    ExampleSet out;
    for (const auto& [id, predicted] : predictions) {
        if (predicted != kSuperClassLabel) continue;
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw StateError("no ground truth stored for instance " + std::to_string(id));
        out.push_back(*it->second);  // true label restored, known-class truths included
    }
    return out;
}

}  // namespace s2osc
