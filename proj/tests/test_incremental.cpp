#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "s2osc/error.hpp"
#include "s2osc/incremental.hpp"
#include "s2osc/rng.hpp"
#include "s2osc/ssl.hpp"

using namespace s2osc;

namespace {

Example make_example(int label, std::int64_t id, int dim = 3) {
    Example e;
    e.channels = 1;
    e.height = dim;
    e.width = dim;
    e.label = label;
    e.instance_id = id;
    e.pixels.assign(std::size_t(dim) * dim, 0.1);
    e.pixels[std::size_t(label) % e.pixels.size()] = 1.0;
    return e;
}

Network tiny_net(int n_classes, std::uint64_t seed) {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 3;
    arch.in_width = 3;
    arch.conv_channels = {};
    arch.hidden_dim = 3;
    arch.n_classes = n_classes;
    return Network(arch, seed);
}

MemoryBuffer filled_memory(const std::vector<int>& classes, int per_class, std::size_t capacity) {
    MemoryBuffer m;
    m.capacity = capacity;
    std::int64_t id = 0;
    for (int c : classes)
        for (int i = 0; i < per_class; ++i) m.store[c].push_back(make_example(c, id++));
    return m;
}

}  // namespace

TEST_CASE("memory buffer totals and manifest") {
    MemoryBuffer m = filled_memory({0, 1, 2}, 4, 100);
    CHECK(m.total() == 12);
    CHECK(m.all_examples().size() == 12);
    std::string j = m.manifest_json();
    CHECK(j.find("\"capacity\": 100") != std::string::npos);
    CHECK(j.find("\"2\"") != std::string::npos);
}

TEST_CASE("memory rebalances to the per-class quota when full") {
    // 5 classes x 400 fill capacity 2000 exactly; a sixth class forces
    // quota = 2000 / 6 = 333 for everyone
    MemoryBuffer m = filled_memory({0, 1, 2, 3, 4}, 400, 2000);
    ExampleSet sixth;
    for (int i = 0; i < 500; ++i) sixth.push_back(make_example(5, 10000 + i));

    MemoryBuffer out = update_memory(m, sixth, 7);
    REQUIRE(out.store.size() == 6);
    for (auto& [c, examples] : out.store) CHECK(examples.size() == 333);
    CHECK(out.total() <= out.capacity);

    // shrinking drops the most recently added exemplars first
    for (int c = 0; c < 5; ++c) {
        const ExampleSet& kept = out.store.at(c);
        const ExampleSet& orig = m.store.at(c);
        for (std::size_t i = 0; i < kept.size(); ++i)
            CHECK(kept[i].instance_id == orig[i].instance_id);
    }
}

TEST_CASE("memory absorbs new classes without rebalancing while under capacity") {
    MemoryBuffer m = filled_memory({0, 1}, 10, 100);
    ExampleSet third;
    for (int i = 0; i < 10; ++i) third.push_back(make_example(2, 100 + i));
    MemoryBuffer out = update_memory(m, third, 1);
    CHECK(out.store.at(0).size() == 10);  // untouched
    CHECK(out.store.at(2).size() == 10);
    CHECK(out.total() == 30);
}

TEST_CASE("memory rejects classes that are already stored") {
    MemoryBuffer m = filled_memory({0, 1}, 5, 100);
    ExampleSet dup = {make_example(1, 999)};
    CHECK_THROWS_AS(update_memory(m, dup, 1), ProtocolError);
}

TEST_CASE("distillation targets are the previous model's probabilities") {
    MemoryBuffer m = filled_memory({0, 1}, 3, 100);
    Network f = tiny_net(2, 5);
    auto q = capture_q_targets(f, m);
    CHECK(q.size() == 6);
    for (const Example& e : m.all_examples()) {
        REQUIRE(q.count(e.instance_id));
        CHECK(q.at(e.instance_id) == f.probabilities(e));
    }
}

TEST_CASE("incremental loss sums classification and aligned distillation") {
    IncrementalModel model;
    model.net = tiny_net(3, 9);  // head already extended by one novel class
    model.index_of = {{0, 0}, {1, 1}, {5, 2}};
    model.class_of = {0, 1, 5};

    ExampleSet labeled = {make_example(5, 50)};
    ExampleSet memory_batch = {make_example(0, 60), make_example(1, 61)};
    // old targets live on a 2-way head; the loss must zero-pad them
    Network f_prev = tiny_net(2, 10);
    std::map<std::int64_t, std::vector<double>> q;
    for (const Example& e : memory_batch) q[e.instance_id] = f_prev.probabilities(e);

    double got = incremental_loss(model, labeled, memory_batch, q);

    double want = 0.0;
    auto ce = [&](const Example& e) {
        std::vector<double> p = softmax(model.net.logits(e));
        return -std::log(p[std::size_t(model.index_of.at(e.label))]);
    };
    want += ce(labeled[0]);
    for (const Example& e : memory_batch) {
        want += ce(e);
        std::vector<double> p = softmax(model.net.logits(e));
        const std::vector<double>& qt = q.at(e.instance_id);
        for (std::size_t c = 0; c < qt.size(); ++c) want += -qt[c] * std::log(p[c]);
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    std::map<std::int64_t, std::vector<double>> missing;
    CHECK_THROWS_AS(incremental_loss(model, labeled, memory_batch, missing), StateError);
}

TEST_CASE("incremental loss gradient matches finite differences") {
    IncrementalModel model;
    model.net = tiny_net(3, 17);
    model.index_of = {{0, 0}, {1, 1}, {5, 2}};
    model.class_of = {0, 1, 5};

    ExampleSet labeled = {make_example(5, 50)};
    ExampleSet memory_batch = {make_example(0, 60), make_example(1, 61)};
    Network f_prev = tiny_net(2, 18);
    std::map<std::int64_t, std::vector<double>> q;
    for (const Example& e : memory_batch) q[e.instance_id] = f_prev.probabilities(e);

    std::vector<double> grad(model.net.params().size(), 0.0);
    incremental_loss(model, labeled, memory_batch, q, &grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < model.net.params().size(); ++i) {
        IncrementalModel plus = model, minus = model;
        plus.net.params()[i] += eps;
        minus.net.params()[i] -= eps;
        double fd = (incremental_loss(plus, labeled, memory_batch, q) -
                     incremental_loss(minus, labeled, memory_batch, q)) /
                    (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("incremental update extends the head and learns the novel class") {
    // previous model knows classes 0 and 1; class 5 arrives
    IncrementalModel prev;
    prev.net = tiny_net(2, 23);
    prev.index_of = {{0, 0}, {1, 1}};
    prev.class_of = {0, 1};

    MemoryBuffer memory = filled_memory({0, 1}, 8, 100);
    UpdatePacket packet;
    packet.window_index = 1;
    for (int i = 0; i < 24; ++i) packet.newly_labeled.push_back(make_example(5, 200 + i));
    packet.q_targets = capture_q_targets(prev.net, memory);

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 8;
    cfg.seed = 3;
    IncrementalModel next = incremental_update(prev, memory, packet, cfg);

    CHECK(next.net.n_classes() == 3);
    CHECK(next.index_of.at(5) == 2);
    CHECK(next.class_of == std::vector<int>{0, 1, 5});

    auto predict = [&](const Example& e) {
        std::vector<double> p = next.net.probabilities(e);
        return next.class_of[std::size_t(std::max_element(p.begin(), p.end()) - p.begin())];
    };
    int correct = 0;
    for (const Example& e : packet.newly_labeled)
        if (predict(e) == 5) ++correct;
    CHECK(double(correct) / packet.newly_labeled.size() >= 0.9);
    // replayed classes are still recognizable
    int old_correct = 0;
    ExampleSet replay = memory.all_examples();
    for (const Example& e : replay)
        if (predict(e) == e.label) ++old_correct;
    CHECK(double(old_correct) / replay.size() >= 0.9);

    UpdatePacket empty;
    CHECK_THROWS_AS(incremental_update(prev, memory, empty, cfg), InputError);
}

TEST_CASE("the oracle labels exactly the instances flagged as novel") {
    ExampleSet truth = {make_example(3, 1), make_example(4, 2), make_example(3, 3)};
    std::map<std::int64_t, int> predictions = {
        {1, kSuperClassLabel}, {2, 3}, {3, kSuperClassLabel}};
    ExampleSet out = label_oracle(predictions, truth);
    REQUIRE(out.size() == 2);
    CHECK(out[0].instance_id == 1);
    CHECK(out[0].label == 3);  // true label restored even when it is a known class
    CHECK(out[1].instance_id == 3);

    std::map<std::int64_t, int> unknown_id = {{99, kSuperClassLabel}};
    CHECK_THROWS_AS(label_oracle(unknown_id, truth), StateError);
}
