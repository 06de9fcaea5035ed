#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "s2osc/error.hpp"
#include "s2osc/net.hpp"
#include "s2osc/rng.hpp"
#include "s2osc/ssl.hpp"

using namespace s2osc;

namespace {

Example random_example(int dim, int label, std::int64_t id, Rng& rng) {
    Example e;
    e.channels = 1;
    e.height = dim;
    e.width = dim;
    e.label = label;
    e.instance_id = id;
    e.pixels.resize(std::size_t(dim) * dim);
    for (double& v : e.pixels) v = rng.uniform();
    return e;
}

// tiny dense-only nets so finite differences stay cheap (~30 params)
Network tiny_net(int n_classes, std::uint64_t seed, double gain = 1.0) {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 2;
    arch.in_width = 2;
    arch.conv_channels = {};
    arch.hidden_dim = 3;
    arch.n_classes = n_classes;
    arch.logit_gain = gain;
    return Network(arch, seed);
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
    double out = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) out += p[i] * std::log(p[i] / q[i]);
    return out;
}

}  // namespace

TEST_CASE("renormalized known distribution drops the last row and renormalizes") {
    std::vector<double> logits = {1.0, 2.0, 0.5, 9.0};  // last row is the super-class
    std::vector<double> r = renormalized_known(logits, 3);
    REQUIRE(r.size() == 3);
    double sum = 0.0;
    for (double v : r) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // proportional to exp(logit) over the retained rows
    CHECK(r[1] / r[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-9));
    CHECK(r[0] / r[2] == doctest::Approx(std::exp(0.5)).epsilon(1e-9));
}

TEST_CASE("supervised loss without distillation is half the mean cross entropy") {
    Network g = tiny_net(3, 1);
    Network f = tiny_net(2, 2);
    std::map<int, int> index_of = {{10, 0}, {20, 1}};
    Rng rng(3);
    ExampleSet batch = {random_example(2, 10, 0, rng), random_example(2, 20, 1, rng)};

    SslConfig cfg;
    cfg.alpha = 0.0;
    double loss = supervised_loss(g, f, index_of, batch, cfg);

    double want = 0.0;
    for (const Example& e : batch) {
        std::vector<double> p = softmax(g.logits(e));
        want += -std::log(p[std::size_t(index_of.at(e.label))]);
    }
    CHECK(loss == doctest::Approx(want / (2.0 * batch.size())).epsilon(1e-12));
}

TEST_CASE("distillation term adds alpha times the tempered KL") {
    Network g = tiny_net(3, 4);
    Network f = tiny_net(2, 5);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(6);
    ExampleSet batch = {random_example(2, 0, 0, rng)};

    SslConfig cfg;
    cfg.alpha = 0.0;
    double base = supervised_loss(g, f, index_of, batch, cfg);
    cfg.alpha = 0.7;
    double with_kl = supervised_loss(g, f, index_of, batch, cfg);

    std::vector<double> teacher = softmax_T(f.probabilities(batch[0]), cfg.temperature);
    std::vector<double> g_logits = g.logits(batch[0]);
    std::vector<double> scaled = {g_logits[0] / cfg.temperature, g_logits[1] / cfg.temperature};
    std::vector<double> student = softmax(scaled);
    CHECK(with_kl - base ==
          doctest::Approx(0.7 * kl(teacher, student) / (2.0 * batch.size())).epsilon(1e-9));
}

TEST_CASE("super-class term only fires above the confidence threshold") {
    // a freshly initialized tiny model is nearly uniform: max prob << 0.85
    Network g = tiny_net(3, 7);
    Network f = tiny_net(2, 8);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(9);
    ExampleSet batch = {random_example(2, kSuperClassLabel, 0, rng)};

    SslConfig cfg;
    cfg.alpha = 0.0;
    cfg.tau = 0.85;
    std::vector<double> p = softmax(g.logits(batch[0]));
    REQUIRE(*std::max_element(p.begin(), p.end()) < 0.85);
    CHECK(supervised_loss(g, f, index_of, batch, cfg) == doctest::Approx(0.0));

    // with the gate forced open the super-class row is penalized directly
    cfg.tau = 0.0;
    double open = supervised_loss(g, f, index_of, batch, cfg);
    CHECK(open == doctest::Approx(-std::log(p[2]) / 2.0).epsilon(1e-12));
}

TEST_CASE("supervised loss rejects unlabeled and foreign labels") {
    Network g = tiny_net(3, 1);
    Network f = tiny_net(2, 2);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(1);
    ExampleSet bad_absent = {random_example(2, kAbsentLabel, 0, rng)};
    ExampleSet bad_foreign = {random_example(2, 99, 0, rng)};
    SslConfig cfg;
    CHECK_THROWS_AS(supervised_loss(g, f, index_of, bad_absent, cfg), Error);
    CHECK_THROWS_AS(supervised_loss(g, f, index_of, bad_foreign, cfg), Error);
    CHECK_THROWS_AS(supervised_loss(g, f, index_of, {}, cfg), InputError);
}

TEST_CASE("supervised gradient matches finite differences") {
    Network g = tiny_net(3, 11);
    Network f = tiny_net(2, 12);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(13);
    ExampleSet batch = {random_example(2, 0, 0, rng), random_example(2, 1, 1, rng),
                        random_example(2, kSuperClassLabel, 2, rng)};

    SslConfig cfg;
    cfg.alpha = 0.3;
    cfg.tau = 0.0;  // keep the indicator away from the finite-difference path
    std::vector<double> grad(g.params().size(), 0.0);
    supervised_loss(g, f, index_of, batch, cfg, &grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < g.params().size(); ++i) {
        Network plus = g, minus = g;
        plus.params()[i] += eps;
        minus.params()[i] -= eps;
        double fd = (supervised_loss(plus, f, index_of, batch, cfg) -
                     supervised_loss(minus, f, index_of, batch, cfg)) /
                    (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("unsupervised loss keeps only confident pseudo-labels") {
    Network g = tiny_net(3, 21);
    Network f = tiny_net(2, 22);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(23);
    ExampleSet batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_example(2, kAbsentLabel, i, rng));

    SslConfig cfg;
    cfg.alpha = 0.0;
    cfg.tau = 1.1;  // unreachable: nothing retained
    auto [loss_none, kept_none] = unsupervised_loss(g, f, index_of, batch, cfg, 5);
    CHECK(kept_none == 0);
    CHECK(loss_none == doctest::Approx(0.0));

    cfg.tau = 0.0;  // always retained
    auto [loss_all, kept_all] = unsupervised_loss(g, f, index_of, batch, cfg, 5);
    CHECK(kept_all == int(batch.size()));
    CHECK(loss_all > 0.0);

    auto empty = unsupervised_loss(g, f, index_of, {}, cfg, 5);
    CHECK(empty.second == 0);
}

TEST_CASE("unsupervised gradient matches finite differences") {
    Network g = tiny_net(3, 31);
    Network f = tiny_net(2, 32);
    std::map<int, int> index_of = {{0, 0}, {1, 1}};
    Rng rng(33);
    ExampleSet batch = {random_example(2, kAbsentLabel, 0, rng),
                        random_example(2, kAbsentLabel, 1, rng)};

    SslConfig cfg;
    cfg.alpha = 0.3;
    cfg.tau = 0.0;
    const std::uint64_t seed = 77;
    std::vector<double> grad(g.params().size(), 0.0);
    unsupervised_loss(g, f, index_of, batch, cfg, seed, &grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < g.params().size(); ++i) {
        Network plus = g, minus = g;
        plus.params()[i] += eps;
        minus.params()[i] -= eps;
        double fd = (unsupervised_loss(plus, f, index_of, batch, cfg, seed).first -
                     unsupervised_loss(minus, f, index_of, batch, cfg, seed).first) /
                    (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("binary variant validates its inputs and composes the total") {
    Network g3 = tiny_net(3, 41);
    Network g2 = tiny_net(2, 42);
    Network f = tiny_net(2, 43);
    Rng rng(44);
    ExampleSet labeled = {random_example(2, 0, 0, rng), random_example(2, 1, 1, rng)};
    ExampleSet unlabeled = {random_example(2, kAbsentLabel, 2, rng)};

    SslConfig cfg;
    cfg.tau = 0.0;
    CHECK_THROWS_AS(binary_variant_loss(g3, f, labeled, unlabeled, cfg, 1), ParameterError);
    ExampleSet bad = {random_example(2, 5, 0, rng)};
    CHECK_THROWS_AS(binary_variant_loss(g2, f, bad, unlabeled, cfg, 1), Error);

    SslBatchLoss out = binary_variant_loss(g2, f, labeled, unlabeled, cfg, 1);
    CHECK(out.total == doctest::Approx(out.l_s + cfg.lambda_u * out.l_u).epsilon(1e-12));
    CHECK(out.n_unlabeled_retained == 1);
}

TEST_CASE("binary variant gradient matches finite differences") {
    Network g2 = tiny_net(2, 51);
    Network f = tiny_net(2, 52);
    Rng rng(53);
    ExampleSet labeled = {random_example(2, 0, 0, rng), random_example(2, 1, 1, rng)};
    ExampleSet unlabeled = {random_example(2, kAbsentLabel, 2, rng)};

    SslConfig cfg;
    cfg.alpha = 0.3;
    cfg.tau = 0.0;
    const std::uint64_t seed = 9;
    std::vector<double> grad(g2.params().size(), 0.0);
    binary_variant_loss(g2, f, labeled, unlabeled, cfg, seed, &grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < g2.params().size(); ++i) {
        Network plus = g2, minus = g2;
        plus.params()[i] += eps;
        minus.params()[i] -= eps;
        double fd = (binary_variant_loss(plus, f, labeled, unlabeled, cfg, seed).total -
                     binary_variant_loss(minus, f, labeled, unlabeled, cfg, seed).total) /
                    (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("training g fits a separable labeled set and logs per epoch") {
    // class 0 lights the top-left pixel, class 1 the bottom-right,
    // super-class examples light both
    ExampleSet labeled;
    Rng rng(61);
    for (int i = 0; i < 60; ++i) {
        Example e;
        e.channels = 1;
        e.height = 4;
        e.width = 4;
        e.instance_id = i;
        e.pixels.assign(16, 0.05 * rng.uniform());
        int kind = i % 3;
        if (kind == 0) {
            e.label = 7;
            e.at(0, 0, 0) = 1.0;
        } else if (kind == 1) {
            e.label = 8;
            e.at(0, 3, 3) = 1.0;
        } else {
            e.label = kSuperClassLabel;
            e.at(0, 0, 0) = 1.0;
            e.at(0, 3, 3) = 1.0;
        }
        labeled.push_back(std::move(e));
    }

    Architecture arch;
    arch.in_height = 4;
    arch.in_width = 4;
    arch.conv_channels = {};
    arch.hidden_dim = 8;
    arch.n_classes = 2;
    Network f(arch, 1);
    std::map<int, int> index_of = {{7, 0}, {8, 1}};

    SslConfig cfg;
    cfg.tau = 0.0;  // small nets stay calibrated; open the gate so C' trains
    cfg.logit_gain = 4.0;
    cfg.train.epochs = 60;
    cfg.train.batch_size = 20;
    cfg.train.seed = 3;
    TrainGResult res = train_g(f, index_of, labeled, {}, cfg);

    CHECK(res.g.n_classes() == 3);
    REQUIRE(!res.warnings.empty());  // empty unlabeled pool is reported
    CHECK(std::count(res.csv_log.begin(), res.csv_log.end(), '\n') == 61);  // header + epochs

    std::vector<int> class_of = {7, 8};
    auto preds = classify_pool(res.g, class_of, labeled);
    int correct = 0;
    for (const Example& e : labeled)
        if (preds.at(e.instance_id) == e.label) ++correct;
    CHECK(double(correct) / labeled.size() >= 0.95);
}

TEST_CASE("classify_pool maps head rows back to class ids") {
    Network g = tiny_net(3, 71);
    Rng rng(72);
    ExampleSet pool;
    for (int i = 0; i < 20; ++i) pool.push_back(random_example(2, kAbsentLabel, i, rng));
    std::vector<int> class_of = {5, 9};
    auto preds = classify_pool(g, class_of, pool);
    CHECK(preds.size() == pool.size());
    for (auto& [id, c] : preds)
        CHECK((c == 5 || c == 9 || c == kSuperClassLabel));
}
