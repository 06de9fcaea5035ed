#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "s2osc/error.hpp"
#include "s2osc/net.hpp"
#include "s2osc/rng.hpp"

using namespace s2osc;

namespace {

Example random_example(int channels, int h, int w, int label, Rng& rng) {
    Example e;
    e.channels = channels;
    e.height = h;
    e.width = w;
    e.label = label;
    e.pixels.resize(std::size_t(channels) * h * w);
    for (double& v : e.pixels) v = rng.uniform();
    return e;
}

// two pixel-space blobs: class 0 lights the left half, class 1 the right
ExampleSet two_blobs(int per_class, int dim, Rng& rng) {
    ExampleSet out;
    std::int64_t id = 0;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < per_class; ++i) {
            Example e;
            e.channels = 1;
            e.height = dim;
            e.width = dim;
            e.label = c;
            e.instance_id = id++;
            e.pixels.assign(std::size_t(dim) * dim, 0.0);
            for (int y = 0; y < dim; ++y)
                for (int x = 0; x < dim; ++x) {
                    bool lit = c == 0 ? x < dim / 2 : x >= dim / 2;
                    e.at(0, y, x) = (lit ? 0.8 : 0.1) + 0.1 * rng.uniform();
                }
            out.push_back(std::move(e));
        }
    }
    return out;
}

double loss_at(const Network& net, const Example& x, int target) {
    return cross_entropy_loss(net.logits(x), target, nullptr);
}

}  // namespace

TEST_CASE("tempered softmax spot values and identity at T=1") {
    std::vector<double> p = {0.9, 0.1};
    std::vector<double> t3 = softmax_T(p, 3.0);
    // 0.9^(1/3) / (0.9^(1/3) + 0.1^(1/3)) computed by hand
    CHECK(t3[0] == doctest::Approx(0.675334).epsilon(1e-4));
    CHECK(t3[1] == doctest::Approx(0.324666).epsilon(1e-4));
    CHECK(t3[0] + t3[1] == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> t1 = softmax_T(p, 1.0);
    CHECK(t1[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(t1[1] == doctest::Approx(0.1).epsilon(1e-12));

    CHECK_THROWS_AS(softmax_T(p, 0.0), ParameterError);
}

TEST_CASE("tempering never changes the argmax") {
    Rng rng(7);
    for (int t = 0; t < 1000; ++t) {
        int n = 2 + int(rng.uniform_int(0, 6));
        std::vector<double> logits(std::size_t(n), 0.0);
        for (double& v : logits) v = 6.0 * (rng.uniform() - 0.5);
        std::vector<double> p = softmax(logits);
        double temp = 0.25 + 8.0 * rng.uniform();
        std::vector<double> q = softmax_T(p, temp);
        auto am = [](const std::vector<double>& v) {
            return std::max_element(v.begin(), v.end()) - v.begin();
        };
        CHECK(am(p) == am(q));
        double sum = 0.0;
        for (double v : q) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax is shift invariant and normalized") {
    std::vector<double> a = softmax({1.0, 2.0, 3.0});
    std::vector<double> b = softmax({101.0, 102.0, 103.0});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(a[0] + a[1] + a[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy value and logit gradient on a uniform head") {
    std::vector<double> dl;
    double loss = cross_entropy_loss({0.0, 0.0}, 0, &dl);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dl[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(dl[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward matches finite differences through conv, pool and gain") {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 4;
    arch.in_width = 4;
    arch.conv_channels = {2};
    arch.hidden_dim = 3;
    arch.n_classes = 3;
    arch.logit_gain = 2.5;

    Network net(arch, 99);
    Rng rng(5);
    Example x = random_example(1, 4, 4, 1, rng);

    ForwardCache cache;
    net.forward_cached(x, cache);
    std::vector<double> dlogits;
    cross_entropy_loss(cache.logits, x.label, &dlogits);
    std::vector<double> grad(net.params().size(), 0.0);
    net.backward(cache, dlogits, grad);

    const double eps = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        Network plus = net, minus = net;
        plus.params()[i] += eps;
        minus.params()[i] -= eps;
        double fd = (loss_at(plus, x, x.label) - loss_at(minus, x, x.label)) / (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
        ++checked;
    }
    CHECK(checked == int(arch.param_count()));
}

TEST_CASE("backward matches finite differences with no conv blocks") {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 2;
    arch.in_width = 2;
    arch.conv_channels = {};
    arch.hidden_dim = 3;
    arch.n_classes = 4;

    Network net(arch, 3);
    Rng rng(11);
    Example x = random_example(1, 2, 2, 2, rng);

    ForwardCache cache;
    net.forward_cached(x, cache);
    std::vector<double> dlogits;
    cross_entropy_loss(cache.logits, x.label, &dlogits);
    std::vector<double> grad(net.params().size(), 0.0);
    net.backward(cache, dlogits, grad);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        Network plus = net, minus = net;
        plus.params()[i] += eps;
        minus.params()[i] -= eps;
        double fd = (loss_at(plus, x, x.label) - loss_at(minus, x, x.label)) / (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("logit gain multiplies the head output only") {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 4;
    arch.in_width = 4;
    arch.conv_channels = {2};
    arch.hidden_dim = 5;
    arch.n_classes = 3;

    Network base(arch, 21);
    arch.logit_gain = 3.0;
    Network gained(arch, 21);
    REQUIRE(gained.params().size() == base.params().size());
    gained.params() = base.params();

    Rng rng(4);
    Example x = random_example(1, 4, 4, 0, rng);
    std::vector<double> lb = base.logits(x);
    std::vector<double> lg = gained.logits(x);
    for (std::size_t i = 0; i < lb.size(); ++i)
        CHECK(lg[i] == doctest::Approx(3.0 * lb[i]).epsilon(1e-12));
    // embeddings are upstream of the gain
    std::vector<double> eb = base.embedding(x);
    std::vector<double> eg = gained.embedding(x);
    CHECK(eb == eg);
}

TEST_CASE("sgd with nesterov momentum reproduces hand-computed steps") {
    // lr 0.1, momentum 0.9, no decay:
    //   v1 = 0.5,  p1 = 1 - 0.1*(0.5 + 0.45)   = 0.905
    //   v2 = 0.95, p2 = 0.905 - 0.1*(0.5+0.855) = 0.7695
    std::vector<double> p = {1.0};
    SgdOptimizer opt(1, 0.1, 0.9, 0.0);
    opt.step(p, {0.5});
    CHECK(p[0] == doctest::Approx(0.905).epsilon(1e-12));
    opt.step(p, {0.5});
    CHECK(p[0] == doctest::Approx(0.7695).epsilon(1e-12));

    // weight decay alone: g = 0.1*2 = 0.2, p = 2 - 0.1*0.2 = 1.98
    std::vector<double> q = {2.0};
    SgdOptimizer opt2(1, 0.1, 0.0, 0.1);
    opt2.step(q, {0.0});
    CHECK(q[0] == doctest::Approx(1.98).epsilon(1e-12));
}

TEST_CASE("pretraining separates two pixel blobs") {
    Rng rng(13);
    ExampleSet train = two_blobs(40, 8, rng);
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 8;
    arch.in_width = 8;
    arch.conv_channels = {};
    arch.hidden_dim = 8;
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.seed = 1;

    PretrainResult res = pretrain_f(train, arch, cfg);
    REQUIRE(res.epoch_losses.size() == 30);
    CHECK(res.epoch_losses.back() < res.epoch_losses.front());
    int correct = 0;
    for (const Example& e : train) {
        std::vector<double> p = res.model.probabilities(e);
        int pred = int(std::max_element(p.begin(), p.end()) - p.begin());
        if (res.class_of[std::size_t(pred)] == e.label) ++correct;
    }
    CHECK(double(correct) / double(train.size()) >= 0.99);

    // centers sit where the mean embedding of each class sits
    ClassCenters centers = compute_centers(res.model, train);
    REQUIRE(centers.centers.size() == 2);
    for (auto& [c, center] : centers.centers) {
        std::vector<double> mean(std::size_t(arch.hidden_dim), 0.0);
        int n = 0;
        for (const Example& e : train) {
            if (e.label != c) continue;
            std::vector<double> emb = res.model.embedding(e);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += emb[i];
            ++n;
        }
        for (std::size_t i = 0; i < mean.size(); ++i)
            CHECK(center[i] == doctest::Approx(mean[i] / n).epsilon(1e-9));
    }
}

TEST_CASE("pretraining rejects degenerate inputs") {
    Architecture arch;
    arch.in_height = 4;
    arch.in_width = 4;
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(pretrain_f({}, arch, cfg), InputError);
    Rng rng(1);
    ExampleSet one_class = {random_example(1, 4, 4, 7, rng)};
    CHECK_THROWS_AS(pretrain_f(one_class, arch, cfg), ProtocolError);
}

TEST_CASE("checkpoint round trip preserves the model bit for bit") {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 6;
    arch.in_width = 6;
    arch.conv_channels = {3, 4};
    arch.hidden_dim = 7;
    arch.n_classes = 5;
    arch.logit_gain = 4.5;
    Network net(arch, 1234);

    auto path = std::filesystem::temp_directory_path() / "s2osc_ckpt_test.bin";
    net.save(path.string());
    Network back = Network::load(path.string());
    std::filesystem::remove(path);

    CHECK(back.arch() == net.arch());
    REQUIRE(back.params().size() == net.params().size());
    // parameters are stored in single precision
    for (std::size_t i = 0; i < net.params().size(); ++i)
        CHECK(back.params()[i] == doctest::Approx(net.params()[i]).epsilon(1e-6));
    Rng rng(6);
    Example x = random_example(1, 6, 6, 0, rng);
    std::vector<double> a = net.logits(x), b = back.logits(x);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));
}

TEST_CASE("extending the head preserves existing outputs exactly") {
    Architecture arch;
    arch.in_channels = 1;
    arch.in_height = 4;
    arch.in_width = 4;
    arch.conv_channels = {2};
    arch.hidden_dim = 6;
    arch.n_classes = 3;
    arch.logit_gain = 2.0;
    Network net(arch, 77);
    Network wide = net.with_extended_head(2);
    CHECK(wide.n_classes() == 5);

    Rng rng(9);
    Example x = random_example(1, 4, 4, 0, rng);
    std::vector<double> old_l = net.logits(x);
    std::vector<double> new_l = wide.logits(x);
    REQUIRE(new_l.size() == 5);
    for (int c = 0; c < 3; ++c) CHECK(new_l[std::size_t(c)] == old_l[std::size_t(c)]);
    CHECK(new_l[3] == 0.0);
    CHECK(new_l[4] == 0.0);
}

TEST_CASE("predict_proba rows are distributions") {
    Architecture arch;
    arch.in_height = 4;
    arch.in_width = 4;
    arch.conv_channels = {2};
    arch.hidden_dim = 4;
    arch.n_classes = 3;
    Network net(arch, 8);
    Rng rng(2);
    ExampleSet batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_example(1, 4, 4, 0, rng));
    auto proba = predict_proba(net, batch);
    REQUIRE(proba.size() == 5);
    for (auto& row : proba) {
        double sum = 0.0;
        for (double v : row) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}
