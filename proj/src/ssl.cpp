#include "s2osc/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "s2osc/error.hpp"
#include "s2osc/rng.hpp"

namespace s2osc {

namespace {

// softmax over the first `n` logits scaled by 1/T
std::vector<double> tempered_softmax_prefix(const std::vector<double>& logits, int n, double t) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[static_cast<std::size_t>(i)]);
    std::vector<double> out(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = std::exp((logits[static_cast<std::size_t>(i)] - mx) / t);
        sum += out[static_cast<std::size_t>(i)];
    }
    for (double& v : out) v /= sum;
    return out;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-300)));
    return kl;
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// teacher score for the binary variant: prediction entropy normalized to [0,1]
double normalized_entropy(const std::vector<double>& probs) {
    double u = 0.0;
    for (double p : probs)
        if (p > 0.0) u -= p * std::log(p);
    double ln_c = std::log(static_cast<double>(probs.size()));
    double v = ln_c > 0.0 ? u / ln_c : 0.0;
    return std::min(1.0, std::max(0.0, v));
}

}  // namespace

std::vector<double> renormalized_known(const std::vector<double>& g_logits, int n_known) {
    return tempered_softmax_prefix(g_logits, n_known, 1.0);
}

double supervised_loss(const Network& g, const Network& f_star,
                       const std::map<int, int>& index_of, const ExampleSet& batch,
                       const SslConfig& cfg, std::vector<double>* grad) {
    if (batch.empty()) throw InputError("supervised loss requires a nonempty batch");
    int n_known = static_cast<int>(index_of.size());
    int super_row = n_known;
    double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));

    double loss = 0.0;
    ForwardCache cache;
    std::vector<double> dlogits;
    for (const Example& e : batch) {
        g.forward_cached(e, cache);
        std::vector<double> p = softmax(cache.logits);
        dlogits.assign(cache.logits.size(), 0.0);

        if (e.label == kAbsentLabel)
            throw Error("contract", "supervised batch contains an unlabeled example");

        if (e.label == kSuperClassLabel) {
            // H_out, gated against confused known-class data in D_out
            double pmax = *std::max_element(p.begin(), p.end());
            if (pmax >= cfg.tau) {
                loss += -std::log(std::max(p[static_cast<std::size_t>(super_row)], 1e-300));
                for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] += p[i];
                dlogits[static_cast<std::size_t>(super_row)] -= 1.0;
            }
        } else {
            auto it = index_of.find(e.label);
            if (it == index_of.end())
                throw Error("contract", "label " + std::to_string(e.label) + " not a known class");
            int row = it->second;
            loss += -std::log(std::max(p[static_cast<std::size_t>(row)], 1e-300));
            for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] += p[i];
            dlogits[static_cast<std::size_t>(row)] -= 1.0;
        }

        if (cfg.alpha != 0.0) {
            std::vector<double> teacher = softmax_T(f_star.probabilities(e), cfg.temperature);
            std::vector<double> student =
                tempered_softmax_prefix(cache.logits, n_known, cfg.temperature);
            loss += cfg.alpha * kl_divergence(teacher, student);
            for (int c = 0; c < n_known; ++c)
                dlogits[static_cast<std::size_t>(c)] +=
                    cfg.alpha * (student[static_cast<std::size_t>(c)] -
                                 teacher[static_cast<std::size_t>(c)]) / cfg.temperature;
        }

        if (grad) {
            for (double& d : dlogits) d *= scale;
            g.backward(cache, dlogits, *grad);
        }
    }
    return loss * scale;
}

std::pair<double, int> unsupervised_loss(const Network& g, const Network& f_star,
                                         const std::map<int, int>& index_of,
                                         const ExampleSet& batch, const SslConfig& cfg,
                                         std::uint64_t seed, std::vector<double>* grad) {
    if (batch.empty()) return {0.0, 0};
    int n_known = static_cast<int>(index_of.size());
    double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));

    double loss = 0.0;
    int retained = 0;
    ForwardCache cache;
    std::vector<double> dlogits;
    for (const Example& e : batch) {
        // pseudo-label from the clean input, no gradient flows through it
        std::vector<double> q = g.probabilities(e);
        double qmax = *std::max_element(q.begin(), q.end());
        if (qmax < cfg.tau) continue;
        retained += 1;
        int pseudo = argmax_lowest(q);

        Example aug = weak_augment(e, mix_seed(seed, static_cast<std::uint64_t>(e.instance_id)));
        g.forward_cached(aug, cache);
        std::vector<double> p = softmax(cache.logits);
        dlogits.assign(cache.logits.size(), 0.0);

        loss += -std::log(std::max(p[static_cast<std::size_t>(pseudo)], 1e-300));
        for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] += p[i];
        dlogits[static_cast<std::size_t>(pseudo)] -= 1.0;

        if (cfg.alpha != 0.0) {
            std::vector<double> teacher = softmax_T(f_star.probabilities(e), cfg.temperature);
            std::vector<double> student =
                tempered_softmax_prefix(cache.logits, n_known, cfg.temperature);
            loss += cfg.alpha * kl_divergence(teacher, student);
            for (int c = 0; c < n_known; ++c)
                dlogits[static_cast<std::size_t>(c)] +=
                    cfg.alpha * (student[static_cast<std::size_t>(c)] -
                                 teacher[static_cast<std::size_t>(c)]) / cfg.temperature;
        }

        if (grad) {
            for (double& d : dlogits) d *= scale;
            g.backward(cache, dlogits, *grad);
        }
    }
    return {loss * scale, retained};
}

SslBatchLoss binary_variant_loss(const Network& g2, const Network& f_star,
                                 const ExampleSet& labeled, const ExampleSet& unlabeled,
                                 const SslConfig& cfg, std::uint64_t seed,
                                 std::vector<double>* grad) {
    if (g2.n_classes() != 2) throw ParameterError("binary variant requires a 2-output model");

    auto psi = [&](const Example& e) {
        double score = normalized_entropy(f_star.probabilities(e));
        if (score < 0.0 || score > 1.0)
            throw StateError("teacher score outside [0,1]");
        return std::vector<double>{1.0 - score, score};
    };

    SslBatchLoss out;
    ForwardCache cache;
    std::vector<double> dlogits;

    if (!labeled.empty()) {
        double scale = 1.0 / (2.0 * static_cast<double>(labeled.size()));
        for (const Example& e : labeled) {
            if (e.label != 0 && e.label != 1)
                throw Error("contract", "binary variant labels must be 0 (known) or 1 (unknown)");
            // cross-entropy on the clean view
            g2.forward_cached(e, cache);
            out.l_s += cross_entropy_loss(cache.logits, e.label, &dlogits);
            if (grad) {
                for (double& d : dlogits) d *= scale;
                g2.backward(cache, dlogits, *grad);
            }
            // distillation against the teacher score on the augmented view
            if (cfg.alpha != 0.0) {
                Example aug =
                    weak_augment(e, mix_seed(seed, static_cast<std::uint64_t>(e.instance_id), 1));
                g2.forward_cached(aug, cache);
                std::vector<double> p = softmax(cache.logits);
                std::vector<double> target = psi(e);
                out.l_s += cfg.alpha * kl_divergence(target, p);
                if (grad) {
                    dlogits.assign(2, 0.0);
                    for (int c = 0; c < 2; ++c)
                        dlogits[static_cast<std::size_t>(c)] =
                            cfg.alpha * scale *
                            (p[static_cast<std::size_t>(c)] - target[static_cast<std::size_t>(c)]);
                    g2.backward(cache, dlogits, *grad);
                }
            }
        }
        out.l_s *= scale;
    }

    if (!unlabeled.empty()) {
        double scale = cfg.lambda_u / (2.0 * static_cast<double>(unlabeled.size()));
        double l_u = 0.0;
        for (const Example& e : unlabeled) {
            std::vector<double> q = g2.probabilities(e);
            double qmax = *std::max_element(q.begin(), q.end());
            if (qmax < cfg.tau) continue;
            out.n_unlabeled_retained += 1;
            int pseudo = argmax_lowest(q);

            Example aug =
                weak_augment(e, mix_seed(seed, static_cast<std::uint64_t>(e.instance_id), 2));
            g2.forward_cached(aug, cache);
            std::vector<double> p = softmax(cache.logits);
            dlogits.assign(2, 0.0);
            l_u += -std::log(std::max(p[static_cast<std::size_t>(pseudo)], 1e-300));
            for (int c = 0; c < 2; ++c) dlogits[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
            dlogits[static_cast<std::size_t>(pseudo)] -= 1.0;
            if (cfg.alpha != 0.0) {
                std::vector<double> target = psi(e);
                l_u += cfg.alpha * kl_divergence(target, p);
                for (int c = 0; c < 2; ++c)
                    dlogits[static_cast<std::size_t>(c)] +=
                        cfg.alpha * (p[static_cast<std::size_t>(c)] - target[static_cast<std::size_t>(c)]);
            }
            if (grad) {
                for (double& d : dlogits) d *= scale;
                g2.backward(cache, dlogits, *grad);
            }
        }
        out.l_u = l_u / (2.0 * static_cast<double>(unlabeled.size()));
    }

    out.total = out.l_s + cfg.lambda_u * out.l_u;
    return out;
}

namespace {

TrainGResult train_g_impl(const Network& f_star, const std::map<int, int>& index_of,
                          const ExampleSet& x_labeled, const ExampleSet& u_pool,
                          const SslConfig& cfg, bool binary) {
    if (x_labeled.empty()) throw InputError("train_g requires labeled data");

    TrainGResult result;
    if (binary) {
        Architecture arch = f_star.arch();
        arch.n_classes = 2;
        arch.logit_gain = cfg.logit_gain;
        result.g = Network(arch, cfg.train.seed);
    } else if (cfg.init_from_f) {
        result.g = f_star.with_extended_head(1);
    } else {
        Architecture arch = f_star.arch();
        arch.n_classes = static_cast<int>(index_of.size()) + 1;
        arch.logit_gain = cfg.logit_gain;
        result.g = Network(arch, cfg.train.seed);
    }

    ExampleSet unlabeled = u_pool;
    if (binary && cfg.fold_labeled_into_unlabeled) {
        for (Example e : x_labeled) {
            e.label = kAbsentLabel;
            unlabeled.push_back(std::move(e));
        }
    }
    if (unlabeled.empty())
        result.warnings.push_back("unlabeled pool is empty; training on the supervised loss only");

    std::vector<std::size_t> lab_order(x_labeled.size());
    std::iota(lab_order.begin(), lab_order.end(), 0);
    std::vector<std::size_t> unlab_order(unlabeled.size());
    std::iota(unlab_order.begin(), unlab_order.end(), 0);

    SgdOptimizer opt(result.g.params().size(), cfg.train.learning_rate, cfg.train.momentum,
                     cfg.train.weight_decay);
    std::vector<double> grad(result.g.params().size());
    std::vector<double> grad_u(result.g.params().size());

    std::ostringstream log;
    log << "epoch,l_s,l_u,retained_fraction,labeled_accuracy\n";
    log.precision(10);

    std::size_t b = static_cast<std::size_t>(cfg.train.batch_size);
    std::size_t steps = (std::max(x_labeled.size(), unlabeled.size()) + b - 1) / b;

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.train.seed, 0x9e0, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(lab_order);
        rng.shuffle(unlab_order);
        std::uint64_t aug_seed = mix_seed(cfg.train.seed, 0xa6, static_cast<std::uint64_t>(epoch));

        double sum_ls = 0.0, sum_lu = 0.0;
        long long retained = 0, seen_u = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            ExampleSet lab_batch;
            for (std::size_t i = 0; i < b && !x_labeled.empty(); ++i)
                lab_batch.push_back(x_labeled[lab_order[(step * b + i) % x_labeled.size()]]);
            ExampleSet unlab_batch;
            if (!unlabeled.empty() && step * b < unlabeled.size()) {
                std::size_t end = std::min(unlabeled.size(), (step + 1) * b);
                for (std::size_t i = step * b; i < end; ++i)
                    unlab_batch.push_back(unlabeled[unlab_order[i]]);
            }

            std::fill(grad.begin(), grad.end(), 0.0);
            double l_s, l_u = 0.0;
            int batch_retained = 0;
            if (binary) {
                SslBatchLoss bl =
                    binary_variant_loss(result.g, f_star, lab_batch, unlab_batch, cfg, aug_seed, &grad);
                l_s = bl.l_s;
                l_u = bl.l_u;
                batch_retained = bl.n_unlabeled_retained;
            } else {
                l_s = supervised_loss(result.g, f_star, index_of, lab_batch, cfg, &grad);
                if (!unlab_batch.empty() && cfg.lambda_u != 0.0) {
                    std::fill(grad_u.begin(), grad_u.end(), 0.0);
                    auto [lu, r] = unsupervised_loss(result.g, f_star, index_of, unlab_batch, cfg,
                                                     aug_seed, &grad_u);
                    l_u = lu;
                    batch_retained = r;
                    for (std::size_t i = 0; i < grad.size(); ++i)
                        grad[i] += cfg.lambda_u * grad_u[i];
                }
            }
            sum_ls += l_s;
            sum_lu += l_u;
            retained += batch_retained;
            seen_u += static_cast<long long>(unlab_batch.size());
            opt.step(result.g.params(), grad);
        }

        long long correct = 0;
        for (const Example& e : x_labeled) {
            std::vector<double> p = result.g.probabilities(e);
            int row = argmax_lowest(p);
            int want;
            if (binary)
                want = e.label;
            else
                want = (e.label == kSuperClassLabel) ? static_cast<int>(index_of.size())
                                                     : index_of.at(e.label);
            if (row == want) correct += 1;
        }
        log << epoch << ',' << sum_ls / static_cast<double>(steps) << ','
            << sum_lu / static_cast<double>(steps) << ','
            << (seen_u > 0 ? static_cast<double>(retained) / static_cast<double>(seen_u) : 0.0)
            << ',' << static_cast<double>(correct) / static_cast<double>(x_labeled.size()) << '\n';
    }
    result.csv_log = log.str();
    return result;
}

}  // namespace

TrainGResult train_g(const Network& f_star, const std::map<int, int>& index_of,
                     const ExampleSet& x_labeled, const ExampleSet& u_pool, const SslConfig& cfg) {
    return train_g_impl(f_star, index_of, x_labeled, u_pool, cfg, false);
}

TrainGResult train_g_binary(const Network& f_star, const ExampleSet& x_labeled,
                            const ExampleSet& u_pool, const SslConfig& cfg) {
    return train_g_impl(f_star, {}, x_labeled, u_pool, cfg, true);
}

std::map<std::int64_t, int> classify_pool(const Network& g, const std::vector<int>& class_of,
                                          const ExampleSet& pool) {
    std::map<std::int64_t, int> out;
    for (const Example& e : pool) {
        std::vector<double> p = g.probabilities(e);
        int row = argmax_lowest(p);
        out[e.instance_id] =
            row < static_cast<int>(class_of.size()) ? class_of[static_cast<std::size_t>(row)]
                                                    : kSuperClassLabel;
    }
    return out;
}

}  // namespace s2osc
