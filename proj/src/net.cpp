#include "s2osc/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "s2osc/error.hpp"
#include "s2osc/rng.hpp"

namespace s2osc {

namespace {

struct Dims {
    int h, w, ch;
};

// spatial dims after each conv block (conv keeps size, pool halves)
std::vector<Dims> block_dims(const Architecture& a) {
    std::vector<Dims> dims;
    int h = a.in_height, w = a.in_width, ch = a.in_channels;
    dims.push_back({h, w, ch});
    for (int out_ch : a.conv_channels) {
        h /= 2;
        w /= 2;
        ch = out_ch;
        dims.push_back({h, w, ch});
    }
    return dims;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("truncated checkpoint");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

float read_f32(std::istream& in) {
    std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr char kNetMagic[8] = {'S', '2', 'O', 'S', 'C', 'N', 'E', 'T'};
constexpr char kCenterMagic[8] = {'S', '2', 'O', 'S', 'C', 'C', 'T', 'R'};

}  // namespace

int Architecture::flat_dim() const {
    auto dims = block_dims(*this);
    const Dims& last = dims.back();
    return last.h * last.w * last.ch;
}

std::size_t Architecture::param_count() const {
    std::size_t n = 0;
    int in_ch = in_channels;
    for (int out_ch : conv_channels) {
        n += static_cast<std::size_t>(out_ch) * in_ch * 9 + out_ch;
        in_ch = out_ch;
    }
    n += static_cast<std::size_t>(hidden_dim) * flat_dim() + hidden_dim;
    n += static_cast<std::size_t>(n_classes) * hidden_dim + n_classes;
    return n;
}

Network::Network(const Architecture& arch, std::uint64_t init_seed) : arch_(arch) {
    params_.resize(arch.param_count());
    Rng rng(mix_seed(init_seed, 0x1417));
    std::size_t p = 0;
    int in_ch = arch.in_channels;
    for (int out_ch : arch.conv_channels) {
        double scale = std::sqrt(2.0 / (in_ch * 9.0));
        for (int i = 0; i < out_ch * in_ch * 9; ++i) params_[p++] = rng.normal() * scale;
        for (int i = 0; i < out_ch; ++i) params_[p++] = 0.0;
        in_ch = out_ch;
    }
    int flat = arch.flat_dim();
    double s1 = std::sqrt(2.0 / flat);
    for (int i = 0; i < arch.hidden_dim * flat; ++i) params_[p++] = rng.normal() * s1;
    for (int i = 0; i < arch.hidden_dim; ++i) params_[p++] = 0.0;
    double s2 = std::sqrt(2.0 / arch.hidden_dim);
    for (int i = 0; i < arch.n_classes * arch.hidden_dim; ++i) params_[p++] = rng.normal() * s2;
    for (int i = 0; i < arch.n_classes; ++i) params_[p++] = 0.0;
}

void Network::forward_cached(const Example& x, ForwardCache& cache) const {
    if (x.channels != arch_.in_channels || x.height != arch_.in_height || x.width != arch_.in_width)
        throw InputError("example shape does not match network input");
    cache.input = &x;
    auto dims = block_dims(arch_);
    cache.conv_pre.assign(arch_.conv_channels.size(), {});
    cache.pool_out.assign(arch_.conv_channels.size(), {});
    cache.pool_argmax.assign(arch_.conv_channels.size(), {});

    const double* cur = x.pixels.data();
    std::size_t p = 0;
    for (std::size_t k = 0; k < arch_.conv_channels.size(); ++k) {
        int in_ch = dims[k].ch, h = dims[k].h, w = dims[k].w;
        int out_ch = arch_.conv_channels[k];
        const double* weights = params_.data() + p;
        const double* bias = weights + static_cast<std::size_t>(out_ch) * in_ch * 9;
        p += static_cast<std::size_t>(out_ch) * in_ch * 9 + out_ch;

        std::vector<double>& conv = cache.conv_pre[k];
        conv.assign(static_cast<std::size_t>(out_ch) * h * w, 0.0);
        for (int oc = 0; oc < out_ch; ++oc) {
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    double acc = bias[oc];
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const double* wk = weights + ((static_cast<std::size_t>(oc) * in_ch + ic) * 9);
                        const double* src = cur + static_cast<std::size_t>(ic) * h * w;
                        for (int ky = -1; ky <= 1; ++ky) {
                            int sy = y + ky;
                            if (sy < 0 || sy >= h) continue;
                            for (int kx = -1; kx <= 1; ++kx) {
                                int sx = xx + kx;
                                if (sx < 0 || sx >= w) continue;
                                acc += wk[(ky + 1) * 3 + (kx + 1)] * src[sy * w + sx];
                            }
                        }
                    }
                    conv[(static_cast<std::size_t>(oc) * h + y) * w + xx] = acc;
                }
            }
        }

        int ph = h / 2, pw = w / 2;
        std::vector<double>& pooled = cache.pool_out[k];
        std::vector<int>& argmax = cache.pool_argmax[k];
        pooled.assign(static_cast<std::size_t>(out_ch) * ph * pw, 0.0);
        argmax.assign(pooled.size(), 0);
        for (int oc = 0; oc < out_ch; ++oc) {
            for (int y = 0; y < ph; ++y) {
                for (int xx = 0; xx < pw; ++xx) {
                    double best = -1e300;
                    int best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            int idx = (oc * h + (2 * y + dy)) * w + (2 * xx + dx);
                            double v = std::max(conv[idx], 0.0);  // ReLU before pooling
                            if (v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    pooled[(static_cast<std::size_t>(oc) * ph + y) * pw + xx] = best;
                    argmax[(static_cast<std::size_t>(oc) * ph + y) * pw + xx] = best_idx;
                }
            }
        }
        cur = pooled.data();
    }

    int flat = arch_.flat_dim();
    const double* w1 = params_.data() + p;
    const double* b1 = w1 + static_cast<std::size_t>(arch_.hidden_dim) * flat;
    p += static_cast<std::size_t>(arch_.hidden_dim) * flat + arch_.hidden_dim;
    cache.hidden_pre.assign(arch_.hidden_dim, 0.0);
    cache.embedding.assign(arch_.hidden_dim, 0.0);
    for (int i = 0; i < arch_.hidden_dim; ++i) {
        double acc = b1[i];
        const double* row = w1 + static_cast<std::size_t>(i) * flat;
        for (int j = 0; j < flat; ++j) acc += row[j] * cur[j];
        cache.hidden_pre[i] = acc;
        cache.embedding[i] = std::max(acc, 0.0);
    }

    const double* w2 = params_.data() + p;
    const double* b2 = w2 + static_cast<std::size_t>(arch_.n_classes) * arch_.hidden_dim;
    cache.logits.assign(arch_.n_classes, 0.0);
    for (int c = 0; c < arch_.n_classes; ++c) {
        double acc = b2[c];
        const double* row = w2 + static_cast<std::size_t>(c) * arch_.hidden_dim;
        for (int j = 0; j < arch_.hidden_dim; ++j) acc += row[j] * cache.embedding[j];
        cache.logits[c] = acc * arch_.logit_gain;
    }
}

void Network::backward(const ForwardCache& cache, const std::vector<double>& dlogits,
                       std::vector<double>& grad) const {
    if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
    auto dims = block_dims(arch_);
    int flat = arch_.flat_dim();

    // locate parameter offsets
    std::vector<std::size_t> conv_off(arch_.conv_channels.size());
    std::size_t p = 0;
    int in_ch = arch_.in_channels;
    for (std::size_t k = 0; k < arch_.conv_channels.size(); ++k) {
        conv_off[k] = p;
        p += static_cast<std::size_t>(arch_.conv_channels[k]) * in_ch * 9 + arch_.conv_channels[k];
        in_ch = arch_.conv_channels[k];
    }
    std::size_t fc1_off = p;
    p += static_cast<std::size_t>(arch_.hidden_dim) * flat + arch_.hidden_dim;
    std::size_t fc2_off = p;

    // head
    const double* w2 = params_.data() + fc2_off;
    std::vector<double> d_embed(arch_.hidden_dim, 0.0);
    for (int c = 0; c < arch_.n_classes; ++c) {
        double g = dlogits[c] * arch_.logit_gain;
        double* gw = grad.data() + fc2_off + static_cast<std::size_t>(c) * arch_.hidden_dim;
        const double* row = w2 + static_cast<std::size_t>(c) * arch_.hidden_dim;
        for (int j = 0; j < arch_.hidden_dim; ++j) {
            gw[j] += g * cache.embedding[j];
            d_embed[j] += g * row[j];
        }
        grad[fc2_off + static_cast<std::size_t>(arch_.n_classes) * arch_.hidden_dim + c] += g;
    }

    // hidden layer
    const double* flat_in = arch_.conv_channels.empty() ? cache.input->pixels.data()
                                                        : cache.pool_out.back().data();
    const double* w1 = params_.data() + fc1_off;
    std::vector<double> d_flat(flat, 0.0);
    for (int i = 0; i < arch_.hidden_dim; ++i) {
        double g = cache.hidden_pre[i] > 0.0 ? d_embed[i] : 0.0;
        if (g == 0.0) continue;
        double* gw = grad.data() + fc1_off + static_cast<std::size_t>(i) * flat;
        const double* row = w1 + static_cast<std::size_t>(i) * flat;
        for (int j = 0; j < flat; ++j) {
            gw[j] += g * flat_in[j];
            d_flat[j] += g * row[j];
        }
        grad[fc1_off + static_cast<std::size_t>(arch_.hidden_dim) * flat + i] += g;
    }

    // conv blocks, last to first
    std::vector<double> d_pool = std::move(d_flat);
    for (int k = static_cast<int>(arch_.conv_channels.size()) - 1; k >= 0; --k) {
        int h = dims[k].h, w = dims[k].w;
        int out_ch = arch_.conv_channels[k];
        int block_in_ch = dims[k].ch;
        const std::vector<double>& conv = cache.conv_pre[k];
        const std::vector<int>& argmax = cache.pool_argmax[k];

        // route pooled gradient to the winning conv cell, through ReLU
        std::vector<double> d_conv(conv.size(), 0.0);
        for (std::size_t i = 0; i < d_pool.size(); ++i) {
            int idx = argmax[i];
            if (conv[idx] > 0.0) d_conv[idx] += d_pool[i];
        }

        const double* src = (k == 0) ? cache.input->pixels.data() : cache.pool_out[k - 1].data();
        const double* weights = params_.data() + conv_off[k];
        double* gw_base = grad.data() + conv_off[k];
        double* gb = gw_base + static_cast<std::size_t>(out_ch) * block_in_ch * 9;

        std::vector<double> d_src(static_cast<std::size_t>(block_in_ch) * h * w, 0.0);
        for (int oc = 0; oc < out_ch; ++oc) {
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    double g = d_conv[(static_cast<std::size_t>(oc) * h + y) * w + xx];
                    if (g == 0.0) continue;
                    gb[oc] += g;
                    for (int ic = 0; ic < block_in_ch; ++ic) {
                        const double* wk = weights + ((static_cast<std::size_t>(oc) * block_in_ch + ic) * 9);
                        double* gwk = gw_base + ((static_cast<std::size_t>(oc) * block_in_ch + ic) * 9);
                        const double* s = src + static_cast<std::size_t>(ic) * h * w;
                        double* ds = d_src.data() + static_cast<std::size_t>(ic) * h * w;
                        for (int ky = -1; ky <= 1; ++ky) {
                            int sy = y + ky;
                            if (sy < 0 || sy >= h) continue;
                            for (int kx = -1; kx <= 1; ++kx) {
                                int sx = xx + kx;
                                if (sx < 0 || sx >= w) continue;
                                gwk[(ky + 1) * 3 + (kx + 1)] += g * s[sy * w + sx];
                                ds[sy * w + sx] += g * wk[(ky + 1) * 3 + (kx + 1)];
                            }
                        }
                    }
                }
            }
        }
        d_pool = std::move(d_src);
    }
}

void Network::forward(const Example& x, std::vector<double>& logits,
                      std::vector<double>& embedding) const {
    ForwardCache cache;
    forward_cached(x, cache);
    logits = std::move(cache.logits);
    embedding = std::move(cache.embedding);
}

std::vector<double> Network::logits(const Example& x) const {
    ForwardCache cache;
    forward_cached(x, cache);
    return std::move(cache.logits);
}

std::vector<double> Network::probabilities(const Example& x) const { return softmax(logits(x)); }

std::vector<double> Network::embedding(const Example& x) const {
    ForwardCache cache;
    forward_cached(x, cache);
    return std::move(cache.embedding);
}

Network Network::with_extended_head(int extra) const {
    Network out;
    out.arch_ = arch_;
    out.arch_.n_classes = arch_.n_classes + extra;
    out.params_.resize(out.arch_.param_count(), 0.0);
    std::size_t body = param_count_before_head();
    std::copy(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(body), out.params_.begin());
    // old-class weight rows and biases carry over; new rows stay zero
    const double* w2 = params_.data() + body;
    double* w2n = out.params_.data() + body;
    std::copy(w2, w2 + static_cast<std::size_t>(arch_.n_classes) * arch_.hidden_dim, w2n);
    const double* b2 = w2 + static_cast<std::size_t>(arch_.n_classes) * arch_.hidden_dim;
    double* b2n = w2n + static_cast<std::size_t>(out.arch_.n_classes) * arch_.hidden_dim;
    std::copy(b2, b2 + arch_.n_classes, b2n);
    return out;
}

std::size_t Network::param_count_before_head() const {
    return params_.size() -
           (static_cast<std::size_t>(arch_.n_classes) * arch_.hidden_dim + arch_.n_classes);
}

void Network::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open checkpoint for write: " + path);
    out.write(kNetMagic, 8);
    write_u32(out, 1);  // version
    write_u32(out, static_cast<std::uint32_t>(arch_.in_channels));
    write_u32(out, static_cast<std::uint32_t>(arch_.in_height));
    write_u32(out, static_cast<std::uint32_t>(arch_.in_width));
    write_u32(out, static_cast<std::uint32_t>(arch_.conv_channels.size()));
    for (int c : arch_.conv_channels) write_u32(out, static_cast<std::uint32_t>(c));
    write_u32(out, static_cast<std::uint32_t>(arch_.hidden_dim));
    write_u32(out, static_cast<std::uint32_t>(arch_.n_classes));
    write_f32(out, static_cast<float>(arch_.logit_gain));
    write_u32(out, static_cast<std::uint32_t>(params_.size()));
    for (double v : params_) write_f32(out, static_cast<float>(v));
}

Network Network::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kNetMagic, 8) != 0)
        throw FormatError("not a model checkpoint: " + path);
    std::uint32_t version = read_u32(in);
    if (version != 1) throw FormatError("unsupported checkpoint version");
    Network net;
    net.arch_.in_channels = static_cast<int>(read_u32(in));
    net.arch_.in_height = static_cast<int>(read_u32(in));
    net.arch_.in_width = static_cast<int>(read_u32(in));
    std::uint32_t n_conv = read_u32(in);
    for (std::uint32_t i = 0; i < n_conv; ++i)
        net.arch_.conv_channels.push_back(static_cast<int>(read_u32(in)));
    net.arch_.hidden_dim = static_cast<int>(read_u32(in));
    net.arch_.n_classes = static_cast<int>(read_u32(in));
    net.arch_.logit_gain = read_f32(in);
    std::uint32_t n = read_u32(in);
    if (n != net.arch_.param_count()) throw FormatError("checkpoint parameter count mismatch");
    net.params_.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) net.params_[i] = read_f32(in);
    return net;
}

void SgdOptimizer::step(std::vector<double>& params, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grad[i] + weight_decay_ * params[i];
        velocity_[i] = momentum_ * velocity_[i] + g;
        params[i] -= lr_ * (g + momentum_ * velocity_[i]);
    }
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> softmax_T(const std::vector<double>& probs, double temperature) {
    if (temperature <= 0.0) throw ParameterError("temperature must be positive");
    std::vector<double> out(probs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        out[i] = probs[i] > 0.0 ? std::pow(probs[i], 1.0 / temperature) : 0.0;
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double cross_entropy_loss(const std::vector<double>& logits, int target_index,
                          std::vector<double>* dlogits) {
    std::vector<double> p = softmax(logits);
    double loss = -std::log(std::max(p[static_cast<std::size_t>(target_index)], 1e-300));
    if (dlogits) {
        dlogits->assign(p.begin(), p.end());
        (*dlogits)[static_cast<std::size_t>(target_index)] -= 1.0;
    }
    return loss;
}

PretrainResult pretrain_f(const ExampleSet& train, const Architecture& arch,
                          const TrainConfig& cfg) {
    if (train.empty()) throw InputError("pretraining requires a nonempty training set");

    PretrainResult result;
    for (const Example& e : train)
        if (!result.index_of.count(e.label)) result.index_of[e.label] = 0;
    if (result.index_of.size() < 2)
        throw ProtocolError("pretraining is degenerate with a single class");
    int idx = 0;
    for (auto& [label, i] : result.index_of) {
        i = idx++;
        result.class_of.push_back(label);
    }

    Architecture a = arch;
    a.n_classes = static_cast<int>(result.index_of.size());
    result.model = Network(a, cfg.seed);

    SgdOptimizer opt(result.model.params().size(), cfg.learning_rate, cfg.momentum,
                     cfg.weight_decay);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> grad(result.model.params().size());
    ForwardCache cache;
    std::vector<double> dlogits;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const Example& e = train[order[i]];
                result.model.forward_cached(e, cache);
                double loss = cross_entropy_loss(cache.logits, result.index_of.at(e.label), &dlogits);
                epoch_loss += loss;
                for (double& g : dlogits) g *= inv;
                result.model.backward(cache, dlogits, grad);
            }
            opt.step(result.model.params(), grad);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
    }
    return result;
}

std::vector<std::vector<double>> predict_proba(const Network& model, const ExampleSet& batch) {
    if (batch.empty()) throw InputError("predict_proba requires a nonempty batch");
    std::vector<std::vector<double>> out;
    out.reserve(batch.size());
    for (const Example& e : batch) out.push_back(model.probabilities(e));
    return out;
}

ClassCenters compute_centers(const Network& model, const ExampleSet& train) {
    if (train.empty()) throw InputError("compute_centers requires a nonempty training set");
    ClassCenters centers;
    std::map<int, int> counts;
    for (const Example& e : train) {
        std::vector<double> emb = model.embedding(e);
        auto it = centers.centers.find(e.label);
        if (it == centers.centers.end()) {
            centers.centers[e.label] = emb;
        } else {
            for (std::size_t i = 0; i < emb.size(); ++i) it->second[i] += emb[i];
        }
        counts[e.label] += 1;
    }
    for (auto& [label, center] : centers.centers)
        for (double& v : center) v /= counts[label];
    return centers;
}

void save_centers(const std::string& path, const ClassCenters& centers) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open centers file for write: " + path);
    out.write(kCenterMagic, 8);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(centers.centers.size()));
    std::uint32_t dim = centers.centers.empty()
                            ? 0
                            : static_cast<std::uint32_t>(centers.centers.begin()->second.size());
    write_u32(out, dim);
    for (const auto& [label, center] : centers.centers) {
        write_u32(out, static_cast<std::uint32_t>(label));
        for (double v : center) write_f32(out, static_cast<float>(v));
    }
}

ClassCenters load_centers(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open centers file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCenterMagic, 8) != 0)
        throw FormatError("not a centers file: " + path);
    if (read_u32(in) != 1) throw FormatError("unsupported centers version");
    std::uint32_t n = read_u32(in);
    std::uint32_t dim = read_u32(in);
    ClassCenters centers;
    for (std::uint32_t i = 0; i < n; ++i) {
        int label = static_cast<int>(read_u32(in));
        std::vector<double> center(dim);
        for (std::uint32_t j = 0; j < dim; ++j) center[j] = read_f32(in);
        centers.centers[label] = std::move(center);
    }
    return centers;
}

}  // namespace s2osc
