#include "s2osc/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "s2osc/error.hpp"

namespace s2osc {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("unexpected end of file in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

ExampleSet load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw InputError("cannot open images file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw InputError("cannot open labels file: " + labels_path);

    std::uint32_t img_magic = read_be32(img, images_path);
    if (img_magic != 0x00000803u)
        throw FormatError("bad IDX magic in images file (expected 0x00000803)");
    std::uint32_t n = read_be32(img, images_path);
    std::uint32_t h = read_be32(img, images_path);
    std::uint32_t w = read_be32(img, images_path);

    std::uint32_t lab_magic = read_be32(lab, labels_path);
    if (lab_magic != 0x00000801u)
        throw FormatError("bad IDX magic in labels file (expected 0x00000801)");
    std::uint32_t n_lab = read_be32(lab, labels_path);
    if (n != n_lab)
        throw ConsistencyError("images/labels count mismatch: " + std::to_string(n) + " vs " +
                               std::to_string(n_lab));

    ExampleSet out;
    out.reserve(n);
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) throw FormatError("truncated image payload in " + images_path);
        int label = lab.get();
        if (label == EOF) throw FormatError("truncated label payload in " + labels_path);
        Example e;
        e.channels = 1;
        e.height = static_cast<int>(h);
        e.width = static_cast<int>(w);
        e.instance_id = static_cast<std::int64_t>(i);
        e.label = label;
        e.pixels.resize(buf.size());
        for (std::size_t p = 0; p < buf.size(); ++p) e.pixels[p] = buf[p] / 255.0;
        out.push_back(std::move(e));
    }
    return out;
}

void write_idx_images(const std::string& path, const ExampleSet& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for write: " + path);
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    std::uint32_t h = data.empty() ? 0 : static_cast<std::uint32_t>(data[0].height);
    std::uint32_t w = data.empty() ? 0 : static_cast<std::uint32_t>(data[0].width);
    write_be32(out, h);
    write_be32(out, w);
    for (const Example& e : data) {
        for (double v : e.pixels) {
            double clamped = std::min(1.0, std::max(0.0, v));
            out.put(static_cast<char>(static_cast<unsigned char>(clamped * 255.0 + 0.5)));
        }
    }
}

void write_idx_labels(const std::string& path, const ExampleSet& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for write: " + path);
    write_be32(out, 0x00000801u);
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    for (const Example& e : data) out.put(static_cast<char>(static_cast<unsigned char>(e.label)));
}

OscSplit make_osc_split(const ExampleSet& dataset, double known_fraction, int n_unknown,
                        double known_holdout, std::uint64_t seed) {
    if (n_unknown < 1) throw ProtocolError("open set protocol requires at least one unknown class");
    if (known_holdout <= 0.0 || known_holdout >= 1.0)
        throw ParameterError("known_holdout must lie in (0,1)");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset[i].label].push_back(i);

    std::vector<int> classes;
    for (const auto& [c, _] : by_class) classes.push_back(c);
    int n_classes = static_cast<int>(classes.size());
    int n_known = static_cast<int>(n_classes * known_fraction + 0.5);
    if (n_known < 1) n_known = 1;
    if (n_known + n_unknown > n_classes)
        throw ProtocolError("dataset has too few classes for requested known + unknown counts");

    Rng rng(mix_seed(seed, 0x51));
    std::vector<int> order = classes;
    rng.shuffle(order);

    OscSplit split;
    for (int i = 0; i < n_known; ++i) split.known_classes.insert(order[i]);
    for (int i = 0; i < n_unknown; ++i) split.unknown_classes.insert(order[n_known + i]);

    // stratified per-class holdout of known data into the test pool
    for (int c : split.known_classes) {
        std::vector<std::size_t> idx = by_class[c];
        Rng class_rng(mix_seed(seed, static_cast<std::uint64_t>(c) + 1));
        class_rng.shuffle(idx);
        std::size_t n_test = static_cast<std::size_t>(idx.size() * known_holdout + 0.5);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < n_test)
                split.test_pool.push_back(dataset[idx[i]]);
            else
                split.train.push_back(dataset[idx[i]]);
        }
    }
    for (int c : split.unknown_classes)
        for (std::size_t i : by_class[c]) split.test_pool.push_back(dataset[i]);

    auto by_id = [](const Example& a, const Example& b) { return a.instance_id < b.instance_id; };
    std::sort(split.train.begin(), split.train.end(), by_id);
    std::sort(split.test_pool.begin(), split.test_pool.end(), by_id);
    return split;
}

StreamSchedule build_stream(const OscSplit& split, ClassArrival arrival, std::uint64_t seed) {
    if (split.unknown_classes.empty())
        throw ProtocolError("stream construction requires at least one unknown class");

    std::vector<int> unknown(split.unknown_classes.begin(), split.unknown_classes.end());
    Rng rng(mix_seed(seed, 0xa11));
    rng.shuffle(unknown);

    // partition unknown classes into windows
    std::vector<std::vector<int>> arriving;
    if (arrival == ClassArrival::kSingle) {
        for (int c : unknown) arriving.push_back({c});
    } else {
        int l = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(unknown.size())));
        arriving.assign(static_cast<std::size_t>(l), {});
        for (std::size_t i = 0; i < unknown.size(); ++i)
            arriving[i % static_cast<std::size_t>(l)].push_back(unknown[i]);
    }

    std::map<int, std::vector<std::int64_t>> pool_by_class;
    for (const Example& e : split.test_pool) pool_by_class[e.label].push_back(e.instance_id);

    // held-out known instances, shuffled once; windows consume from the front
    std::vector<std::int64_t> known_pool;
    for (int c : split.known_classes)
        for (std::int64_t id : pool_by_class[c]) known_pool.push_back(id);
    rng.shuffle(known_pool);

    StreamSchedule schedule;
    std::size_t known_cursor = 0;
    int total_novel = 0;
    for (std::size_t t = 0; t < arriving.size(); ++t) {
        StreamWindow win;
        win.window_index = static_cast<int>(t) + 1;
        win.novel_class_ids = arriving[t];
        std::sort(win.novel_class_ids.begin(), win.novel_class_ids.end());
        std::size_t n_novel = 0;
        for (int c : win.novel_class_ids) {
            for (std::int64_t id : pool_by_class[c]) win.instance_ids.push_back(id);
            n_novel += pool_by_class[c].size();
        }
        total_novel += static_cast<int>(n_novel);
        // mix in an equal-sized draw of held-out known data, capped by
        // availability; the last window absorbs whatever remains so that the
        // schedule covers every test instance exactly once
        std::size_t take = std::min(n_novel, known_pool.size() - known_cursor);
        if (t + 1 == arriving.size()) take = known_pool.size() - known_cursor;
        for (std::size_t i = 0; i < take; ++i) win.instance_ids.push_back(known_pool[known_cursor++]);

        Rng order_rng(mix_seed(seed, 0x3ea, t));
        order_rng.shuffle(win.instance_ids);
        schedule.windows.push_back(std::move(win));
    }
    schedule.interval_size = total_novel / static_cast<int>(unknown.size());
    return schedule;
}

Example weak_augment(const Example& x, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xf11b));
    bool flip = rng.uniform() < 0.5;
    int max_dx = static_cast<int>(x.width * 0.125);
    int max_dy = static_cast<int>(x.height * 0.125);
    int dx = max_dx > 0 ? static_cast<int>(rng.uniform_int(-max_dx, max_dx)) : 0;
    int dy = max_dy > 0 ? static_cast<int>(rng.uniform_int(-max_dy, max_dy)) : 0;

    Example out = x;
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
    for (int c = 0; c < x.channels; ++c) {
        for (int y = 0; y < x.height; ++y) {
            int sy = y - dy;
            if (sy < 0 || sy >= x.height) continue;
            for (int xx = 0; xx < x.width; ++xx) {
                int sx = xx - dx;
                if (sx < 0 || sx >= x.width) continue;
                int src_x = flip ? (x.width - 1 - sx) : sx;
                out.at(c, y, xx) = x.at(c, sy, src_x);
            }
        }
    }
    return out;
}

std::string stream_schedule_to_json(const StreamSchedule& s) {
    nlohmann::json j;
    j["interval_size"] = s.interval_size;
    j["windows"] = nlohmann::json::array();
    for (const StreamWindow& w : s.windows) {
        nlohmann::json jw;
        jw["window_index"] = w.window_index;
        jw["instance_ids"] = w.instance_ids;
        jw["novel_class_ids"] = w.novel_class_ids;
        j["windows"].push_back(jw);
    }
    return j.dump(2);
}

StreamSchedule stream_schedule_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    StreamSchedule s;
    s.interval_size = j.at("interval_size").get<int>();
    for (const auto& jw : j.at("windows")) {
        StreamWindow w;
        w.window_index = jw.at("window_index").get<int>();
        w.instance_ids = jw.at("instance_ids").get<std::vector<std::int64_t>>();
        w.novel_class_ids = jw.at("novel_class_ids").get<std::vector<int>>();
        s.windows.push_back(std::move(w));
    }
    return s;
}

}  // namespace s2osc
