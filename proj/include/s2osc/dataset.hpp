#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "s2osc/rng.hpp"

namespace s2osc {

constexpr int kAbsentLabel = -1;

// One image with an optional label. Pixels are channels x height x width,
// row-major, values in [0,1].
struct Example {
    std::vector<double> pixels;
    int channels = 1;
    int height = 0;
    int width = 0;
    int label = kAbsentLabel;
    std::int64_t instance_id = -1;

    double& at(int c, int y, int x) { return pixels[(c * height + y) * width + x]; }
    double at(int c, int y, int x) const { return pixels[(c * height + y) * width + x]; }
};

using ExampleSet = std::vector<Example>;

struct OscSplit {
    ExampleSet train;             // labels present, known classes only
    ExampleSet test_pool;         // labels stored for scoring but treated as withheld
    std::set<int> known_classes;
    std::set<int> unknown_classes;
};

struct StreamWindow {
    int window_index = 0;
    std::vector<std::int64_t> instance_ids;
    std::vector<int> novel_class_ids;
};

struct StreamSchedule {
    std::vector<StreamWindow> windows;
    int interval_size = 0;  // informational: instances per class per window
};

enum class ClassArrival { kSingle, kMulti };

// IDX (MNIST container) reader. Images and labels files are matched by index.
ExampleSet load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// IDX writer used for fixtures and interchange.
void write_idx_images(const std::string& path, const ExampleSet& data);
void write_idx_labels(const std::string& path, const ExampleSet& data);

// Holds out classes and known-class data to build the open-set protocol split.
OscSplit make_osc_split(const ExampleSet& dataset, double known_fraction, int n_unknown,
                        double known_holdout, std::uint64_t seed);

// Arranges the split's test pool into time windows with incrementally
// arriving novel classes. Every test instance appears in exactly one window.
StreamSchedule build_stream(const OscSplit& split, ClassArrival arrival, std::uint64_t seed);

// Random horizontal flip (p=0.5) plus independent horizontal/vertical
// translation, each up to floor(dim * 0.125) pixels, zero-filled.
Example weak_augment(const Example& x, std::uint64_t seed);

std::string stream_schedule_to_json(const StreamSchedule& s);
StreamSchedule stream_schedule_from_json(const std::string& text);

}  // namespace s2osc
