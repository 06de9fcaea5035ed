#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2osc/dataset.hpp"
#include "s2osc/net.hpp"

namespace s2osc {

// Bounded per-class exemplar store M^t. Insertion order within a class is
// preserved; rebalancing drops the most recently added exemplars first.
struct MemoryBuffer {
    std::size_t capacity = 2000;
    std::map<int, ExampleSet> store;

    std::size_t total() const;
    ExampleSet all_examples() const;
    std::string manifest_json() const;  // class -> instance ids
};

struct UpdatePacket {
    ExampleSet newly_labeled;  // oracle-labeled instances detected as C'
    int window_index = 0;
    // stored probability vectors of f^{t-1} on the memory instances, indexed
    // by instance id, aligned to f^{t-1}'s head
    std::map<std::int64_t, std::vector<double>> q_targets;
};

struct IncrementalModel {
    Network net;
    std::map<int, int> index_of;  // class id -> head row
    std::vector<int> class_of;
};

// Distillation targets q_j = f^{t-1}(x_j) for every memory instance, captured
// before any parameter change.
std::map<std::int64_t, std::vector<double>> capture_q_targets(const Network& f_prev,
                                                              const MemoryBuffer& memory);

// Joint classification + distillation loss:
//   -( sum_{x in D_out u M} y log f(x) + sum_{x in M} q log f(x) )
// Old-class targets are aligned to the extended head with zeros for new
// classes. Returns the plain sum; `grad` (if given) receives its gradient.
double incremental_loss(const IncrementalModel& model, const ExampleSet& labeled,
                        const ExampleSet& memory_batch,
                        const std::map<std::int64_t, std::vector<double>>& q_targets,
                        std::vector<double>* grad = nullptr);

// Extends f^{t-1} with the packet's novel classes and fine-tunes on the new
// labels plus memory replay with distillation.
IncrementalModel incremental_update(const IncrementalModel& f_prev, const MemoryBuffer& memory,
                                    const UpdatePacket& packet, const TrainConfig& cfg);

// Shrinks existing classes to the new quota (most recently added dropped
// first) and fills the novel classes.
MemoryBuffer update_memory(const MemoryBuffer& memory, const ExampleSet& new_class_data,
                           std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

// Ground-truth labels for every instance predicted as the super-class.
ExampleSet label_oracle(const std::map<std::int64_t, int>& predictions,
                        const ExampleSet& truth_source);

}  // namespace s2osc
