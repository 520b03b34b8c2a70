#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mobhfl {

/// Dense labeled dataset: `num_samples` rows of `input_dim` features plus an
/// integer class label per row.
struct LabeledDataset {
    std::vector<double> inputs; // num_samples x input_dim, row-major
    std::vector<int> labels;    // values in [0, num_classes)
    int num_samples = 0;
    int input_dim = 0;
    int num_classes = 0;

    std::span<const double> row(int i) const {
        return {inputs.data() + static_cast<std::size_t>(i) * input_dim,
                static_cast<std::size_t>(input_dim)};
    }
};

/// Disjoint shard index lists into a parent dataset, plus the initial
/// vehicle-to-edge map. For the edge non-i.i.d. case the map follows class
/// ownership; other partitioners fill it with contiguous blocks.
struct PartitionPlan {
    std::vector<std::vector<int>> shards;
    std::vector<int> edge_assignment;
};

/// Probability vector over class labels; entries sum to 1 within 1e-12.
struct LabelDistribution {
    std::vector<double> probs;

    int num_classes() const { return static_cast<int>(probs.size()); }
};

/// Gaussian blob classification data: one unit-variance cluster per class,
/// class means placed deterministically on a circle in the first two feature
/// dimensions so every pair of means is at least `separation` apart.
/// Same seed, same dataset, bit for bit.
LabeledDataset generate_synthetic(int num_classes, int input_dim, int per_class,
                                  double separation, std::uint64_t seed);

/// Random permutation split into M shards; sizes differ by at most one
/// (the first S mod M shards take the extra sample).
PartitionPlan partition_iid(const LabeledDataset& dataset, int num_vehicles, std::uint64_t seed);

/// Label-sorted split: each class is cut into M*l/C equal chunks and chunks
/// are dealt so that every vehicle holds exactly `classes_per_vehicle`
/// distinct classes and all shards have (near-)equal size.
PartitionPlan partition_local_niid(const LabeledDataset& dataset, int num_vehicles,
                                   int classes_per_vehicle, std::uint64_t seed);

/// Edge-level label skew: the first N*l classes (sorted) are assigned to
/// edges round-robin, each edge pools its classes and splits the pool
/// uniformly among its M/N vehicles. Classes beyond N*l stay unused (a
/// warning is emitted on stderr). The returned edge_assignment records the
/// vehicle-to-edge ownership.
PartitionPlan partition_edge_niid(const LabeledDataset& dataset, int num_edges,
                                  int num_vehicles, int classes_per_edge, std::uint64_t seed);

/// Empirical class frequencies of a set of rows. Errors on empty input.
LabelDistribution label_distribution(const LabeledDataset& dataset, std::span<const int> indices);

/// Distribution of the full dataset.
LabelDistribution label_distribution(const LabeledDataset& dataset);

/// l1 distance between two label distributions; lies in [0, 2].
double probability_difference(const LabelDistribution& p, const LabelDistribution& q);

/// CSV round trip. Header row: f0,...,f{d-1},label.
void save_dataset_csv(const LabeledDataset& dataset, const std::string& path);
LabeledDataset load_dataset_csv(const std::string& path);

} // namespace mobhfl
