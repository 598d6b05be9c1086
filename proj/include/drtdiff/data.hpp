#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "drtdiff/matrix.hpp"
#include "drtdiff/nn.hpp"

namespace drtdiff::data {

struct Dataset {
    Matrix inputs;  // M x d
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return inputs.cols(); }

    /// Throws InvalidArgument unless labels are in range and every class occurs.
    void validate() const;
};

/// Class means of a Gaussian-blob mixture plus its isotropic noise level.
struct BlobModel {
    Matrix means;  // C x d
    double spread = 0.0;
};

/// Random unit directions, rescaled so that every pair of means is at least
/// 4 * spread apart. Deterministic per seed.
BlobModel make_blob_model(int num_classes, int dim, double spread, std::uint64_t seed);

/// Draws `per_class` samples around each mean; rows are grouped by class.
Dataset sample_blobs(const BlobModel& model, int per_class, std::uint64_t seed);

/// make_blob_model + sample_blobs with the same seed.
Dataset make_gaussian_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed);

struct IntRange {
    int lo = 1;
    int hi = 1;
};

struct PartitionSpec {
    int num_agents = 1;
    IntRange classes_per_agent{1, 1};
    IntRange samples_per_agent{1, 1};
    bool iid = false;
    std::uint64_t seed = 0;
};

using IndexSet = std::vector<std::size_t>;

/// Non-IID: per agent draw a class count, that many distinct classes and a
/// sample count, then sample without replacement from what remains of the
/// chosen classes. IID: shuffle and split into K near-equal parts.
/// Index sets are pairwise disjoint. Throws PartitionInfeasible.
std::vector<IndexSet> partition(const Dataset& ds, const PartitionSpec& spec);

/// Seeded shuffle of `indices`, then contiguous chunks of `batch_size`
/// (last one may be short). Returns index chunks into the dataset.
std::vector<IndexSet> batches(std::span<const std::size_t> indices, std::size_t batch_size,
                              std::uint64_t epoch_seed);

/// Gathers the given rows into a Batch.
nn::Batch gather(const Dataset& ds, std::span<const std::size_t> indices);
/// Whole dataset as a single batch.
nn::Batch as_batch(const Dataset& ds);

/// CSV rows `label,x1,...,xd` with no header.
void write_csv(std::ostream& os, const Dataset& ds);
Dataset read_csv(std::istream& is);

}  // namespace drtdiff::data
