#pragma once

#include <cstdint>
#include <vector>

#include "ktpfl/dataset.hpp"

namespace ktpfl {

/// Assignment of dataset rows to N private train shards, N test shards and an
/// optional public pool. All index sets are pairwise disjoint.
struct Partition {
  std::vector<std::vector<std::size_t>> private_shards;  // train indices, per client
  std::vector<std::vector<std::size_t>> test_shards;
  std::vector<std::size_t> public_indices;  // empty unless held out of the same dataset

  std::size_t num_clients() const { return private_shards.size(); }
  /// D_n: private training samples of client n.
  std::size_t client_size(std::size_t n) const { return private_shards[n].size(); }
  /// D = sum of D_n.
  std::size_t total_private() const;
};

/// Label-skew Non-IID split: every client receives exactly
/// `labels_per_client` distinct labels, dealt from seeded shuffles of the
/// label set so that all labels are used whenever N*k >= C. Each client's
/// samples are split 75/25 into train/test per label.
Partition partition_label_skew(const Dataset& ds, int num_clients, int labels_per_client,
                               std::uint64_t seed, std::size_t public_hold_out = 0);

/// Quantity-skew Non-IID split: per-class client proportions drawn from
/// Dirichlet(alpha), floored at one sample per client per class when the
/// class is large enough. 75/25 train/test per client per class.
Partition partition_dirichlet(const Dataset& ds, int num_clients, double alpha,
                              std::uint64_t seed, std::size_t public_hold_out = 0);

/// Seeded subsample of `size` rows; labels dropped when labeled == false.
/// size == 0 is allowed (warns) and yields an empty dataset.
Dataset carve_public(const Dataset& source, std::size_t size, bool labeled,
                     std::uint64_t seed);

/// Shuffled fixed-size index slices; the shuffle is keyed by (seed, epoch)
/// and the last partial slice is kept.
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace ktpfl
