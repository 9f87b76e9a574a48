#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ktpfl/tensor.hpp"

namespace ktpfl {

/// Labeled (or label-free) sample collection. Inputs are scaled to [0, 1].
struct Dataset {
  Tensor inputs;            // M x d_in
  std::vector<int> labels;  // size M, or empty for an unlabeled set
  int num_classes = 0;

  std::size_t size() const { return inputs.rows(); }
  std::size_t input_dim() const { return inputs.cols(); }
  bool has_labels() const { return !labels.empty(); }
};

/// Parse an IDX image/label file pair (big-endian magic 0x00000803 for
/// images, 0x00000801 for labels, unsigned bytes). Pixels are divided by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Write a dataset as an IDX pair, quantising inputs to bytes
/// (round(v * 255)). Labels must fit in one byte.
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

/// Seeded Gaussian class clusters, clamped to [0, 1]. Samples are grouped by
/// class; with cluster_spread == 0 every sample of a class equals its mean.
Dataset synth_gen(int num_classes, int samples_per_class, int input_dim,
                  double cluster_spread, std::uint64_t seed);

/// Row/label gather helpers.
Tensor gather_rows(const Tensor& inputs, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               std::span<const std::size_t> indices);
Dataset gather_dataset(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace ktpfl
