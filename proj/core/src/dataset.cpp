#include "ktpfl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ktpfl/errors.hpp"
#include "ktpfl/rng.hpp"

namespace ktpfl {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4) {
    throw FormatError(path + ": truncated while reading " + what);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::string hex_magic(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

std::vector<unsigned char> read_bytes(std::ifstream& in, std::size_t count,
                                      const std::string& path) {
  std::vector<unsigned char> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw FormatError(path + ": truncated, expected " + std::to_string(count) +
                      " data bytes, got " + std::to_string(in.gcount()));
  }
  return bytes;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError(images_path + ": cannot open");
  std::uint32_t magic = read_u32_be(img, images_path, "magic");
  if (magic != kImagesMagic) {
    throw FormatError(images_path + ": bad image magic " + hex_magic(magic) + ", expected " +
                      hex_magic(kImagesMagic));
  }
  std::uint32_t count = read_u32_be(img, images_path, "image count");
  std::uint32_t rows = read_u32_be(img, images_path, "row count");
  std::uint32_t cols = read_u32_be(img, images_path, "column count");
  const std::size_t dim = std::size_t(rows) * cols;
  auto pixels = read_bytes(img, std::size_t(count) * dim, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError(labels_path + ": cannot open");
  std::uint32_t lab_magic = read_u32_be(lab, labels_path, "magic");
  if (lab_magic != kLabelsMagic) {
    throw FormatError(labels_path + ": bad label magic " + hex_magic(lab_magic) +
                      ", expected " + hex_magic(kLabelsMagic));
  }
  std::uint32_t lab_count = read_u32_be(lab, labels_path, "label count");
  if (lab_count != count) {
    throw DataError(images_path + ": " + std::to_string(count) + " images but " +
                    std::to_string(lab_count) + " labels");
  }
  auto label_bytes = read_bytes(lab, lab_count, labels_path);

  Dataset ds;
  ds.inputs = Tensor::matrix(count, dim);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    ds.inputs[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  ds.labels.resize(lab_count);
  int max_label = 0;
  for (std::size_t i = 0; i < label_bytes.size(); ++i) {
    ds.labels[i] = static_cast<int>(label_bytes[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  if (!ds.has_labels()) throw DataError("write_idx: dataset has no labels");
  for (int label : ds.labels) {
    if (label < 0 || label > 255) {
      throw DataError("write_idx: label " + std::to_string(label) + " does not fit in a byte");
    }
  }
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw FormatError(images_path + ": cannot open for writing");
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(img, static_cast<std::uint32_t>(ds.input_dim()));
  write_u32_be(img, 1);
  for (double v : ds.inputs.data()) {
    double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    unsigned char byte = static_cast<unsigned char>(q);
    img.write(reinterpret_cast<const char*>(&byte), 1);
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError(labels_path + ": cannot open for writing");
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (int label : ds.labels) {
    unsigned char byte = static_cast<unsigned char>(label);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

Dataset synth_gen(int num_classes, int samples_per_class, int input_dim,
                  double cluster_spread, std::uint64_t seed) {
  if (num_classes < 1 || samples_per_class < 1 || input_dim < 1) {
    throw ParameterError("synth_gen: counts must be positive");
  }
  if (cluster_spread < 0.0) throw ParameterError("synth_gen: negative cluster_spread");

  std::mt19937_64 mean_rng = make_rng(seed, Stream::kSynthMeans);
  Tensor means = Tensor::matrix(num_classes, input_dim);
  for (double& v : means.data()) v = 0.2 + 0.6 * uniform_double(mean_rng);

  std::mt19937_64 sample_rng = make_rng(seed, Stream::kSynthSamples);
  Dataset ds;
  const std::size_t total = std::size_t(num_classes) * samples_per_class;
  ds.inputs = Tensor::matrix(total, input_dim);
  ds.labels.reserve(total);
  ds.num_classes = num_classes;
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < samples_per_class; ++s, ++row) {
      auto out = ds.inputs.row(row);
      const auto mean = means.row(c);
      for (int d = 0; d < input_dim; ++d) {
        double v = mean[d];
        if (cluster_spread > 0.0) v += cluster_spread * normal_sample(sample_rng);
        out[d] = std::clamp(v, 0.0, 1.0);
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Tensor gather_rows(const Tensor& inputs, std::span<const std::size_t> indices) {
  Tensor out = Tensor::matrix(indices.size(), inputs.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = inputs.row(indices[i]);
    auto dst = out.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) out.push_back(labels[idx]);
  return out;
}

Dataset gather_dataset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.inputs = gather_rows(ds.inputs, indices);
  if (ds.has_labels()) out.labels = gather_labels(ds.labels, indices);
  out.num_classes = ds.num_classes;
  return out;
}

}  // namespace ktpfl
