#include "ktpfl/tensor.hpp"

#include <cmath>

#include "ktpfl/errors.hpp"

namespace ktpfl {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::size_t last_dim(const std::vector<std::size_t>& shape) {
  return shape.empty() ? 0 : shape.back();
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), cols_(last_dim(shape_)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), cols_(last_dim(shape_)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor: shape product " + std::to_string(shape_product(shape_)) +
                         " does not match data length " + std::to_string(data_.size()));
  }
}

std::size_t Tensor::rows() const {
  if (rank() <= 1) return data_.empty() ? 0 : 1;
  return size() / cols_;
}

std::size_t Tensor::cols() const { return cols_; }

void Tensor::check_finite(const std::string& context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(context + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace ktpfl
