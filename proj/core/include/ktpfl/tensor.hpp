#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ktpfl {

/// Dense row-major array of 64-bit floats. The universal value type for
/// inputs, logits, soft predictions and gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor vector(std::size_t n) { return Tensor({n}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows/cols of a rank-2 tensor; a rank-1 tensor is treated as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Throws NumericError if any entry is NaN or infinite.
  void check_finite(const std::string& context) const;

 private:
  std::vector<std::size_t> shape_;
  std::size_t cols_ = 0;  // stride of the last dimension block
  std::vector<double> data_;
};

}  // namespace ktpfl
