#pragma once

#include <cstdint>
#include <vector>

#include "ktpfl/tensor.hpp"

namespace ktpfl {

enum class Activation { kRelu, kNone };

struct DenseLayer {
  Tensor weights;  // [in x out]
  Tensor bias;     // [out]
  Activation activation = Activation::kNone;

  std::size_t input_dim() const { return weights.shape()[0]; }
  std::size_t output_dim() const { return weights.shape()[1]; }
};

/// Ordered stack of dense layers. The last layer always produces raw logits
/// (activation kNone); hidden layers use ReLU.
class Model {
 public:
  Model() = default;
  explicit Model(std::vector<DenseLayer> layers);

  /// Glorot-uniform initialised model for the dimension chain
  /// dims[0] -> dims[1] -> ... -> dims.back().
  static Model random(const std::vector<std::size_t>& dims, std::uint64_t seed);

  /// Same dimension chain, all weights and biases zero.
  static Model zeros(const std::vector<std::size_t>& dims);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t input_dim() const { return layers_.front().input_dim(); }
  std::size_t output_dim() const { return layers_.back().output_dim(); }

  /// d_n: total number of scalar parameters.
  std::size_t param_count() const;

  /// The dimension chain [in, hidden..., out]; architecture identity key.
  std::vector<std::size_t> dims() const;

 private:
  std::vector<DenseLayer> layers_;
};

/// One gradient tensor per parameter tensor, shapes mirroring the model.
struct GradientSet {
  struct LayerGrads {
    Tensor weights;
    Tensor bias;
  };
  std::vector<LayerGrads> layers;

  static GradientSet zeros_like(const Model& model);
  double squared_norm() const;
};

/// Batch forward pass; returns logits, one row per sample.
Tensor forward(const Model& model, const Tensor& batch);

/// Row-wise softmax(logits / temperature), max-subtracted for overflow safety.
Tensor softmax_t(const Tensor& logits, double temperature);

/// Mean over the batch of -log softmax_1(logits)[label].
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Mean over the batch of sum_c p_c (ln p_c - ln q_c), teacher first.
/// Entries are clamped to >= kKlEpsilon before any log.
double kl_divergence(const Tensor& teacher, const Tensor& student);

inline constexpr double kKlEpsilon = 1e-12;

/// Analytic gradient of cross_entropy(forward(model, batch), labels).
GradientSet grad_ce(const Model& model, const Tensor& batch, const std::vector<int>& labels);

/// Analytic gradient of kl_divergence(teacher, softmax_t(forward(model, batch), T))
/// with the teacher held constant.
GradientSet grad_kl_student(const Model& model, const Tensor& batch, const Tensor& teacher,
                            double temperature);

/// w <- w - lr * g, elementwise. lr must be >= 0.
Model sgd_step(const Model& model, const GradientSet& grads, double lr);

/// Canonical layer-order concatenation of all parameters (weights then bias).
Tensor flatten_params(const Model& model);

/// Inverse of flatten_params; `reference` supplies layer shapes.
Model unflatten_params(const Model& reference, const Tensor& flat);

/// Wire size of one full parameter payload, accounted as 32-bit floats.
std::size_t param_bytes(const Model& model);

}  // namespace ktpfl
