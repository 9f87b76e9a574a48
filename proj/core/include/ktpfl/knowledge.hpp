#pragma once

#include <span>
#include <string>
#include <vector>

#include "ktpfl/nn.hpp"
#include "ktpfl/tensor.hpp"

namespace ktpfl {

/// Per-client soft predictions over one public mini-batch. `clients` lists
/// the owning client ids in ascending order, aligned with `predictions`.
struct SoftPredictionBank {
  std::vector<int> clients;
  std::vector<Tensor> predictions;  // each B x C, row-stochastic
  std::vector<std::size_t> sample_indices;

  std::size_t batch_rows() const { return predictions.empty() ? 0 : predictions[0].rows(); }
  std::size_t num_classes() const { return predictions.empty() ? 0 : predictions[0].cols(); }
  /// Index into `predictions` for a client id, or -1.
  int find(int client) const;
};

/// N x N knowledge coefficients; entry (m, n) is client m's teaching weight
/// toward client n. Row-major storage.
class CoefficientMatrix {
 public:
  CoefficientMatrix() = default;
  explicit CoefficientMatrix(int n) : n_(n), values_(std::size_t(n) * n, 0.0) {}

  /// All entries 1/N: the neutral prior and the regularizer's fixed point.
  static CoefficientMatrix uniform(int n);

  int size() const { return n_; }
  double& at(int m, int n) { return values_[std::size_t(m) * n_ + n]; }
  double at(int m, int n) const { return values_[std::size_t(m) * n_ + n]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double column_sum(int n) const;
  bool column_stochastic(double tol = 1e-9) const;

 private:
  int n_ = 0;
  std::vector<double> values_;
};

struct KnowledgeHyper {
  double lambda = 1.0;       // weight of the distillation term
  double rho = 0.1;          // pull of c toward 1/N
  double temperature = 1.0;  // softmax temperature, > 0
  double eta3 = 0.01;        // coefficient learning rate (0 freezes c)
  int top_k = 5;
};

/// softmax_t(forward(model, batch), T); the client's collaborative knowledge.
Tensor soft_predict(const Model& model, const Tensor& public_batch, double temperature);

/// Weighted mixture sum_i weights[i] * predictions[i], rowwise.
Tensor mix_predictions(std::span<const Tensor> predictions, std::span<const double> weights);

/// Personalized teacher for `client`: sum_m c[m][client] * S_m. The bank must
/// hold a prediction for every row of c.
Tensor ensemble_teacher(const SoftPredictionBank& bank, const CoefficientMatrix& c, int client);

/// Gradient of
///   J(c) = sum_n size_weights[n] * lambda * KL(sum_m c[m][n] S_m || S_n)
///        + rho * ||c - 1/N||^2
/// with model predictions held fixed. The caller applies c <- c - eta3 * g.
CoefficientMatrix coeff_gradient(const SoftPredictionBank& bank, const CoefficientMatrix& c,
                                 std::span<const double> size_weights,
                                 const KnowledgeHyper& hyper);

/// Clamp entries to >= 0 and rescale every column to sum 1; an all-zero
/// column resets to uniform. Idempotent.
CoefficientMatrix normalize_columns(const CoefficientMatrix& c);

/// Same, restricted to the given columns.
void normalize_columns_inplace(CoefficientMatrix& c, std::span<const int> columns);

/// c[m][n] = max(0, cosine(S_m, S_n)) over flattened predictions, then
/// column-normalized.
CoefficientMatrix cosine_coefficients(const SoftPredictionBank& bank);

/// Keep the K most cosine-similar teachers per column (self always
/// qualifies), zero the rest, renormalize.
CoefficientMatrix topk_coefficients(const SoftPredictionBank& bank, int top_k);

/// N rows x N columns, 9 significant digits.
std::string coefficients_csv(const CoefficientMatrix& c);

}  // namespace ktpfl
