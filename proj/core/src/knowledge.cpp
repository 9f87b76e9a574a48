#include "ktpfl/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ktpfl/errors.hpp"

namespace ktpfl {

namespace {

void check_bank_complete(const SoftPredictionBank& bank, int n_clients, const char* who) {
  if (static_cast<int>(bank.clients.size()) != n_clients) {
    throw ProtocolError(std::string(who) + ": bank holds " +
                        std::to_string(bank.clients.size()) + " predictions for " +
                        std::to_string(n_clients) + " clients");
  }
  for (int n = 0; n < n_clients; ++n) {
    if (bank.clients[n] != n || bank.predictions[n].empty()) {
      throw ProtocolError(std::string(who) + ": missing prediction for client " +
                          std::to_string(n));
    }
  }
}

double cosine(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw NumericError("cosine_coefficients: zero-norm prediction vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Pairwise max(0, cosine) similarities; the raw material for Sim-pFL / TopK-pFL.
std::vector<double> similarity_matrix(const SoftPredictionBank& bank) {
  const int n = static_cast<int>(bank.clients.size());
  std::vector<double> sim(std::size_t(n) * n, 0.0);
  for (int m = 0; m < n; ++m) {
    for (int j = m; j < n; ++j) {
      double s = std::max(0.0, cosine(bank.predictions[m], bank.predictions[j]));
      sim[std::size_t(m) * n + j] = s;
      sim[std::size_t(j) * n + m] = s;
    }
  }
  return sim;
}

}  // namespace

int SoftPredictionBank::find(int client) const {
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i] == client) return static_cast<int>(i);
  }
  return -1;
}

CoefficientMatrix CoefficientMatrix::uniform(int n) {
  CoefficientMatrix c(n);
  const double v = 1.0 / static_cast<double>(n);
  std::fill(c.values_.begin(), c.values_.end(), v);
  return c;
}

double CoefficientMatrix::column_sum(int n) const {
  double sum = 0.0;
  for (int m = 0; m < n_; ++m) sum += at(m, n);
  return sum;
}

bool CoefficientMatrix::column_stochastic(double tol) const {
  for (int n = 0; n < n_; ++n) {
    if (std::abs(column_sum(n) - 1.0) > tol) return false;
    for (int m = 0; m < n_; ++m) {
      if (at(m, n) < -tol || at(m, n) > 1.0 + tol) return false;
    }
  }
  return true;
}

Tensor soft_predict(const Model& model, const Tensor& public_batch, double temperature) {
  return softmax_t(forward(model, public_batch), temperature);
}

Tensor mix_predictions(std::span<const Tensor> predictions, std::span<const double> weights) {
  if (predictions.empty() || predictions.size() != weights.size()) {
    throw ProtocolError("mix_predictions: predictions/weights size mismatch");
  }
  Tensor out(predictions[0].shape());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!predictions[i].same_shape(out)) {
      throw ProtocolError("mix_predictions: prediction " + std::to_string(i) +
                          " shape mismatch");
    }
    const double w = weights[i];
    if (w == 0.0) continue;
    const auto& src = predictions[i].data();
    auto& dst = out.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
  }
  out.check_finite("mix_predictions");
  return out;
}

Tensor ensemble_teacher(const SoftPredictionBank& bank, const CoefficientMatrix& c,
                        int client) {
  check_bank_complete(bank, c.size(), "ensemble_teacher");
  std::vector<double> weights(c.size());
  for (int m = 0; m < c.size(); ++m) weights[m] = c.at(m, client);
  return mix_predictions(bank.predictions, weights);
}

CoefficientMatrix coeff_gradient(const SoftPredictionBank& bank, const CoefficientMatrix& c,
                                 std::span<const double> size_weights,
                                 const KnowledgeHyper& hyper) {
  const int n_clients = c.size();
  check_bank_complete(bank, n_clients, "coeff_gradient");
  if (static_cast<int>(size_weights.size()) != n_clients) {
    throw ProtocolError("coeff_gradient: size_weights length mismatch");
  }
  const std::size_t rows = bank.batch_rows();
  const std::size_t cols = bank.num_classes();
  const double uniform = 1.0 / static_cast<double>(n_clients);

  CoefficientMatrix grad(n_clients);
  std::vector<double> log_term(rows * cols);
  for (int n = 0; n < n_clients; ++n) {
    // Teacher for column n under the current raw coefficients.
    std::vector<double> weights(n_clients);
    for (int m = 0; m < n_clients; ++m) weights[m] = c.at(m, n);
    Tensor teacher = mix_predictions(bank.predictions, weights);

    // d KL(p_n || S_n) / d p = ln p + 1 - ln S_n, clamped before the logs.
    const auto& own = bank.predictions[n].data();
    for (std::size_t i = 0; i < log_term.size(); ++i) {
      const double p = std::max(teacher[i], kKlEpsilon);
      const double s = std::max(own[i], kKlEpsilon);
      log_term[i] = std::log(p) + 1.0 - std::log(s);
    }

    const double scale = hyper.lambda * size_weights[n] / static_cast<double>(rows);
    for (int m = 0; m < n_clients; ++m) {
      double dot = 0.0;
      const auto& pred = bank.predictions[m].data();
      for (std::size_t i = 0; i < log_term.size(); ++i) dot += pred[i] * log_term[i];
      grad.at(m, n) = scale * dot + 2.0 * hyper.rho * (c.at(m, n) - uniform);
    }
  }
  return grad;
}

CoefficientMatrix normalize_columns(const CoefficientMatrix& c) {
  CoefficientMatrix out = c;
  std::vector<int> cols(c.size());
  std::iota(cols.begin(), cols.end(), 0);
  normalize_columns_inplace(out, cols);
  return out;
}

void normalize_columns_inplace(CoefficientMatrix& c, std::span<const int> columns) {
  const double uniform = 1.0 / static_cast<double>(c.size());
  for (int n : columns) {
    double sum = 0.0;
    for (int m = 0; m < c.size(); ++m) {
      if (c.at(m, n) < 0.0) c.at(m, n) = 0.0;
      sum += c.at(m, n);
    }
    if (sum < 1e-300) {
      for (int m = 0; m < c.size(); ++m) c.at(m, n) = uniform;
    } else {
      for (int m = 0; m < c.size(); ++m) c.at(m, n) /= sum;
    }
  }
}

CoefficientMatrix cosine_coefficients(const SoftPredictionBank& bank) {
  const int n = static_cast<int>(bank.clients.size());
  check_bank_complete(bank, n, "cosine_coefficients");
  auto sim = similarity_matrix(bank);
  CoefficientMatrix c(n);
  c.values().assign(sim.begin(), sim.end());
  return normalize_columns(c);
}

CoefficientMatrix topk_coefficients(const SoftPredictionBank& bank, int top_k) {
  const int n = static_cast<int>(bank.clients.size());
  check_bank_complete(bank, n, "topk_coefficients");
  if (top_k < 1 || top_k > n) {
    throw ConfigError("topk_coefficients: K " + std::to_string(top_k) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  auto sim = similarity_matrix(bank);
  CoefficientMatrix c(n);
  for (int col = 0; col < n; ++col) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double sa = sim[std::size_t(a) * n + col];
      const double sb = sim[std::size_t(b) * n + col];
      if (sa != sb) return sa > sb;
      if ((a == col) != (b == col)) return a == col;  // self wins ties
      return a < b;
    });
    for (int r = 0; r < top_k; ++r) {
      c.at(order[r], col) = sim[std::size_t(order[r]) * n + col];
    }
  }
  return normalize_columns(c);
}

std::string coefficients_csv(const CoefficientMatrix& c) {
  std::string out;
  char buf[32];
  for (int m = 0; m < c.size(); ++m) {
    for (int n = 0; n < c.size(); ++n) {
      std::snprintf(buf, sizeof(buf), "%.9g", c.at(m, n));
      if (n) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace ktpfl
