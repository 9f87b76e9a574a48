#include "ktpfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ktpfl/errors.hpp"
#include "ktpfl/rng.hpp"

namespace ktpfl {

namespace {

// C = A (BxK) * W (KxC), accumulated in i-k-j order.
Tensor matmul(const Tensor& a, const Tensor& w) {
  const std::size_t n = a.rows(), k = a.cols(), m = w.cols();
  Tensor out = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pw = w.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double v = pa[i * k + l];
      if (v == 0.0) continue;
      const double* wrow = pw + l * m;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += v * wrow[j];
    }
  }
  return out;
}

// A^T (KxB) * D (BxC) -> KxC
Tensor matmul_at_b(const Tensor& a, const Tensor& d) {
  const std::size_t n = a.rows(), k = a.cols(), m = d.cols();
  Tensor out = Tensor::matrix(k, m);
  const double* pa = a.data().data();
  const double* pd = d.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double v = pa[i * k + l];
      if (v == 0.0) continue;
      const double* drow = pd + i * m;
      double* orow = po + l * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += v * drow[j];
    }
  }
  return out;
}

// D (BxC) * W^T (CxK) -> BxK
Tensor matmul_a_bt(const Tensor& d, const Tensor& w) {
  const std::size_t n = d.rows(), m = d.cols(), k = w.rows();
  Tensor out = Tensor::matrix(n, k);
  const double* pd = d.data().data();
  const double* pw = w.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double v = pd[i * m + j];
      if (v == 0.0) continue;
      double* orow = po + i * k;
      for (std::size_t l = 0; l < k; ++l) orow[l] += v * pw[l * m + j];
    }
  }
  return out;
}

struct ForwardTrace {
  // layer_inputs[k] is the input to layer k; logits is the final output.
  std::vector<Tensor> layer_inputs;
  Tensor logits;
};

ForwardTrace forward_trace(const Model& model, const Tensor& batch) {
  if (model.layers().empty()) throw DimensionError("forward: model has no layers");
  ForwardTrace trace;
  Tensor current = batch;
  const auto& layers = model.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const DenseLayer& layer = layers[k];
    if (current.cols() != layer.input_dim()) {
      throw DimensionError("forward: layer " + std::to_string(k) + " expects input dim " +
                           std::to_string(layer.input_dim()) + ", got " +
                           std::to_string(current.cols()));
    }
    trace.layer_inputs.push_back(current);
    Tensor z = matmul(current, layer.weights);
    const std::size_t out = layer.output_dim();
    double* pz = z.data().data();
    const double* pb = layer.bias.data().data();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double* row = pz + i * out;
      for (std::size_t j = 0; j < out; ++j) row[j] += pb[j];
    }
    if (layer.activation == Activation::kRelu) {
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    }
    current = std::move(z);
  }
  trace.logits = std::move(current);
  return trace;
}

// Backpropagate d(loss)/d(logits) through the model.
GradientSet backward_from_logits(const Model& model, const ForwardTrace& trace, Tensor dlogits) {
  const auto& layers = model.layers();
  GradientSet grads = GradientSet::zeros_like(model);
  Tensor delta = std::move(dlogits);  // gradient w.r.t. layer k's post-activation
  for (std::size_t k = layers.size(); k-- > 0;) {
    const DenseLayer& layer = layers[k];
    if (layer.activation == Activation::kRelu) {
      // Output of layer k was relu(z); recover the mask from layer k+1's input.
      const Tensor& activated = trace.layer_inputs[k + 1];
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (activated[i] <= 0.0) delta[i] = 0.0;
      }
    }
    grads.layers[k].weights = matmul_at_b(trace.layer_inputs[k], delta);
    Tensor& db = grads.layers[k].bias;
    const std::size_t out = layer.output_dim();
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const auto row = delta.row(i);
      for (std::size_t j = 0; j < out; ++j) db[j] += row[j];
    }
    if (k > 0) delta = matmul_a_bt(delta, layer.weights);
  }
  return grads;
}

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw DimensionError("labels: expected " + std::to_string(rows) + " labels, got " +
                         std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("sample " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                      " out of range [0, " + std::to_string(classes) + ")");
    }
  }
}

void check_stochastic_rows(const Tensor& t, const char* name) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sum = 0.0;
    for (double v : t.row(i)) {
      if (v < -1e-9) {
        throw DataError(std::string(name) + ": row " + std::to_string(i) +
                        " has a negative entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw DataError(std::string(name) + ": row " + std::to_string(i) + " sums to " +
                      std::to_string(sum) + ", not 1");
    }
  }
}

}  // namespace

Model::Model(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    if (layers_[k].output_dim() != layers_[k + 1].input_dim()) {
      throw DimensionError("model: layer " + std::to_string(k) + " output dim " +
                           std::to_string(layers_[k].output_dim()) +
                           " does not chain into layer " + std::to_string(k + 1) +
                           " input dim " + std::to_string(layers_[k + 1].input_dim()));
    }
  }
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].bias.size() != layers_[k].output_dim()) {
      throw DimensionError("model: layer " + std::to_string(k) + " bias size mismatch");
    }
  }
  if (!layers_.empty()) layers_.back().activation = Activation::kNone;
}

Model Model::random(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw DimensionError("model: need at least input and output dims");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weights = Tensor::matrix(dims[k], dims[k + 1]);
    layer.bias = Tensor::vector(dims[k + 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
    for (double& w : layer.weights.data()) w = (2.0 * uniform_double(rng) - 1.0) * bound;
    layer.activation = (k + 2 < dims.size()) ? Activation::kRelu : Activation::kNone;
    layers.push_back(std::move(layer));
  }
  return Model(std::move(layers));
}

Model Model::zeros(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw DimensionError("model: need at least input and output dims");
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weights = Tensor::matrix(dims[k], dims[k + 1]);
    layer.bias = Tensor::vector(dims[k + 1]);
    layer.activation = (k + 2 < dims.size()) ? Activation::kRelu : Activation::kNone;
    layers.push_back(std::move(layer));
  }
  return Model(std::move(layers));
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<std::size_t> Model::dims() const {
  std::vector<std::size_t> d;
  d.push_back(input_dim());
  for (const auto& layer : layers_) d.push_back(layer.output_dim());
  return d;
}

GradientSet GradientSet::zeros_like(const Model& model) {
  GradientSet g;
  for (const auto& layer : model.layers()) {
    g.layers.push_back({Tensor(layer.weights.shape()), Tensor(layer.bias.shape())});
  }
  return g;
}

double GradientSet::squared_norm() const {
  double s = 0.0;
  for (const auto& layer : layers) {
    for (double v : layer.weights.data()) s += v * v;
    for (double v : layer.bias.data()) s += v * v;
  }
  return s;
}

Tensor forward(const Model& model, const Tensor& batch) {
  Tensor logits = forward_trace(model, batch).logits;
  logits.check_finite("forward");
  return logits;
}

Tensor softmax_t(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax_t: temperature must be > 0, got " +
                         std::to_string(temperature));
  }
  Tensor out = logits;
  const std::size_t cols = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    double max_z = row[0];
    for (double v : row) max_z = std::max(max_z, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp((row[j] - max_z) / temperature);
      sum += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] /= sum;
      if (row[j] < 1e-300) row[j] = 1e-300;  // keep entries strictly positive
    }
  }
  out.check_finite("softmax_t");
  return out;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_labels(labels, logits.rows(), logits.cols());
  const std::size_t cols = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    double max_z = row[0];
    for (double v : row) max_z = std::max(max_z, v);
    double lse = 0.0;
    for (std::size_t j = 0; j < cols; ++j) lse += std::exp(row[j] - max_z);
    total += std::log(lse) + max_z - row[static_cast<std::size_t>(labels[i])];
  }
  double loss = total / static_cast<double>(logits.rows());
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  return loss;
}

double kl_divergence(const Tensor& teacher, const Tensor& student) {
  if (!teacher.same_shape(student)) {
    throw DimensionError("kl_divergence: teacher and student shapes differ");
  }
  check_stochastic_rows(teacher, "kl_divergence teacher");
  check_stochastic_rows(student, "kl_divergence student");
  double total = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double p = std::max(teacher[i], kKlEpsilon);
    const double q = std::max(student[i], kKlEpsilon);
    total += p * (std::log(p) - std::log(q));
  }
  double kl = total / static_cast<double>(teacher.rows());
  if (!std::isfinite(kl)) throw NumericError("kl_divergence: non-finite value");
  return kl;
}

GradientSet grad_ce(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
  ForwardTrace trace = forward_trace(model, batch);
  check_labels(labels, trace.logits.rows(), trace.logits.cols());
  Tensor dlogits = softmax_t(trace.logits, 1.0);
  const double inv_b = 1.0 / static_cast<double>(dlogits.rows());
  for (std::size_t i = 0; i < dlogits.rows(); ++i) {
    auto row = dlogits.row(i);
    row[static_cast<std::size_t>(labels[i])] -= 1.0;
    for (double& v : row) v *= inv_b;
  }
  return backward_from_logits(model, trace, std::move(dlogits));
}

GradientSet grad_kl_student(const Model& model, const Tensor& batch, const Tensor& teacher,
                            double temperature) {
  check_stochastic_rows(teacher, "grad_kl_student teacher");
  ForwardTrace trace = forward_trace(model, batch);
  if (!trace.logits.same_shape(teacher)) {
    throw DimensionError("grad_kl_student: teacher shape does not match logits");
  }
  // d/dz of mean_b sum_c p_c (ln p_c - ln softmax_T(z)_c) is (q - p) / (B*T).
  Tensor dlogits = softmax_t(trace.logits, temperature);
  const double scale = 1.0 / (static_cast<double>(dlogits.rows()) * temperature);
  for (std::size_t i = 0; i < dlogits.size(); ++i) {
    dlogits[i] = (dlogits[i] - teacher[i]) * scale;
  }
  return backward_from_logits(model, trace, std::move(dlogits));
}

Model sgd_step(const Model& model, const GradientSet& grads, double lr) {
  if (lr < 0.0) throw ParameterError("sgd_step: negative learning rate");
  if (grads.layers.size() != model.layers().size()) {
    throw DimensionError("sgd_step: gradient layer count mismatch");
  }
  Model out = model;
  for (std::size_t k = 0; k < out.layers().size(); ++k) {
    DenseLayer& layer = out.layers()[k];
    const auto& g = grads.layers[k];
    if (!layer.weights.same_shape(g.weights) || !layer.bias.same_shape(g.bias)) {
      throw DimensionError("sgd_step: layer " + std::to_string(k) + " gradient shape mismatch");
    }
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      layer.weights[i] -= lr * g.weights[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] -= lr * g.bias[i];
    }
  }
  return out;
}

Tensor flatten_params(const Model& model) {
  std::vector<double> flat;
  flat.reserve(model.param_count());
  for (const auto& layer : model.layers()) {
    flat.insert(flat.end(), layer.weights.data().begin(), layer.weights.data().end());
    flat.insert(flat.end(), layer.bias.data().begin(), layer.bias.data().end());
  }
  return Tensor({flat.size()}, std::move(flat));
}

Model unflatten_params(const Model& reference, const Tensor& flat) {
  if (flat.size() != reference.param_count()) {
    throw DimensionError("unflatten_params: expected " + std::to_string(reference.param_count()) +
                         " values, got " + std::to_string(flat.size()));
  }
  Model out = reference;
  std::size_t offset = 0;
  for (auto& layer : out.layers()) {
    for (double& v : layer.weights.data()) v = flat[offset++];
    for (double& v : layer.bias.data()) v = flat[offset++];
  }
  return out;
}

std::size_t param_bytes(const Model& model) { return model.param_count() * 4; }

}  // namespace ktpfl
