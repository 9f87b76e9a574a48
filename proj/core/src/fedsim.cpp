#include "ktpfl/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <thread>

#include "ktpfl/errors.hpp"
#include "ktpfl/rng.hpp"

namespace ktpfl {

namespace {

// Static interleaved fan-out over clients. Per-item work must be independent;
// failures are reported for the lowest-indexed item, wrapped as the protocol
// error contract requires.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body,
                  const std::function<std::string(std::size_t)>& label) {
  auto wrap = [&](std::size_t i, const std::string& what) {
    return ProtocolError(label(i) + ": " + what);
  };
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (const std::exception& e) {
        throw wrap(i, e.what());
      }
    }
    return;
  }
  const int workers = static_cast<int>(std::min<std::size_t>(threads, count));
  std::vector<std::optional<std::string>> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t]() {
      for (std::size_t i = static_cast<std::size_t>(t); i < count;
           i += static_cast<std::size_t>(workers)) {
        try {
          body(i);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        } catch (...) {
          errors[i] = "unknown error";
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < count; ++i) {
    if (errors[i]) throw wrap(i, *errors[i]);
  }
}

std::vector<int> all_clients(int n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

// Normalized uniform weights; built the same way restricted_weights builds
// coefficient columns so that a frozen-uniform KT-pFL run and FedMD produce
// bit-identical teachers.
std::vector<double> uniform_weights(std::size_t count) {
  std::vector<double> w(count, 1.0 / static_cast<double>(count));
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

Tensor flat_average(const std::vector<const Model*>& models, const std::vector<double>& weights) {
  Tensor acc = Tensor({models[0]->param_count()});
  for (std::size_t i = 0; i < models.size(); ++i) {
    Tensor flat = flatten_params(*models[i]);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[i] * flat[j];
  }
  return acc;
}

}  // namespace

const char* algorithm_name(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kKtPfl: return "ktpfl";
    case Algorithm::kSimPfl: return "simpfl";
    case Algorithm::kTopkPfl: return "topkpfl";
    case Algorithm::kFedMd: return "fedmd";
    case Algorithm::kFedDf: return "feddf";
    case Algorithm::kPFedDf: return "pfeddf";
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kLocalOnly: return "local";
    case Algorithm::kKtPflHomogeneous: return "ktpfl_homogeneous";
  }
  return "unknown";
}

std::optional<Algorithm> algorithm_from_name(const std::string& name) {
  static const std::map<std::string, Algorithm> table = {
      {"ktpfl", Algorithm::kKtPfl},
      {"simpfl", Algorithm::kSimPfl},
      {"topkpfl", Algorithm::kTopkPfl},
      {"fedmd", Algorithm::kFedMd},
      {"feddf", Algorithm::kFedDf},
      {"pfeddf", Algorithm::kPFedDf},
      {"fedavg", Algorithm::kFedAvg},
      {"local", Algorithm::kLocalOnly},
      {"ktpfl_homogeneous", Algorithm::kKtPflHomogeneous},
  };
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

bool algorithm_requires_homogeneous(Algorithm algorithm) {
  return algorithm == Algorithm::kFedAvg || algorithm == Algorithm::kKtPflHomogeneous;
}

const char* payload_name(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::kSoftPrediction: return "soft_prediction";
    case PayloadKind::kParameters: return "parameters";
    case PayloadKind::kCoefficients: return "coefficients";
  }
  return "unknown";
}

void CommsLedger::append(const CommsRecord& record) {
  records_.push_back(record);
  total_up_ += record.uplink_bytes;
  total_down_ += record.downlink_bytes;
  up_by_kind_[static_cast<std::size_t>(record.kind)] += record.uplink_bytes;
  down_by_kind_[static_cast<std::size_t>(record.kind)] += record.downlink_bytes;
}

std::uint64_t CommsLedger::uplink_by_kind(PayloadKind kind) const {
  return up_by_kind_[static_cast<std::size_t>(kind)];
}

std::uint64_t CommsLedger::downlink_by_kind(PayloadKind kind) const {
  return down_by_kind_[static_cast<std::size_t>(kind)];
}

namespace {
double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace

double RoundMetrics::avg_accuracy() const { return mean(test_accuracy); }
double RoundMetrics::avg_private_loss() const { return mean(private_loss); }
double RoundMetrics::avg_distill_loss() const { return mean(distill_loss); }

Model client_local_update(const Model& model, const Tensor& train_inputs,
                          const std::vector<int>& train_labels, int epochs,
                          std::size_t batch_size, double lr, std::uint64_t batch_seed) {
  if (train_inputs.rows() == 0) throw ConfigError("client_local_update: empty shard");
  if (epochs < 1) throw ParameterError("client_local_update: epochs must be >= 1");
  std::vector<std::size_t> local(train_inputs.rows());
  std::iota(local.begin(), local.end(), std::size_t{0});
  Model current = model;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& slice : batches(local, batch_size, batch_seed, epoch)) {
      Tensor x = gather_rows(train_inputs, slice);
      std::vector<int> y = gather_labels(train_labels, slice);
      current = sgd_step(current, grad_ce(current, x, y), lr);
    }
  }
  flatten_params(current).check_finite("client_local_update");
  return current;
}

Model client_distill(const Model& model, const Tensor& public_batch, const Tensor& teacher,
                     int steps, double lr, double temperature) {
  if (steps < 0) throw ParameterError("client_distill: negative step count");
  if (steps == 0 || public_batch.rows() == 0) return model;
  if (teacher.rows() != public_batch.rows()) {
    throw ProtocolError("client_distill: teacher has " + std::to_string(teacher.rows()) +
                        " rows for a batch of " + std::to_string(public_batch.rows()));
  }
  Model current = model;
  for (int step = 0; step < steps; ++step) {
    current = sgd_step(current, grad_kl_student(current, public_batch, teacher, temperature), lr);
  }
  flatten_params(current).check_finite("client_distill");
  return current;
}

std::vector<int> sample_clients(int num_clients, double rate, int round, std::uint64_t seed) {
  if (!(rate > 0.0) || rate > 1.0) {
    throw ParameterError("sample_clients: rate must be in (0, 1]");
  }
  int count = static_cast<int>(std::ceil(rate * num_clients - 1e-9));
  count = std::clamp(count, 1, num_clients);
  auto ids = all_clients(num_clients);
  auto rng = make_rng(seed, Stream::kClientSample, {static_cast<std::uint64_t>(round)});
  shuffle_vector(ids, rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

double test_accuracy(const Model& model, const Tensor& inputs, const std::vector<int>& labels) {
  if (inputs.rows() == 0) throw DataError("test_accuracy: empty test set");
  Tensor logits = forward(model, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

Simulation::Simulation(Dataset data, Partition partition, Dataset public_source,
                       std::vector<Model> initial_models, SimOptions options)
    : data_(std::move(data)),
      partition_(std::move(partition)),
      public_source_(std::move(public_source)),
      opt_(options) {
  const std::size_t n = partition_.num_clients();
  if (n == 0) throw ConfigError("simulation: no clients");
  if (initial_models.size() != n) {
    throw ConfigError("simulation: " + std::to_string(initial_models.size()) + " models for " +
                      std::to_string(n) + " clients");
  }
  if (partition_.test_shards.size() != n) {
    throw ConfigError("simulation: test shard count mismatch");
  }

  // Disjointness across private, test and public index sets.
  std::vector<char> used(data_.size(), 0);
  auto mark = [&](const std::vector<std::size_t>& indices, const char* what) {
    for (std::size_t idx : indices) {
      if (idx >= data_.size()) {
        throw ConfigError(std::string("simulation: ") + what + " index out of range");
      }
      if (used[idx]) {
        throw ConfigError(std::string("simulation: ") + what + " index " +
                          std::to_string(idx) + " already assigned");
      }
      used[idx] = 1;
    }
  };
  for (std::size_t i = 0; i < n; ++i) mark(partition_.private_shards[i], "private");
  for (std::size_t i = 0; i < n; ++i) mark(partition_.test_shards[i], "test");
  mark(partition_.public_indices, "public");

  std::vector<std::vector<std::size_t>> group_dims;
  clients_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ClientState client;
    client.id = static_cast<int>(i);
    client.model = std::move(initial_models[i]);
    if (client.model.input_dim() != data_.input_dim()) {
      throw ConfigError("simulation: client " + std::to_string(i) + " model input dim " +
                        std::to_string(client.model.input_dim()) + " != data dim " +
                        std::to_string(data_.input_dim()));
    }
    if (static_cast<int>(client.model.output_dim()) != data_.num_classes) {
      throw ConfigError("simulation: client " + std::to_string(i) + " output dim mismatch");
    }
    client.train_indices = partition_.private_shards[i];
    client.test_indices = partition_.test_shards[i];
    if (client.train_indices.empty()) {
      throw ConfigError("simulation: client " + std::to_string(i) + " has an empty shard");
    }
    if (client.test_indices.empty()) {
      throw ConfigError("simulation: client " + std::to_string(i) + " has no test samples");
    }
    client.train_inputs = gather_rows(data_.inputs, client.train_indices);
    client.train_labels = gather_labels(data_.labels, client.train_indices);
    client.test_inputs = gather_rows(data_.inputs, client.test_indices);
    client.test_labels = gather_labels(data_.labels, client.test_indices);

    auto dims = client.model.dims();
    auto it = std::find(group_dims.begin(), group_dims.end(), dims);
    if (it == group_dims.end()) {
      group_dims.push_back(dims);
      client.group = static_cast<int>(group_dims.size()) - 1;
    } else {
      client.group = static_cast<int>(it - group_dims.begin());
    }
    clients_.push_back(std::move(client));
  }

  if (algorithm_requires_homogeneous(opt_.algorithm) && group_dims.size() > 1) {
    throw ConfigError(std::string("simulation: ") + algorithm_name(opt_.algorithm) +
                      " requires one shared architecture, found " +
                      std::to_string(group_dims.size()));
  }

  const double total = static_cast<double>(partition_.total_private());
  size_weights_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    size_weights_[i] = static_cast<double>(clients_[i].size()) / total;
  }

  coeff_ = CoefficientMatrix::uniform(static_cast<int>(n));

  if (opt_.public_size > public_source_.size()) {
    throw ConfigError("simulation: public size " + std::to_string(opt_.public_size) +
                      " exceeds public source size " + std::to_string(public_source_.size()));
  }
  if (!opt_.public_resample_each_round) {
    public_round_ = carve_public(public_source_, opt_.public_size, opt_.public_labeled,
                                 opt_.seed);
  }
}

RoundMetrics Simulation::fresh_metrics() const {
  RoundMetrics rm;
  rm.round = round_;
  rm.test_accuracy.assign(clients_.size(), 0.0);
  rm.private_loss.assign(clients_.size(), 0.0);
  rm.distill_loss.assign(clients_.size(), 0.0);
  rm.up_bytes.assign(clients_.size(), 0);
  rm.down_bytes.assign(clients_.size(), 0);
  return rm;
}

void Simulation::log_comms(RoundMetrics& rm, int client, std::uint64_t up, std::uint64_t down,
                           PayloadKind kind) {
  ledger_.append({rm.round, client, up, down, kind});
  rm.up_bytes[static_cast<std::size_t>(client)] += up;
  rm.down_bytes[static_cast<std::size_t>(client)] += down;
}

void Simulation::local_phase(const std::vector<int>& participants, RoundMetrics& rm) {
  parallel_for(
      participants.size(), opt_.threads,
      [&](std::size_t i) {
        ClientState& client = clients_[static_cast<std::size_t>(participants[i])];
        client.model = client_local_update(
            client.model, client.train_inputs, client.train_labels, opt_.local_epochs,
            opt_.private_batch, opt_.lr_local,
            mix_seed(opt_.seed, Stream::kLocalBatches,
                     {static_cast<std::uint64_t>(client.id),
                      static_cast<std::uint64_t>(rm.round)}));
      },
      [&](std::size_t i) { return "client " + std::to_string(participants[i]); });
}

Tensor Simulation::draw_public_batch() {
  if (opt_.public_resample_each_round) {
    public_round_ = carve_public(public_source_, opt_.public_size, opt_.public_labeled,
                                 mix_seed(opt_.seed, {0x9c17ULL, static_cast<std::uint64_t>(round_)}));
  }
  xi_indices_.clear();
  if (public_round_.size() == 0) return Tensor::matrix(0, data_.input_dim());
  std::vector<std::size_t> all(public_round_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto slices = batches(all, opt_.public_batch, mix_seed(opt_.seed, Stream::kPublicBatch),
                        static_cast<std::uint64_t>(round_));
  xi_indices_ = slices.front();
  return gather_rows(public_round_.inputs, xi_indices_);
}

SoftPredictionBank Simulation::build_bank(const std::vector<int>& participants,
                                          const Tensor& xi) {
  SoftPredictionBank bank;
  bank.clients = participants;
  bank.predictions.resize(participants.size());
  bank.sample_indices = xi_indices_;
  parallel_for(
      participants.size(), opt_.threads,
      [&](std::size_t i) {
        bank.predictions[i] = soft_predict(clients_[static_cast<std::size_t>(participants[i])].model,
                                           xi, opt_.temperature);
      },
      [&](std::size_t i) { return "client " + std::to_string(participants[i]); });
  return bank;
}

std::vector<double> Simulation::restricted_weights(const std::vector<int>& participants,
                                                   int column) const {
  std::vector<double> w(participants.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    w[i] = std::max(0.0, coeff_.at(participants[i], column));
    sum += w[i];
  }
  if (sum < 1e-300) {
    return uniform_weights(participants.size());
  }
  for (double& v : w) v /= sum;
  return w;
}

void Simulation::update_coefficients(const SoftPredictionBank& bank,
                                     const std::vector<int>& participants) {
  if (opt_.lr_coeff <= 0.0) return;
  const int s = static_cast<int>(participants.size());
  const double uniform = 1.0 / static_cast<double>(coeff_.size());

  // Reindexed sub-problem over the sampled block; the regularizer keeps its
  // global 1/N target, so it is added here rather than in coeff_gradient.
  SoftPredictionBank sub;
  sub.clients = all_clients(s);
  sub.predictions = bank.predictions;
  sub.sample_indices = bank.sample_indices;
  CoefficientMatrix sub_c(s);
  std::vector<double> weights(s);
  for (int i = 0; i < s; ++i) {
    weights[i] = size_weights_[static_cast<std::size_t>(participants[i])];
    for (int j = 0; j < s; ++j) {
      sub_c.at(i, j) = coeff_.at(participants[i], participants[j]);
    }
  }
  KnowledgeHyper hyper;
  hyper.lambda = opt_.lambda;
  hyper.rho = 0.0;
  hyper.temperature = opt_.temperature;
  hyper.eta3 = opt_.lr_coeff;
  CoefficientMatrix grad = coeff_gradient(sub, sub_c, weights, hyper);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      const double reg = 2.0 * opt_.rho * (sub_c.at(i, j) - uniform);
      coeff_.at(participants[i], participants[j]) -= opt_.lr_coeff * (grad.at(i, j) + reg);
    }
  }
  if (opt_.normalize_coefficients) {
    normalize_columns_inplace(coeff_, participants);
  }
}

void Simulation::evaluate_phase(RoundMetrics& rm, const std::vector<Tensor>& teachers,
                                const Tensor& xi) {
  parallel_for(
      clients_.size(), opt_.threads,
      [&](std::size_t i) {
        ClientState& client = clients_[i];
        rm.test_accuracy[i] = test_accuracy(client.model, client.test_inputs, client.test_labels);
        rm.private_loss[i] =
            cross_entropy(forward(client.model, client.train_inputs), client.train_labels);
        if (!teachers.empty() && !teachers[i].empty() && xi.rows() > 0) {
          rm.distill_loss[i] =
              kl_divergence(teachers[i], soft_predict(client.model, xi, opt_.temperature));
        }
      },
      [&](std::size_t i) { return "client " + std::to_string(i); });
}

const RoundMetrics& Simulation::run_round() {
  RoundMetrics rm;
  switch (opt_.algorithm) {
    case Algorithm::kKtPfl:
    case Algorithm::kSimPfl:
    case Algorithm::kTopkPfl:
      rm = run_round_ktpfl_family();
      break;
    case Algorithm::kFedMd:
      rm = run_round_fedmd();
      break;
    case Algorithm::kFedDf:
    case Algorithm::kPFedDf:
      rm = run_round_feddf();
      break;
    case Algorithm::kFedAvg:
      rm = run_round_fedavg();
      break;
    case Algorithm::kLocalOnly:
      rm = run_round_local();
      break;
    case Algorithm::kKtPflHomogeneous:
      rm = run_round_homogeneous();
      break;
  }
  ++round_;
  metrics_.push_back(std::move(rm));
  return metrics_.back();
}

void Simulation::run_all() {
  while (round_ < opt_.rounds) run_round();
  if (opt_.algorithm == Algorithm::kPFedDf && !finetuned_) finetune();
}

void Simulation::finetune() {
  if (opt_.algorithm != Algorithm::kPFedDf) {
    throw ConfigError("finetune: only defined for pfeddf");
  }
  if (finetuned_) return;
  const int epochs = opt_.finetune_epochs < 0 ? opt_.local_epochs : opt_.finetune_epochs;
  RoundMetrics rm = fresh_metrics();
  if (epochs > 0) {
    parallel_for(
        clients_.size(), opt_.threads,
        [&](std::size_t i) {
          ClientState& client = clients_[i];
          client.model = client_local_update(
              client.model, client.train_inputs, client.train_labels, epochs,
              opt_.private_batch, opt_.lr_local,
              mix_seed(opt_.seed, Stream::kFineTune, {static_cast<std::uint64_t>(client.id)}));
        },
        [&](std::size_t i) { return "client " + std::to_string(i); });
  }
  evaluate_phase(rm, {}, Tensor());
  metrics_.push_back(std::move(rm));
  finetuned_ = true;
}

RoundMetrics Simulation::run_round_ktpfl_family() {
  const int n = static_cast<int>(clients_.size());
  auto sampled = sample_clients(n, opt_.sample_rate, round_, opt_.seed);
  RoundMetrics rm = fresh_metrics();

  local_phase(sampled, rm);

  Tensor xi = draw_public_batch();
  std::vector<Tensor> teachers(clients_.size());
  if (xi.rows() > 0) {
    SoftPredictionBank bank = build_bank(sampled, xi);
    const std::uint64_t soft_bytes = xi.rows() * bank.num_classes() * 4;
    for (int id : sampled) log_comms(rm, id, soft_bytes, 0, PayloadKind::kSoftPrediction);

    // Sim-pFL / TopK-pFL recompute the sampled block from similarities
    // before teachers are formed.
    if (opt_.algorithm == Algorithm::kSimPfl || opt_.algorithm == Algorithm::kTopkPfl) {
      SoftPredictionBank sub;
      sub.clients = all_clients(static_cast<int>(sampled.size()));
      sub.predictions = bank.predictions;
      sub.sample_indices = bank.sample_indices;
      CoefficientMatrix fresh = opt_.algorithm == Algorithm::kSimPfl
                                    ? cosine_coefficients(sub)
                                    : topk_coefficients(sub, opt_.top_k);
      for (std::size_t i = 0; i < sampled.size(); ++i) {
        for (std::size_t j = 0; j < sampled.size(); ++j) {
          coeff_.at(sampled[i], sampled[j]) = fresh.at(static_cast<int>(i), static_cast<int>(j));
        }
      }
      if (opt_.normalize_coefficients) normalize_columns_inplace(coeff_, sampled);
    }

    for (std::size_t i = 0; i < sampled.size(); ++i) {
      teachers[static_cast<std::size_t>(sampled[i])] =
          mix_predictions(bank.predictions, restricted_weights(sampled, sampled[i]));
    }
    for (int id : sampled) log_comms(rm, id, 0, soft_bytes, PayloadKind::kSoftPrediction);

    parallel_for(
        sampled.size(), opt_.threads,
        [&](std::size_t i) {
          ClientState& client = clients_[static_cast<std::size_t>(sampled[i])];
          client.model =
              client_distill(client.model, xi, teachers[static_cast<std::size_t>(sampled[i])],
                             opt_.distill_steps, opt_.lr_distill * opt_.lambda,
                             opt_.temperature);
        },
        [&](std::size_t i) { return "client " + std::to_string(sampled[i]); });

    if (opt_.algorithm == Algorithm::kKtPfl) {
      update_coefficients(bank, sampled);
    }
    // Alg. 1 distributes the updated coefficient matrix to every client.
    for (int id = 0; id < n; ++id) {
      log_comms(rm, id, 0, static_cast<std::uint64_t>(n) * 4, PayloadKind::kCoefficients);
    }
  }

  evaluate_phase(rm, teachers, xi);
  return rm;
}

RoundMetrics Simulation::run_round_fedmd() {
  const int n = static_cast<int>(clients_.size());
  auto sampled = sample_clients(n, opt_.sample_rate, round_, opt_.seed);
  RoundMetrics rm = fresh_metrics();

  local_phase(sampled, rm);

  Tensor xi = draw_public_batch();
  std::vector<Tensor> teachers(clients_.size());
  if (xi.rows() > 0) {
    SoftPredictionBank bank = build_bank(sampled, xi);
    const std::uint64_t soft_bytes = xi.rows() * bank.num_classes() * 4;
    for (int id : sampled) log_comms(rm, id, soft_bytes, 0, PayloadKind::kSoftPrediction);

    Tensor consensus = mix_predictions(bank.predictions, uniform_weights(sampled.size()));
    for (int id : sampled) {
      teachers[static_cast<std::size_t>(id)] = consensus;
      log_comms(rm, id, 0, soft_bytes, PayloadKind::kSoftPrediction);
    }

    parallel_for(
        sampled.size(), opt_.threads,
        [&](std::size_t i) {
          ClientState& client = clients_[static_cast<std::size_t>(sampled[i])];
          client.model = client_distill(client.model, xi, consensus, opt_.distill_steps,
                                        opt_.lr_distill * opt_.lambda, opt_.temperature);
        },
        [&](std::size_t i) { return "client " + std::to_string(sampled[i]); });
  }

  evaluate_phase(rm, teachers, xi);
  return rm;
}

RoundMetrics Simulation::run_round_feddf() {
  const int n = static_cast<int>(clients_.size());
  auto sampled = sample_clients(n, opt_.sample_rate, round_, opt_.seed);
  RoundMetrics rm = fresh_metrics();

  local_phase(sampled, rm);
  for (int id : sampled) {
    log_comms(rm, id, param_bytes(clients_[static_cast<std::size_t>(id)].model), 0,
              PayloadKind::kParameters);
  }

  Tensor xi = draw_public_batch();
  std::vector<Tensor> teachers(clients_.size());

  // Group the sampled clients by architecture.
  std::map<int, std::vector<int>> by_group;
  for (int id : sampled) by_group[clients_[static_cast<std::size_t>(id)].group].push_back(id);

  // Ensemble teacher from the uploaded client models.
  Tensor consensus;
  if (xi.rows() > 0) {
    SoftPredictionBank bank = build_bank(sampled, xi);
    consensus = mix_predictions(bank.predictions, uniform_weights(sampled.size()));
  }

  for (const auto& [group, members] : by_group) {
    double total = 0.0;
    for (int id : members) total += static_cast<double>(clients_[static_cast<std::size_t>(id)].size());
    std::vector<const Model*> models;
    std::vector<double> weights;
    for (int id : members) {
      models.push_back(&clients_[static_cast<std::size_t>(id)].model);
      weights.push_back(static_cast<double>(clients_[static_cast<std::size_t>(id)].size()) / total);
    }
    Model prototype =
        unflatten_params(clients_[static_cast<std::size_t>(members[0])].model,
                         flat_average(models, weights));
    if (xi.rows() > 0) {
      prototype = client_distill(prototype, xi, consensus, opt_.distill_steps,
                                 opt_.lr_distill * opt_.lambda, opt_.temperature);
    }
    for (int id : members) {
      clients_[static_cast<std::size_t>(id)].model = prototype;
      log_comms(rm, id, 0, param_bytes(prototype), PayloadKind::kParameters);
      if (xi.rows() > 0) teachers[static_cast<std::size_t>(id)] = consensus;
    }
  }

  evaluate_phase(rm, teachers, xi);
  return rm;
}

RoundMetrics Simulation::run_round_fedavg() {
  const int n = static_cast<int>(clients_.size());
  auto sampled = sample_clients(n, opt_.sample_rate, round_, opt_.seed);
  RoundMetrics rm = fresh_metrics();

  local_phase(sampled, rm);

  double total = 0.0;
  for (int id : sampled) total += static_cast<double>(clients_[static_cast<std::size_t>(id)].size());
  std::vector<const Model*> models;
  std::vector<double> weights;
  for (int id : sampled) {
    models.push_back(&clients_[static_cast<std::size_t>(id)].model);
    weights.push_back(static_cast<double>(clients_[static_cast<std::size_t>(id)].size()) / total);
    log_comms(rm, id, param_bytes(clients_[static_cast<std::size_t>(id)].model), 0,
              PayloadKind::kParameters);
  }
  Model global = unflatten_params(clients_[0].model, flat_average(models, weights));
  for (auto& client : clients_) {
    client.model = global;
    log_comms(rm, client.id, 0, param_bytes(global), PayloadKind::kParameters);
  }

  evaluate_phase(rm, {}, Tensor());
  return rm;
}

RoundMetrics Simulation::run_round_local() {
  RoundMetrics rm = fresh_metrics();
  auto everyone = all_clients(static_cast<int>(clients_.size()));
  local_phase(everyone, rm);
  evaluate_phase(rm, {}, Tensor());
  return rm;
}

RoundMetrics Simulation::run_round_homogeneous() {
  const int n = static_cast<int>(clients_.size());
  auto sampled = sample_clients(n, opt_.sample_rate, round_, opt_.seed);
  RoundMetrics rm = fresh_metrics();

  local_phase(sampled, rm);
  for (int id : sampled) {
    log_comms(rm, id, param_bytes(clients_[static_cast<std::size_t>(id)].model), 0,
              PayloadKind::kParameters);
  }

  Tensor xi = draw_public_batch();
  SoftPredictionBank bank;
  if (xi.rows() > 0) bank = build_bank(sampled, xi);

  // Personalized aggregation: w_n <- sum_m c[m][n] * w_m, over the server's
  // latest view of every client's parameters.
  std::vector<Model> personalized(sampled.size());
  std::vector<const Model*> models;
  models.reserve(clients_.size());
  for (const auto& client : clients_) models.push_back(&client.model);
  auto everyone = all_clients(n);
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    std::vector<double> column(clients_.size());
    for (int m = 0; m < n; ++m) column[static_cast<std::size_t>(m)] = coeff_.at(m, sampled[i]);
    personalized[i] = unflatten_params(clients_[0].model, flat_average(models, column));
  }
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    ClientState& client = clients_[static_cast<std::size_t>(sampled[i])];
    client.model = std::move(personalized[i]);
    log_comms(rm, sampled[i], 0, param_bytes(client.model), PayloadKind::kParameters);
  }

  if (xi.rows() > 0) update_coefficients(bank, sampled);

  evaluate_phase(rm, {}, Tensor());
  return rm;
}

}  // namespace ktpfl
