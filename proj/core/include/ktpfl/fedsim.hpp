#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ktpfl/dataset.hpp"
#include "ktpfl/knowledge.hpp"
#include "ktpfl/nn.hpp"
#include "ktpfl/partition.hpp"

namespace ktpfl {

enum class Algorithm {
  kKtPfl,
  kSimPfl,
  kTopkPfl,
  kFedMd,
  kFedDf,
  kPFedDf,
  kFedAvg,
  kLocalOnly,
  kKtPflHomogeneous,
};

const char* algorithm_name(Algorithm algorithm);
std::optional<Algorithm> algorithm_from_name(const std::string& name);
/// FedAvg and the homogeneous KT-pFL mode aggregate parameters and need one
/// shared architecture.
bool algorithm_requires_homogeneous(Algorithm algorithm);

enum class PayloadKind { kSoftPrediction, kParameters, kCoefficients };
const char* payload_name(PayloadKind kind);

struct CommsRecord {
  int round = 0;
  int client = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  PayloadKind kind = PayloadKind::kSoftPrediction;
};

/// Append-only record of every message in a run.
class CommsLedger {
 public:
  void append(const CommsRecord& record);
  const std::vector<CommsRecord>& records() const { return records_; }
  std::uint64_t total_uplink() const { return total_up_; }
  std::uint64_t total_downlink() const { return total_down_; }
  std::uint64_t uplink_by_kind(PayloadKind kind) const;
  std::uint64_t downlink_by_kind(PayloadKind kind) const;

 private:
  std::vector<CommsRecord> records_;
  std::uint64_t total_up_ = 0;
  std::uint64_t total_down_ = 0;
  std::array<std::uint64_t, 3> up_by_kind_{};
  std::array<std::uint64_t, 3> down_by_kind_{};
};

struct RoundMetrics {
  int round = 0;
  std::vector<double> test_accuracy;  // per client
  std::vector<double> private_loss;
  std::vector<double> distill_loss;
  std::vector<std::uint64_t> up_bytes;
  std::vector<std::uint64_t> down_bytes;

  double avg_accuracy() const;
  double avg_private_loss() const;
  double avg_distill_loss() const;
};

struct ClientState {
  int id = 0;
  int group = 0;  // architecture group index
  Model model;
  std::vector<std::size_t> train_indices;  // into the main dataset
  std::vector<std::size_t> test_indices;
  Tensor train_inputs;  // cached gathers
  std::vector<int> train_labels;
  Tensor test_inputs;
  std::vector<int> test_labels;

  /// D_n.
  std::size_t size() const { return train_indices.size(); }
};

struct SimOptions {
  Algorithm algorithm = Algorithm::kKtPfl;
  int rounds = 1;
  int local_epochs = 20;   // E
  int distill_steps = 1;   // R
  int finetune_epochs = -1;  // pFedDF; -1 means local_epochs
  std::size_t private_batch = 128;
  std::size_t public_batch = 256;
  std::size_t public_size = 3000;  // |D_r| carved from the public source
  double lr_local = 0.01;    // eta1
  double lr_distill = 0.01;  // eta2; the applied distillation rate is eta2*lambda
  double lr_coeff = 0.01;    // eta3; 0 freezes the coefficient matrix
  double lambda = 1.0;
  double rho = 0.1;
  double temperature = 1.0;
  int top_k = 5;
  double sample_rate = 1.0;  // q
  bool normalize_coefficients = true;
  bool public_resample_each_round = false;
  bool public_labeled = true;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// E epochs of seeded mini-batch SGD on cross-entropy over the cached shard.
Model client_local_update(const Model& model, const Tensor& train_inputs,
                          const std::vector<int>& train_labels, int epochs,
                          std::size_t batch_size, double lr, std::uint64_t batch_seed);

/// `steps` gradient steps against a fixed teacher on one public mini-batch.
Model client_distill(const Model& model, const Tensor& public_batch, const Tensor& teacher,
                     int steps, double lr, double temperature);

/// ceil(rate * N) clients, uniform without replacement, seeded per round.
std::vector<int> sample_clients(int num_clients, double rate, int round, std::uint64_t seed);

/// Fraction of argmax(logits) == label.
double test_accuracy(const Model& model, const Tensor& inputs, const std::vector<int>& labels);

/// Round-based execution of one algorithm over a fixed fleet. All randomness
/// derives from options.seed; results are identical for any thread count.
class Simulation {
 public:
  Simulation(Dataset data, Partition partition, Dataset public_source,
             std::vector<Model> initial_models, SimOptions options);

  /// Runs one communication round and returns its metrics.
  const RoundMetrics& run_round();
  /// Runs options.rounds rounds, plus the pFedDF fine-tune pass when relevant.
  void run_all();
  /// pFedDF final phase: per-client fine-tuning on private data.
  void finetune();

  int rounds_completed() const { return round_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const CoefficientMatrix& coefficients() const { return coeff_; }
  const CommsLedger& ledger() const { return ledger_; }
  const std::vector<RoundMetrics>& metrics() const { return metrics_; }
  const SimOptions& options() const { return opt_; }
  const Dataset& public_data() const { return public_round_; }

 private:
  RoundMetrics run_round_ktpfl_family();
  RoundMetrics run_round_fedmd();
  RoundMetrics run_round_feddf();
  RoundMetrics run_round_fedavg();
  RoundMetrics run_round_local();
  RoundMetrics run_round_homogeneous();

  void local_phase(const std::vector<int>& participants, RoundMetrics& rm);
  Tensor draw_public_batch();
  SoftPredictionBank build_bank(const std::vector<int>& participants, const Tensor& xi);
  /// Column n of c restricted to `participants` rows and rescaled to sum 1.
  std::vector<double> restricted_weights(const std::vector<int>& participants, int column) const;
  /// Eq.-7-style update of the sampled block of c, from a bank aligned with
  /// `participants`; normalization restricted to the sampled columns.
  void update_coefficients(const SoftPredictionBank& bank, const std::vector<int>& participants);
  void evaluate_phase(RoundMetrics& rm, const std::vector<Tensor>& teachers, const Tensor& xi);
  void log_comms(RoundMetrics& rm, int client, std::uint64_t up, std::uint64_t down,
                 PayloadKind kind);
  RoundMetrics fresh_metrics() const;

  Dataset data_;
  Partition partition_;
  Dataset public_source_;
  Dataset public_round_;  // current D_r
  std::vector<ClientState> clients_;
  CoefficientMatrix coeff_;
  CommsLedger ledger_;
  std::vector<RoundMetrics> metrics_;
  SimOptions opt_;
  std::vector<double> size_weights_;  // D_n / D
  std::vector<std::size_t> xi_indices_;
  int round_ = 0;
  bool finetuned_ = false;
};

}  // namespace ktpfl
