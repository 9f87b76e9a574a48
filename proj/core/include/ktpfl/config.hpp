#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ktpfl/fedsim.hpp"

namespace ktpfl {

struct SyntheticSpec {
  int classes = 10;
  int samples_per_class = 200;
  int input_dim = 16;
  double cluster_spread = 0.2;
  std::uint64_t gen_seed = 0;  // 0: derive from the run seed
};

struct IdxSpec {
  std::string images;
  std::string labels;
};

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx };
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synth;
  IdxSpec idx;
};

struct PublicSpec {
  enum class Kind { kReuseMain, kSynthetic, kIdx };
  Kind kind = Kind::kReuseMain;
  SyntheticSpec synth;  // public corpus may differ from the task corpus
  IdxSpec idx;
  std::size_t size = 3000;  // |D_r|
  std::size_t pool = 0;     // reuse_main hold-out; 0 resolves to `size`
  bool labeled = true;
  bool resample_each_round = false;
};

struct PartitionSpec {
  enum class Kind { kLabelSkew, kDirichlet };
  Kind kind = Kind::kLabelSkew;
  int labels_per_client = 2;
  double alpha = 0.5;
};

struct ModelGroupSpec {
  int count = 0;
  std::vector<int> hidden;  // hidden layer widths; empty = linear model
};

struct OutputSpec {
  std::string dir = "runs";
  bool snapshot_coefficients = false;
};

/// One experiment, fully described by one flat config file.
struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kKtPfl;
  int clients = 0;
  int rounds = 1;
  std::uint64_t seed = 1;
  double sample_rate = 1.0;
  int threads = 1;

  DatasetSpec dataset;
  PublicSpec public_source;
  PartitionSpec partition;
  std::vector<ModelGroupSpec> model_groups;

  int local_epochs = 20;
  int distill_steps = 1;
  int finetune_epochs = -1;  // resolved to local_epochs by the parser
  std::size_t private_batch = 128;
  std::size_t public_batch = 256;
  double lr_local = 0.01;
  double lr_distill = 0.01;
  double lr_coeff = 0.01;
  double lambda = 1.0;
  double rho = 0.1;
  double temperature = 1.0;
  int top_k = 5;
  bool normalize_coefficients = true;

  OutputSpec output;
};

/// Parse and validate a config file. Unknown keys, type errors and
/// constraint violations raise ConfigError naming the key and line.
ExperimentConfig parse_config(const std::string& path);

/// Same, from an in-memory string; `name` labels error messages.
ExperimentConfig parse_config_text(const std::string& text, const std::string& name);

/// Canonical round-trippable text form with every effective value explicit.
std::string emit_config(const ExperimentConfig& config);

/// Constraint checks shared by the parser and programmatic construction.
void validate_config(const ExperimentConfig& config);

/// Seed-independent hash of the task (dataset + partition construction);
/// used by `compare` to warn about apples-to-oranges comparisons.
std::string dataset_fingerprint(const ExperimentConfig& config);

}  // namespace ktpfl
