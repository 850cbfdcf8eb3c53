#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rodpo/preference/sampling.hpp"

namespace rodpo::trainer {

struct DpoConfig {
  /// When false, Stage 2 is plain continued cross-entropy training.
  bool enabled = true;
  double beta = 1.0;
  double lambda = 1.0;
  int k = 50;
  preference::Strategy strategy = preference::Strategy::topk;
  /// Also keep the context's own items out of the candidate pool.
  bool exclude_history = false;
};

struct TrainConfig {
  int stage1_epochs = 15;
  int stage2_max_epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 128;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  int patience = 10;
  int eval_batch_size = 256;
  std::uint64_t seed = 0;
  DpoConfig dpo;

  void validate() const;
  /// Keys in the `train.` and `dpo.` namespaces; false for foreign keys.
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
};

std::string to_text(const TrainConfig& cfg);
TrainConfig train_config_from_text(const std::string& text);

}  // namespace rodpo::trainer
