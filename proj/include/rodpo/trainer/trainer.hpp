#pragma once

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "rodpo/data/store.hpp"
#include "rodpo/encoder/snapshot.hpp"
#include "rodpo/eval/metrics.hpp"
#include "rodpo/trainer/adam.hpp"
#include "rodpo/trainer/config.hpp"

namespace rodpo::trainer {

enum class Stage { warmup = 1, preference = 2 };

struct StepRecord {
  int stage = 1;
  int epoch = 0;  // 1-based epoch the step belongs to
  long long step = 0;
  double loss_ce = 0;
  double loss_dpo = 0;
  double loss_total = 0;
  double grad_norm = 0;
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  long long step = 0;
  double loss_ce = 0;
  double loss_dpo = 0;
  double loss_total = 0;
  double ndcg5 = 0;
  double mrr5 = 0;
  double wall_ms = 0;
};

/// One JSON object: stage, epoch, step, loss_ce, loss_dpo, loss_total,
/// ndcg@5, mrr@5, wall_ms.
std::string to_json(const EpochRecord& r);

/// Frozen copy of a policy used only for scoring in evaluation mode.
class ReferencePolicy {
 public:
  ReferencePolicy(const encoder::PolicySnapshot& snap, const data::ItemCatalog& catalog);

  Matrix<float> score(const encoder::PackedInput& in) const;
  std::uint64_t checksum() const { return model_.params().checksum(); }
  const encoder::Encoder<float>& model() const { return model_; }

  /// Process-wide count of reference forward passes.
  static long long calls() { return calls_.load(); }

 private:
  encoder::Encoder<float> model_;
  static inline std::atomic<long long> calls_{0};
};

/// Evaluation-mode scorer over a model that must outlive it.
eval::Scorer scorer_of(const encoder::Encoder<float>& model);

/// Owns one training stage: policy, optimizer, data order, RNG streams,
/// early-stopping state and, in Stage 2, the frozen reference.
///
/// RNG streams derive from the master seed by name: "init" for the
/// initial weights, and per stage s "stage<s>/shuffle", "stage<s>/moe-noise"
/// and "stage<s>/sampler".
class Trainer {
 public:
  /// Stage 1: cross-entropy warm-up from a fresh initialization.
  static Trainer warmup(const data::Dataset& data, const encoder::EncoderConfig& model, const TrainConfig& cfg);
  /// Stage 2: joint cross-entropy and DPO training starting from `sft`,
  /// which also becomes the frozen reference.
  static Trainer preference(const data::Dataset& data, const encoder::PolicySnapshot& sft, const TrainConfig& cfg);
  /// Restores a checkpoint written by save_checkpoint.
  static Trainer resume(const data::Dataset& data, const std::filesystem::path& checkpoint);

  Stage stage() const { return stage_; }
  const TrainConfig& config() const { return cfg_; }
  bool done() const;
  int epoch() const { return epoch_; }
  long long step_count() const { return step_; }

  /// One optimizer step on the next batch. Finishing an epoch triggers
  /// validation and early-stopping bookkeeping.
  StepRecord step();
  /// Steps until done().
  void run();
  /// One optimizer step on a given batch, without epoch bookkeeping.
  StepRecord train_on(const data::Batch& batch);

  const encoder::Encoder<float>& policy() const { return policy_; }
  const ReferencePolicy* reference() const { return reference_.get(); }
  /// Stage 1: the current policy. Stage 2: the best validation snapshot.
  encoder::PolicySnapshot result() const;
  std::optional<double> best_metric() const { return best_metric_; }

  const std::vector<StepRecord>& steps() const { return step_log_; }
  const std::vector<EpochRecord>& epochs() const { return epoch_log_; }
  const std::vector<eval::NegativeDraw>& trace() const { return trace_; }
  const Adam<float>& optimizer() const { return adam_; }

  /// Epoch records are appended here as JSON lines.
  void set_metrics_log(std::ostream* out) { log_ = out; }
  void set_quiet(bool q) { quiet_ = q; }

  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  Trainer(const data::Dataset& data, encoder::Encoder<float> policy, const TrainConfig& cfg, Stage stage);
  void end_epoch();

  const data::Dataset* data_;
  TrainConfig cfg_;
  Stage stage_;
  encoder::Encoder<float> policy_;
  std::unique_ptr<ReferencePolicy> reference_;
  std::uint64_t reference_checksum_ = 0;
  Adam<float> adam_;
  data::BatchIterator batches_;
  Rng noise_;
  Rng sampler_;
  int epoch_ = 0;
  long long step_ = 0;
  int bad_epochs_ = 0;
  std::optional<double> best_metric_;
  std::optional<ParameterSet<float>> best_;
  // Running sums over the current epoch.
  double sum_ce_ = 0, sum_dpo_ = 0, sum_total_ = 0;
  long long epoch_steps_ = 0;
  double epoch_ms_ = 0;
  std::vector<StepRecord> step_log_;
  std::vector<EpochRecord> epoch_log_;
  std::vector<eval::NegativeDraw> trace_;
  std::ostream* log_ = nullptr;
  bool quiet_ = true;
};

struct EfficiencyReport {
  int batch_size = 0;
  int iterations = 0;
  long long parameters = 0;
  double ce_step_ms = 0;
  double preference_step_ms = 0;
  double step_ratio = 0;
  double inference_ms = 0;
  /// Relative spread (max - min) / median of the inference timings.
  double inference_spread = 0;
  long long reference_calls_during_inference = 0;
};

/// Median timings over `iterations` warm repetitions on one fixed batch.
EfficiencyReport measure_efficiency(const data::Dataset& data, const encoder::PolicySnapshot& snap,
                                    const TrainConfig& cfg, int iterations = 20, int warmup = 3);
std::string to_json(const EfficiencyReport& r);

}  // namespace rodpo::trainer
