#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rodpo/trainer/trainer.hpp"

namespace rodpo::cli {

/// Test-split quality of one trained policy.
struct ArmResult {
  std::string arm;  // "random", "argmax", "topk" or "ce-only"
  std::uint64_t seed = 0;
  double ndcg5 = 0;
  double mrr5 = 0;
  /// Validation NDCG@5 of the returned policy.
  double valid_ndcg5 = 0;
  std::uint64_t checksum = 0;
  int epochs = 0;
  std::optional<eval::SuppressionStats> suppression;
  std::optional<eval::PopulationStats> hard_negative;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::uint64_t sft_checksum = 0;
  ArmResult sft;
  std::vector<ArmResult> arms;

  const ArmResult& arm(const std::string& name) const;
};

struct ComparisonOptions {
  bool ce_baseline = true;
  bool distributions = true;
  int bins = 100;
  std::ostream* progress = nullptr;
};

/// Stage 1 once per seed, then Stage 2 with every sampling strategy from
/// the same warm-up policy and seed (plus a continued cross-entropy
/// baseline when asked).
std::vector<SeedRun> compare_sampling(const data::Dataset& data, const encoder::EncoderConfig& model,
                                      const trainer::TrainConfig& train, const std::vector<std::uint64_t>& seeds,
                                      const ComparisonOptions& opt = {});

struct Summary {
  double mean = 0;
  double sd = 0;
};
/// Sample mean and standard deviation (n - 1 denominator; sd 0 for n = 1).
Summary summarize(const std::vector<double>& v);

/// `strategy,ndcg5_mean,ndcg5_sd,mrr5_mean,mrr5_sd,seeds`, one row per
/// sampling strategy.
std::string strategy_csv(const std::vector<SeedRun>& runs);
/// Same columns with arm names `warmup`, `ce-only` and `rodpo-topk`.
std::string ablation_csv(const std::vector<SeedRun>& runs);
/// Per strategy and seed: draws, false-negative hits and fractions, the
/// binomial expectation, repeated-collision maximum and final rank.
std::string suppression_csv(const std::vector<SeedRun>& runs);
/// Hard-negative peak density of the warm-up and top-k policies per seed.
std::string distribution_csv(const std::vector<SeedRun>& runs);

/// Test metrics of a policy snapshot.
ArmResult evaluate_snapshot(const data::Dataset& data, const encoder::PolicySnapshot& snap, const std::string& arm);

}  // namespace rodpo::cli
