#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rodpo/data/dataset.hpp"
#include "rodpo/data/synthetic.hpp"

namespace rodpo::eval {

/// Maps contexts to full-catalog logits (contexts x items).
using Scorer = std::function<Matrix<float>(std::span<const data::Context>)>;

/// 1 + number of items scoring at least as high as the target (ties count
/// against the target).
template <typename Derived>
int rank_target(const Eigen::DenseBase<Derived>& scores, int target) {
  if (target < 0 || target >= scores.size()) throw ContractError("rank_target: target out of range");
  const auto t = scores(target);
  int rank = 1;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (i != target && scores(i) >= t) ++rank;
  }
  return rank;
}

/// Mean of 1/log2(rank + 1) over users with rank <= k, zero otherwise.
double ndcg_at_k(std::span<const int> ranks, int k);
/// Mean of 1/rank over users with rank <= k, zero otherwise.
double mrr_at_k(std::span<const int> ranks, int k);

struct EvalReport {
  std::string split;
  int n_users = 0;
  std::map<int, double> ndcg;
  std::map<int, double> mrr;
};

std::string to_json(const EvalReport& r);

/// Target rank of every evaluation example of `part`, in user order.
std::vector<int> rank_examples(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                               int batch_size = 256);

/// Full-catalog ranking of each user's held-out item.
EvalReport evaluate(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                    const std::vector<int>& ks = {5, 10}, int batch_size = 256);

/// Scores every item by its interaction count.
Scorer popularity_scorer(const std::vector<std::int64_t>& popularity);

/// Positive logits s(x, y_w) and hard-negative logits (best non-target)
/// binned on a shared range.
struct LogitHistogram {
  double lo = 0, hi = 0;
  std::vector<long> positive;
  std::vector<long> hard_negative;

  int bins() const { return static_cast<int>(positive.size()); }
  double width() const { return (hi - lo) / bins(); }
};

struct PopulationStats {
  double mean = 0;
  double variance = 0;
  int peak_bin = 0;
  /// Largest bin count normalized to a density: count / (n * bin width).
  double peak_density = 0;
};

struct LogitDistributions {
  std::vector<double> positive;
  std::vector<double> hard_negative;
  LogitHistogram histogram;
  PopulationStats positive_stats;
  PopulationStats hard_negative_stats;
};

LogitDistributions logit_distributions(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                                       int bins = 100, int batch_size = 256);
/// Bins both populations on [min, max] of their union. A degenerate range
/// is widened to unit width around the value.
LogitHistogram make_histogram(const std::vector<double>& positive, const std::vector<double>& hard_negative, int bins);
PopulationStats population_stats(const std::vector<double>& values, const std::vector<long>& counts, double width);

/// CSV with header `bin_low,bin_high,count_pos,count_hardneg`.
std::string histogram_csv(const LogitHistogram& h);
/// CSV with header `user,positive,hard_negative`.
std::string raw_logits_csv(const LogitDistributions& d);
std::string to_json(const LogitDistributions& d);

/// One drawn loser, recorded during preference training.
struct NegativeDraw {
  int epoch = 0;
  long long step = 0;
  int user = 0;  // synthetic user id
  int target = 0;
  int loser = 0;
};

/// How often sampled losers were planted false negatives.
struct SuppressionStats {
  long long draws = 0;
  long long false_negative_draws = 0;
  double false_negative_fraction = 0;
  /// Binomial expectation if losers were uniform over non-target items,
  /// and the standard error of the observed fraction under it.
  double expected_fraction = 0;
  double expected_sigma = 0;
  /// Largest number of times one (user, false-negative item) pair was drawn.
  long long max_repeat = 0;
  /// Mean final test-context rank over all planted false negatives.
  double mean_false_negative_rank = 0;
  long long false_negative_items = 0;
};

SuppressionStats false_negative_suppression(const std::vector<NegativeDraw>& trace, const data::GroundTruth& truth,
                                            const data::SplitDataset& split, const Scorer* final_scorer);

std::string to_json(const SuppressionStats& s);

}  // namespace rodpo::eval
