#include "rodpo/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

namespace rodpo::eval {

using json = nlohmann::ordered_json;

namespace {

void require_users(std::span<const int> ranks, int k) {
  if (ranks.empty()) throw ContractError("ranking metric over an empty user set");
  if (k < 1) throw ContractError("cutoff K must be at least 1");
}

std::vector<data::Context> contexts_of(const data::SplitDataset& split, std::span<const data::Example> ex) {
  std::vector<data::Context> out;
  out.reserve(ex.size());
  for (const auto& e : ex) out.push_back(data::context_of(split, e));
  return out;
}

// Calls `fn(batch examples, scores)` for consecutive batches.
template <typename Fn>
void score_batches(const Scorer& scorer, const data::SplitDataset& split, const std::vector<data::Example>& examples,
                   int batch_size, Fn&& fn) {
  if (batch_size < 1) throw ContractError("batch size must be positive");
  for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(static_cast<std::size_t>(batch_size), examples.size() - start);
    const std::span<const data::Example> ex(examples.data() + start, n);
    const Matrix<float> scores = scorer(contexts_of(split, ex));
    if (scores.rows() != static_cast<Eigen::Index>(n) || scores.cols() != split.n_items) {
      throw DataError("scorer returned " + shape_of(scores) + " for " + std::to_string(n) + " contexts over " +
                      std::to_string(split.n_items) + " items: model and catalog disagree");
    }
    fn(ex, scores);
  }
}

}  // namespace

double ndcg_at_k(std::span<const int> ranks, int k) {
  require_users(ranks, k);
  double total = 0;
  for (int r : ranks) {
    if (r < 1) throw ContractError("rank must be at least 1");
    if (r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return total / static_cast<double>(ranks.size());
}

double mrr_at_k(std::span<const int> ranks, int k) {
  require_users(ranks, k);
  double total = 0;
  for (int r : ranks) {
    if (r < 1) throw ContractError("rank must be at least 1");
    if (r <= k) total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

std::string to_json(const EvalReport& r) {
  json j;
  j["split"] = r.split;
  j["n_users"] = r.n_users;
  for (const auto& [k, v] : r.ndcg) j["ndcg@" + std::to_string(k)] = v;
  for (const auto& [k, v] : r.mrr) j["mrr@" + std::to_string(k)] = v;
  return j.dump();
}

std::vector<int> rank_examples(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                               int batch_size) {
  const auto examples = data::evaluation_examples(split, part);
  std::vector<int> ranks;
  ranks.reserve(examples.size());
  score_batches(scorer, split, examples, batch_size, [&](std::span<const data::Example> ex, const Matrix<float>& s) {
    for (std::size_t b = 0; b < ex.size(); ++b) ranks.push_back(rank_target(s.row(static_cast<Eigen::Index>(b)), ex[b].target));
  });
  return ranks;
}

EvalReport evaluate(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                    const std::vector<int>& ks, int batch_size) {
  const auto ranks = rank_examples(scorer, split, part, batch_size);
  EvalReport r;
  r.split = data::to_string(part);
  r.n_users = static_cast<int>(ranks.size());
  for (int k : ks) {
    r.ndcg[k] = ndcg_at_k(ranks, k);
    r.mrr[k] = mrr_at_k(ranks, k);
  }
  return r;
}

Scorer popularity_scorer(const std::vector<std::int64_t>& popularity) {
  RowVector<float> row(static_cast<Eigen::Index>(popularity.size()));
  for (std::size_t i = 0; i < popularity.size(); ++i) row(static_cast<Eigen::Index>(i)) = static_cast<float>(popularity[i]);
  return [row](std::span<const data::Context> ctx) {
    return Matrix<float>(row.replicate(static_cast<Eigen::Index>(ctx.size()), 1));
  };
}

LogitHistogram make_histogram(const std::vector<double>& positive, const std::vector<double>& hard_negative, int bins) {
  if (bins < 10) throw ContractError("histogram needs at least 10 bins");
  if (positive.empty() && hard_negative.empty()) throw ContractError("histogram over empty populations");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&positive, &hard_negative}) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  LogitHistogram h;
  h.lo = lo;
  h.hi = hi;
  h.positive.assign(static_cast<std::size_t>(bins), 0);
  h.hard_negative.assign(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double x) {
    const int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
    return std::clamp(b, 0, bins - 1);
  };
  for (double x : positive) ++h.positive[static_cast<std::size_t>(bin_of(x))];
  for (double x : hard_negative) ++h.hard_negative[static_cast<std::size_t>(bin_of(x))];
  return h;
}

PopulationStats population_stats(const std::vector<double>& values, const std::vector<long>& counts, double width) {
  PopulationStats s;
  if (values.empty()) return s;
  for (double x : values) s.mean += x;
  s.mean /= static_cast<double>(values.size());
  for (double x : values) s.variance += (x - s.mean) * (x - s.mean);
  s.variance /= static_cast<double>(values.size());
  const auto it = std::max_element(counts.begin(), counts.end());
  s.peak_bin = static_cast<int>(it - counts.begin());
  s.peak_density = static_cast<double>(*it) / (static_cast<double>(values.size()) * width);
  return s;
}

LogitDistributions logit_distributions(const Scorer& scorer, const data::SplitDataset& split, data::SplitPart part,
                                       int bins, int batch_size) {
  if (bins < 10) throw ContractError("histogram needs at least 10 bins");
  LogitDistributions d;
  const auto examples = data::evaluation_examples(split, part);
  score_batches(scorer, split, examples, batch_size, [&](std::span<const data::Example> ex, const Matrix<float>& s) {
    for (std::size_t b = 0; b < ex.size(); ++b) {
      const auto row = s.row(static_cast<Eigen::Index>(b));
      const int t = ex[b].target;
      float best = -std::numeric_limits<float>::infinity();
      for (Eigen::Index i = 0; i < row.size(); ++i) {
        if (i != t) best = std::max(best, row(i));
      }
      d.positive.push_back(row(t));
      d.hard_negative.push_back(best);
    }
  });
  d.histogram = make_histogram(d.positive, d.hard_negative, bins);
  d.positive_stats = population_stats(d.positive, d.histogram.positive, d.histogram.width());
  d.hard_negative_stats = population_stats(d.hard_negative, d.histogram.hard_negative, d.histogram.width());
  return d;
}

std::string histogram_csv(const LogitHistogram& h) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(9);
  os << "bin_low,bin_high,count_pos,count_hardneg\n";
  for (int b = 0; b < h.bins(); ++b) {
    os << h.lo + b * h.width() << ',' << h.lo + (b + 1) * h.width() << ',' << h.positive[static_cast<std::size_t>(b)]
       << ',' << h.hard_negative[static_cast<std::size_t>(b)] << '\n';
  }
  return os.str();
}

std::string raw_logits_csv(const LogitDistributions& d) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(9);
  os << "user,positive,hard_negative\n";
  for (std::size_t i = 0; i < d.positive.size(); ++i) os << i << ',' << d.positive[i] << ',' << d.hard_negative[i] << '\n';
  return os.str();
}

std::string to_json(const LogitDistributions& d) {
  auto stats = [](const PopulationStats& s) {
    return json{{"mean", s.mean}, {"variance", s.variance}, {"peak_bin", s.peak_bin}, {"peak_density", s.peak_density}};
  };
  json j;
  j["n_users"] = d.positive.size();
  j["bins"] = d.histogram.bins();
  j["range"] = {d.histogram.lo, d.histogram.hi};
  j["positive"] = stats(d.positive_stats);
  j["hard_negative"] = stats(d.hard_negative_stats);
  return j.dump();
}

SuppressionStats false_negative_suppression(const std::vector<NegativeDraw>& trace, const data::GroundTruth& truth,
                                            const data::SplitDataset& split, const Scorer* final_scorer) {
  SuppressionStats s;
  const std::size_t n_users = truth.false_negatives.size();
  std::vector<std::vector<char>> is_fn(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    if (truth.false_negatives[u].empty()) continue;
    is_fn[u].assign(static_cast<std::size_t>(truth.n_items), 0);
    for (int i : truth.false_negatives[u]) is_fn[u][static_cast<std::size_t>(i)] = 1;
  }
  std::map<std::pair<int, int>, long long> repeats;
  double p_sum = 0, var_sum = 0;
  for (const auto& d : trace) {
    if (d.user < 0 || static_cast<std::size_t>(d.user) >= n_users) throw DataError("trace user outside ground truth");
    const auto u = static_cast<std::size_t>(d.user);
    ++s.draws;
    const double p = static_cast<double>(truth.false_negatives[u].size()) / static_cast<double>(truth.n_items - 1);
    p_sum += p;
    var_sum += p * (1 - p);
    if (!is_fn[u].empty() && is_fn[u][static_cast<std::size_t>(d.loser)]) {
      ++s.false_negative_draws;
      s.max_repeat = std::max(s.max_repeat, ++repeats[{d.user, d.loser}]);
    }
  }
  if (s.draws > 0) {
    const auto n = static_cast<double>(s.draws);
    s.false_negative_fraction = static_cast<double>(s.false_negative_draws) / n;
    s.expected_fraction = p_sum / n;
    s.expected_sigma = std::sqrt(var_sum) / n;
  }

  if (final_scorer) {
    const auto examples = data::evaluation_examples(split, data::SplitPart::test);
    double rank_sum = 0;
    score_batches(*final_scorer, split, examples, 256, [&](std::span<const data::Example> ex, const Matrix<float>& sc) {
      for (std::size_t b = 0; b < ex.size(); ++b) {
        const int uid = split.users[static_cast<std::size_t>(ex[b].user)].user_id;
        if (uid < 0 || static_cast<std::size_t>(uid) >= n_users) continue;
        for (int i : truth.false_negatives[static_cast<std::size_t>(uid)]) {
          rank_sum += rank_target(sc.row(static_cast<Eigen::Index>(b)), i);
          ++s.false_negative_items;
        }
      }
    });
    if (s.false_negative_items > 0) s.mean_false_negative_rank = rank_sum / static_cast<double>(s.false_negative_items);
  }
  return s;
}

std::string to_json(const SuppressionStats& s) {
  json j;
  j["draws"] = s.draws;
  j["false_negative_draws"] = s.false_negative_draws;
  j["false_negative_fraction"] = s.false_negative_fraction;
  j["expected_fraction"] = s.expected_fraction;
  j["expected_sigma"] = s.expected_sigma;
  j["max_repeat"] = s.max_repeat;
  j["mean_false_negative_rank"] = s.mean_false_negative_rank;
  j["false_negative_items"] = s.false_negative_items;
  return j.dump();
}

}  // namespace rodpo::eval
