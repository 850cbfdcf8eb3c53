#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rodpo/rng.hpp"

namespace rodpo::preference {

enum class Strategy { random, argmax, topk };

Strategy parse_strategy(const std::string& s);
std::string to_string(Strategy s);

/// The K highest-scoring items other than the target, best first; equal
/// scores keep the lower index first.
struct CandidatePool {
  int target = -1;
  std::vector<int> items;
  std::vector<double> logits;

  int size() const { return static_cast<int>(items.size()); }
};

/// Top-K selection over `scores` without the target and without any id in
/// `exclude` (sorted ascending or not). Uses partial selection, not a full
/// sort.
template <typename Derived>
CandidatePool build_candidate_pool(const Eigen::DenseBase<Derived>& scores, int target, int k,
                                   std::span<const int> exclude = {}) {
  const int n = static_cast<int>(scores.size());
  if (k < 1) throw ContractError("candidate pool size must be at least 1");
  if (n < 2) throw ContractError("candidate pool needs at least two items");
  if (target < 0 || target >= n) throw ContractError("pool target out of range");
  std::vector<char> skip(static_cast<std::size_t>(n), 0);
  skip[static_cast<std::size_t>(target)] = 1;
  for (int e : exclude) {
    if (e >= 0 && e < n) skip[static_cast<std::size_t>(e)] = 1;
  }
  std::vector<int> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (!skip[static_cast<std::size_t>(i)]) cand.push_back(i);
  }
  if (cand.empty()) throw ContractError("candidate pool is empty after exclusions");
  const auto take = static_cast<std::ptrdiff_t>(std::min<std::size_t>(static_cast<std::size_t>(k), cand.size()));
  std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), [&](int a, int b) {
    const auto sa = scores(a), sb = scores(b);
    return sa > sb || (sa == sb && a < b);
  });
  CandidatePool pool;
  pool.target = target;
  pool.items.assign(cand.begin(), cand.begin() + take);
  for (int i : pool.items) pool.logits.push_back(static_cast<double>(scores(i)));
  return pool;
}

/// Draws the losing item. `topk` is uniform over the pool, `argmax` is the
/// pool head (no randomness consumed), `random` is uniform over every
/// item except the target.
int sample_negative(Strategy strategy, const CandidatePool& pool, int n_items, Rng& rng);

}  // namespace rodpo::preference
