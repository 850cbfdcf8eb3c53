#include "rodpo/preference/sampling.hpp"

namespace rodpo::preference {

Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "argmax") return Strategy::argmax;
  if (s == "topk") return Strategy::topk;
  throw ConfigError("unknown sampling strategy '" + s + "' (expected random, argmax or topk)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::argmax: return "argmax";
    case Strategy::topk: return "topk";
  }
  return "?";
}

int sample_negative(Strategy strategy, const CandidatePool& pool, int n_items, Rng& rng) {
  switch (strategy) {
    case Strategy::argmax:
      if (pool.items.empty()) throw ContractError("no negative available: empty pool");
      return pool.items.front();
    case Strategy::topk: {
      if (pool.items.empty()) throw ContractError("no negative available: empty pool");
      std::uniform_int_distribution<int> pick(0, pool.size() - 1);
      return pool.items[static_cast<std::size_t>(pick(rng))];
    }
    case Strategy::random: {
      if (n_items < 2) throw ContractError("no negative available: a single item catalog");
      std::uniform_int_distribution<int> pick(0, n_items - 2);
      const int i = pick(rng);
      return i >= pool.target ? i + 1 : i;
    }
  }
  throw ContractError("unhandled strategy");
}

}  // namespace rodpo::preference
