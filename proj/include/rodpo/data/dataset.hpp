#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rodpo/data/interactions.hpp"
#include "rodpo/numerics/tensor.hpp"
#include "rodpo/rng.hpp"

namespace rodpo::data {

enum class SplitPart { train, valid, test };

SplitPart parse_split_part(const std::string& s);
std::string to_string(SplitPart p);

/// Leave-one-out view over full user sequences.
///
/// For a sequence of length n: positions [0, n-2) are training items, n-2 is
/// the validation target and n-1 the test target. Every stored sequence has
/// n >= 3.
struct SplitDataset {
  int n_items = 0;
  int max_seq_len = 50;
  std::vector<InteractionSequence> users;
  std::size_t dropped_users = 0;

  int n_users() const { return static_cast<int>(users.size()); }
  /// Reserved id one past the last item; never scored or ranked.
  int padding_id() const { return n_items; }
  std::size_t n_actions() const;
};

/// Prediction instance: context = items[max(0, end - max_seq_len), end),
/// target = items[end] of user `user` (an index into SplitDataset::users).
struct Example {
  int user = 0;
  int end = 0;
  int target = 0;
};

struct Context {
  std::span<const int> items;
  std::span<const std::int64_t> timestamps;
};

/// Drops sequences shorter than 3 (counted in dropped_users).
SplitDataset leave_one_out_split(std::vector<InteractionSequence> sequences, int n_items, int max_seq_len);

/// Every next-item instance whose target lies in the training positions.
std::vector<Example> training_examples(const SplitDataset& split);

/// One example per user for the validation or test target.
std::vector<Example> evaluation_examples(const SplitDataset& split, SplitPart part);

/// Most recent max_seq_len items before `ex.end`.
Context context_of(const SplitDataset& split, const Example& ex);

/// Left-padded mini-batch (padding id = split.padding_id(), timestamp 0).
struct Batch {
  int max_seq_len = 0;
  int padding_id = 0;
  std::vector<int> users;
  std::vector<int> targets;
  std::vector<int> items;                 // size() x max_seq_len, row-major
  std::vector<std::int64_t> timestamps;  // same layout

  int size() const { return static_cast<int>(targets.size()); }
  std::span<const int> row(int b) const {
    return {items.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(max_seq_len),
            static_cast<std::size_t>(max_seq_len)};
  }
};

Batch make_batch(const SplitDataset& split, std::span<const Example> examples);

/// Yields every example once per epoch in a seeded shuffled order.
class BatchIterator {
 public:
  BatchIterator(const SplitDataset& split, std::vector<Example> examples, int batch_size, std::uint64_t shuffle_seed);

  /// Reshuffles from the iterator's own stream and rewinds.
  void begin_epoch();
  bool next(Batch& out);
  bool exhausted() const { return cursor_ >= order_.size(); }

  std::size_t examples() const { return examples_.size(); }
  const std::vector<std::uint32_t>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  std::string rng_state() const;
  void restore(std::vector<std::uint32_t> order, std::size_t cursor, const std::string& rng_state);

 private:
  const SplitDataset* split_;
  std::vector<Example> examples_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::uint32_t> order_;
  std::size_t cursor_ = 0;
};

/// Table-5 style summary.
struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t actions = 0;
  double avg_length = 0.0;
  double sparsity = 0.0;
};

DatasetStats dataset_stats(const SplitDataset& split);
std::string stats_json(const DatasetStats& s);

void write_split_manifest(const std::filesystem::path& path, const SplitDataset& split);
SplitDataset read_split_manifest(const std::filesystem::path& path);

}  // namespace rodpo::data
