#include "rodpo/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace rodpo::data {

SplitPart parse_split_part(const std::string& s) {
  if (s == "train") return SplitPart::train;
  if (s == "valid") return SplitPart::valid;
  if (s == "test") return SplitPart::test;
  throw ConfigError("unknown split '" + s + "' (expected train, valid or test)");
}

std::string to_string(SplitPart p) {
  switch (p) {
    case SplitPart::train: return "train";
    case SplitPart::valid: return "valid";
    case SplitPart::test: return "test";
  }
  return "?";
}

std::size_t SplitDataset::n_actions() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.items.size();
  return n;
}

SplitDataset leave_one_out_split(std::vector<InteractionSequence> sequences, int n_items, int max_seq_len) {
  if (max_seq_len < 1) throw ContractError("max_seq_len must be >= 1");
  SplitDataset split;
  split.n_items = n_items;
  split.max_seq_len = max_seq_len;
  for (auto& s : sequences) {
    if (s.length() < 3) {
      ++split.dropped_users;
      continue;
    }
    if (s.items.size() != s.timestamps.size()) throw ContractError("sequence items/timestamps length mismatch");
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      if (s.items[i] < 0 || s.items[i] >= n_items) {
        throw DataError("item id " + std::to_string(s.items[i]) + " out of range");
      }
      if (i > 0 && s.timestamps[i] < s.timestamps[i - 1]) {
        throw DataError("timestamps decrease in sequence of user " + std::to_string(s.user_id));
      }
    }
    split.users.push_back(std::move(s));
  }
  if (split.dropped_users > 0) {
    std::cerr << "warning: dropped " << split.dropped_users << " user(s) with fewer than 3 interactions\n";
  }
  return split;
}

std::vector<Example> training_examples(const SplitDataset& split) {
  std::vector<Example> out;
  for (int u = 0; u < split.n_users(); ++u) {
    const auto& items = split.users[static_cast<std::size_t>(u)].items;
    const int n = static_cast<int>(items.size());
    for (int j = 1; j < n - 2; ++j) out.push_back({u, j, items[static_cast<std::size_t>(j)]});
  }
  return out;
}

std::vector<Example> evaluation_examples(const SplitDataset& split, SplitPart part) {
  if (part == SplitPart::train) throw ContractError("evaluation_examples: use training_examples for train");
  std::vector<Example> out;
  out.reserve(split.users.size());
  for (int u = 0; u < split.n_users(); ++u) {
    const auto& items = split.users[static_cast<std::size_t>(u)].items;
    const int end = static_cast<int>(items.size()) - (part == SplitPart::valid ? 2 : 1);
    out.push_back({u, end, items[static_cast<std::size_t>(end)]});
  }
  return out;
}

Context context_of(const SplitDataset& split, const Example& ex) {
  const auto& seq = split.users[static_cast<std::size_t>(ex.user)];
  const int start = std::max(0, ex.end - split.max_seq_len);
  const auto len = static_cast<std::size_t>(ex.end - start);
  return {std::span<const int>(seq.items).subspan(static_cast<std::size_t>(start), len),
          std::span<const std::int64_t>(seq.timestamps).subspan(static_cast<std::size_t>(start), len)};
}

Batch make_batch(const SplitDataset& split, std::span<const Example> examples) {
  Batch b;
  b.max_seq_len = split.max_seq_len;
  b.padding_id = split.padding_id();
  const std::size_t L = static_cast<std::size_t>(split.max_seq_len);
  b.items.assign(examples.size() * L, b.padding_id);
  b.timestamps.assign(examples.size() * L, 0);
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const Context ctx = context_of(split, examples[e]);
    const std::size_t pad = L - ctx.items.size();
    std::copy(ctx.items.begin(), ctx.items.end(), b.items.begin() + static_cast<std::ptrdiff_t>(e * L + pad));
    std::copy(ctx.timestamps.begin(), ctx.timestamps.end(),
              b.timestamps.begin() + static_cast<std::ptrdiff_t>(e * L + pad));
    b.users.push_back(examples[e].user);
    b.targets.push_back(examples[e].target);
  }
  return b;
}

BatchIterator::BatchIterator(const SplitDataset& split, std::vector<Example> examples, int batch_size,
                             std::uint64_t shuffle_seed)
    : split_(&split), examples_(std::move(examples)), batch_size_(batch_size), rng_(shuffle_seed) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  order_.resize(examples_.size());
  std::iota(order_.begin(), order_.end(), 0U);
  cursor_ = order_.size();
}

void BatchIterator::begin_epoch() {
  std::iota(order_.begin(), order_.end(), 0U);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(order_.size() - cursor_, static_cast<std::size_t>(batch_size_));
  std::vector<Example> picked;
  picked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) picked.push_back(examples_[order_[cursor_ + i]]);
  cursor_ += n;
  out = make_batch(*split_, picked);
  return true;
}

std::string BatchIterator::rng_state() const { return rodpo::rng_state(rng_); }

void BatchIterator::restore(std::vector<std::uint32_t> order, std::size_t cursor, const std::string& state) {
  if (order.size() != examples_.size()) throw DataError("batch order does not match example count");
  order_ = std::move(order);
  cursor_ = cursor;
  restore_rng(rng_, state);
}

DatasetStats dataset_stats(const SplitDataset& split) {
  DatasetStats s;
  s.users = split.users.size();
  s.items = static_cast<std::size_t>(split.n_items);
  s.actions = split.n_actions();
  s.avg_length = s.users ? static_cast<double>(s.actions) / static_cast<double>(s.users) : 0.0;
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  s.sparsity = cells > 0 ? 1.0 - static_cast<double>(s.actions) / cells : 0.0;
  return s;
}

std::string stats_json(const DatasetStats& s) {
  nlohmann::ordered_json j;
  j["users"] = s.users;
  j["items"] = s.items;
  j["actions"] = s.actions;
  j["avg_length"] = s.avg_length;
  j["sparsity"] = s.sparsity;
  return j.dump(2);
}

namespace {

template <typename T>
std::string join(const std::vector<T>& v, std::size_t begin, std::size_t end) {
  std::ostringstream os;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) os << ' ';
    os << v[i];
  }
  return os.str();
}

template <typename T>
std::vector<T> parse_list(const std::string& s, std::size_t line_no) {
  std::vector<T> out;
  std::istringstream is(s);
  T v;
  while (is >> v) out.push_back(v);
  if (!is.eof()) throw DataError("split manifest line " + std::to_string(line_no) + ": bad number list");
  return out;
}

}  // namespace

// Layout:
//   #rodpo-split v1
//   n_items=<n>
//   max_seq_len=<L>
//   user<TAB>train<TAB>valid<TAB>test<TAB>timestamps
//   <id><TAB><space separated ids><TAB><id><TAB><id><TAB><space separated seconds>
void write_split_manifest(const std::filesystem::path& path, const SplitDataset& split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << "#rodpo-split v1\n";
  out << "n_items=" << split.n_items << '\n';
  out << "max_seq_len=" << split.max_seq_len << '\n';
  out << "user\ttrain\tvalid\ttest\ttimestamps\n";
  for (const auto& s : split.users) {
    const std::size_t n = s.items.size();
    out << s.user_id << '\t' << join(s.items, 0, n - 2) << '\t' << s.items[n - 2] << '\t' << s.items[n - 1] << '\t'
        << join(s.timestamps, 0, n) << '\n';
  }
  if (!out) throw DataError("failed writing split manifest " + path.string());
}

SplitDataset read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto expect_kv = [&](const std::string& key) {
    ++line_no;
    if (!std::getline(in, line) || line.rfind(key + "=", 0) != 0) {
      throw DataError("split manifest line " + std::to_string(line_no) + ": expected " + key);
    }
    return std::stoi(line.substr(key.size() + 1));
  };
  ++line_no;
  if (!std::getline(in, line) || line != "#rodpo-split v1") throw DataError("not a rodpo split manifest");
  const int n_items = expect_kv("n_items");
  const int max_len = expect_kv("max_seq_len");
  ++line_no;
  std::getline(in, line);
  std::vector<InteractionSequence> seqs;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 5) throw DataError("split manifest line " + std::to_string(line_no) + ": expected 5 fields");
    InteractionSequence s;
    s.user_id = std::stoi(f[0]);
    s.items = parse_list<int>(f[1], line_no);
    s.items.push_back(std::stoi(f[2]));
    s.items.push_back(std::stoi(f[3]));
    s.timestamps = parse_list<std::int64_t>(f[4], line_no);
    if (s.timestamps.size() != s.items.size()) {
      throw DataError("split manifest line " + std::to_string(line_no) + ": timestamp count mismatch");
    }
    seqs.push_back(std::move(s));
  }
  auto split = leave_one_out_split(std::move(seqs), n_items, max_len);
  if (split.dropped_users != 0) throw DataError("split manifest contains sequences shorter than 3");
  return split;
}

}  // namespace rodpo::data
