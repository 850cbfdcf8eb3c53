#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

namespace rodpo::data {

/// Dense string-key to id assignment in first-appearance order.
class IdMap {
 public:
  int intern(const std::string& key);
  int find(const std::string& key) const;  // -1 when absent
  const std::string& key(int id) const { return keys_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(keys_.size()); }
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, int> ids_;
};

struct RawRecord {
  int user = 0;
  int item = 0;
  std::int64_t timestamp = 0;
};

/// Interaction log with dense user/item ids.
struct RawInteractions {
  std::vector<RawRecord> records;
  IdMap users;
  IdMap items;
  std::size_t duplicates_dropped = 0;
};

/// Parses `user_key \t item_key \t unix_timestamp` lines; `#` lines and blank
/// lines are skipped. Duplicate (user, item, timestamp) triples are dropped.
RawInteractions parse_interactions(std::istream& in);
RawInteractions load_interactions(const std::filesystem::path& path);

/// Repeatedly drops users and items with fewer than `k` interactions until
/// nothing changes. Survivors keep their order and are re-indexed densely.
RawInteractions kcore_filter(const RawInteractions& raw, int k);

struct InteractionSequence {
  int user_id = 0;
  std::vector<int> items;
  std::vector<std::int64_t> timestamps;

  int length() const { return static_cast<int>(items.size()); }
};

/// One time-ordered sequence per user id (stable for equal timestamps).
std::vector<InteractionSequence> build_sequences(const RawInteractions& raw);

}  // namespace rodpo::data
