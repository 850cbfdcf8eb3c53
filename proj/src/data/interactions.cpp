#include "rodpo/data/interactions.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "rodpo/numerics/tensor.hpp"

namespace rodpo::data {

int IdMap::intern(const std::string& key) {
  auto [it, inserted] = ids_.try_emplace(key, static_cast<int>(keys_.size()));
  if (inserted) keys_.push_back(key);
  return it->second;
}

int IdMap::find(const std::string& key) const {
  auto it = ids_.find(key);
  return it == ids_.end() ? -1 : it->second;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

RawInteractions parse_interactions(std::istream& in) {
  RawInteractions raw;
  std::set<std::tuple<int, int, std::int64_t>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw DataError("interactions line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    std::int64_t ts = 0;
    const auto& f = fields[2];
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw DataError("interactions line " + std::to_string(line_no) + ": bad timestamp '" + f + "'");
    }
    if (ts < 0) {
      throw DataError("interactions line " + std::to_string(line_no) + ": negative timestamp");
    }
    const int u = raw.users.intern(fields[0]);
    const int i = raw.items.intern(fields[1]);
    if (!seen.emplace(u, i, ts).second) {
      ++raw.duplicates_dropped;
      continue;
    }
    raw.records.push_back({u, i, ts});
  }
  if (raw.records.empty()) {
    throw DataError("interactions file contains no records");
  }
  return raw;
}

RawInteractions load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file " + path.string());
  return parse_interactions(in);
}

RawInteractions kcore_filter(const RawInteractions& raw, int k) {
  if (k < 1) throw ContractError("kcore_filter: k must be >= 1");
  std::vector<char> alive(raw.records.size(), 1);
  std::vector<int> user_count(static_cast<std::size_t>(raw.users.size()));
  std::vector<int> item_count(static_cast<std::size_t>(raw.items.size()));
  bool changed = true;
  while (changed) {
    changed = false;
    std::fill(user_count.begin(), user_count.end(), 0);
    std::fill(item_count.begin(), item_count.end(), 0);
    for (std::size_t r = 0; r < raw.records.size(); ++r) {
      if (!alive[r]) continue;
      ++user_count[static_cast<std::size_t>(raw.records[r].user)];
      ++item_count[static_cast<std::size_t>(raw.records[r].item)];
    }
    for (std::size_t r = 0; r < raw.records.size(); ++r) {
      if (!alive[r]) continue;
      const auto& rec = raw.records[r];
      if (user_count[static_cast<std::size_t>(rec.user)] < k || item_count[static_cast<std::size_t>(rec.item)] < k) {
        alive[r] = 0;
        changed = true;
      }
    }
  }

  RawInteractions out;
  out.duplicates_dropped = raw.duplicates_dropped;
  for (std::size_t r = 0; r < raw.records.size(); ++r) {
    if (!alive[r]) continue;
    const auto& rec = raw.records[r];
    out.records.push_back({out.users.intern(raw.users.key(rec.user)), out.items.intern(raw.items.key(rec.item)),
                           rec.timestamp});
  }
  if (out.records.empty()) {
    throw DataError("dataset eliminated: no records survive " + std::to_string(k) + "-core filtering");
  }
  return out;
}

std::vector<InteractionSequence> build_sequences(const RawInteractions& raw) {
  std::vector<std::vector<RawRecord>> per_user(static_cast<std::size_t>(raw.users.size()));
  for (const auto& rec : raw.records) per_user[static_cast<std::size_t>(rec.user)].push_back(rec);
  std::vector<InteractionSequence> seqs;
  seqs.reserve(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& recs = per_user[u];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RawRecord& a, const RawRecord& b) { return a.timestamp < b.timestamp; });
    InteractionSequence s;
    s.user_id = static_cast<int>(u);
    for (const auto& r : recs) {
      s.items.push_back(r.item);
      s.timestamps.push_back(r.timestamp);
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

}  // namespace rodpo::data
