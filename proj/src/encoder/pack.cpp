#include "rodpo/encoder/encoder.hpp"

namespace rodpo::encoder {

PackedInput pack(std::span<const data::Context> contexts, int n_buckets) {
  PackedInput p;
  for (const auto& c : contexts) p.append(c.items, c.timestamps, n_buckets);
  return p;
}

PackedInput pack(const data::Batch& batch, int n_buckets) {
  PackedInput p;
  for (int b = 0; b < batch.size(); ++b) {
    const auto row = batch.row(b);
    std::size_t first = 0;
    while (first < row.size() && row[first] == batch.padding_id) ++first;
    const auto* ts = batch.timestamps.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(batch.max_seq_len);
    p.append(row.subspan(first), std::span(ts + first, row.size() - first), n_buckets);
  }
  return p;
}

}  // namespace rodpo::encoder
