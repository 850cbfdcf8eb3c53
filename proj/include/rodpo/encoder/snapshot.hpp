#pragma once

#include <filesystem>
#include <iosfwd>

#include "rodpo/encoder/encoder.hpp"

namespace rodpo::encoder {

/// Frozen model state: the resolved configuration plus every tensor in
/// float32.
///
/// Byte layout (all integers little endian):
///   magic "RODPOPS1" | u32 version (1) | u32 len + config text (key=value lines)
///   u64 tensor count | per tensor: u32 len + name, u64 rows, u64 cols,
///   rows*cols float32 row-major
struct PolicySnapshot {
  EncoderConfig config;
  ParameterSet<float> params;

  std::uint64_t checksum() const { return params.checksum(); }
};

PolicySnapshot make_snapshot(const Encoder<float>& model);
Encoder<float> restore_encoder(const PolicySnapshot& snap, const data::ItemCatalog& catalog);

void write_snapshot(std::ostream& out, const PolicySnapshot& snap);
PolicySnapshot read_snapshot(std::istream& in);
void save_snapshot(const std::filesystem::path& path, const PolicySnapshot& snap);
PolicySnapshot load_snapshot(const std::filesystem::path& path);

/// Tensor list in the snapshot's per-tensor encoding (shared with
/// checkpoints).
void write_tensors(std::ostream& out, const ParameterSet<float>& params);
ParameterSet<float> read_tensors(std::istream& in);

}  // namespace rodpo::encoder
