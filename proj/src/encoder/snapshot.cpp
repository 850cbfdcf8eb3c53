#include "rodpo/encoder/snapshot.hpp"

#include <cstring>
#include <fstream>

#include "rodpo/binary_io.hpp"

namespace rodpo::encoder {

namespace {
constexpr char kMagic[8] = {'R', 'O', 'D', 'P', 'O', 'P', 'S', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

PolicySnapshot make_snapshot(const Encoder<float>& model) { return {model.config(), model.params()}; }

Encoder<float> restore_encoder(const PolicySnapshot& snap, const data::ItemCatalog& catalog) {
  return Encoder<float>(snap.config, catalog, snap.params);
}

void write_tensors(std::ostream& out, const ParameterSet<float>& params) {
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    io::write_string(out, p.name);
    io::write_matrix(out, p.value);
  }
}

ParameterSet<float> read_tensors(std::istream& in) {
  const auto n = io::read_pod<std::uint64_t>(in, "tensor count");
  if (n > (1u << 20)) throw DataError("implausible tensor count");
  ParameterSet<float> params;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = io::read_string(in, "tensor name", 4096);
    Matrix<float> value = io::read_matrix(in, name.c_str());
    params.add(std::move(name), std::move(value));
  }
  return params;
}

void write_snapshot(std::ostream& out, const PolicySnapshot& snap) {
  out.write(kMagic, sizeof kMagic);
  io::write_pod(out, kVersion);
  io::write_string(out, to_text(snap.config));
  write_tensors(out, snap.params);
}

PolicySnapshot read_snapshot(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a policy snapshot (bad magic)");
  const auto version = io::read_pod<std::uint32_t>(in, "snapshot version");
  if (version != kVersion) throw DataError("unsupported snapshot version " + std::to_string(version));
  PolicySnapshot s;
  s.config = encoder_config_from_text(io::read_string(in, "snapshot config"));
  s.params = read_tensors(in);
  return s;
}

void save_snapshot(const std::filesystem::path& path, const PolicySnapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_snapshot(out, snap);
  if (!out) throw DataError("failed writing " + path.string());
}

PolicySnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open snapshot " + path.string());
  return read_snapshot(in);
}

}  // namespace rodpo::encoder
