#include "rodpo/cli/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <memory>

#include "rodpo/numerics/tensor.hpp"
#include "rodpo/rng.hpp"

namespace rodpo::cli {

namespace fs = std::filesystem;

namespace {

struct DigestCtx {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  DigestCtx() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1) throw DataError("sha1: digest init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) throw DataError("sha1: digest update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw DataError("sha1: digest final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
};

}  // namespace

std::string sha1_hex(const void* data, std::size_t size) {
  DigestCtx d;
  d.update(data, size);
  return d.hex();
}

std::string sha1_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  DigestCtx d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

std::string sha1_tree(const fs::path& path) {
  if (!fs::is_directory(path)) return sha1_file(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), path));
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f.generic_string() + '\t' + sha1_file(path / f) + '\n';
  return sha1_hex(listing.data(), listing.size());
}

nlohmann::ordered_json stream_seeds(std::uint64_t master, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["master"] = master;
  for (const auto& n : names) j[n] = stream_seed(master, n);
  return j;
}

nlohmann::ordered_json Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  j["config"] = cfg;
  j["inputs"] = inputs;
  j["seeds"] = seeds;
  j["artifacts"] = artifacts;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_manifest(const fs::path& path, const Manifest& m) { write_file_atomic(path, m.to_json().dump(2) + "\n"); }

}  // namespace rodpo::cli
