#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace rodpo::cli {

std::string sha1_hex(const void* data, std::size_t size);
std::string sha1_file(const std::filesystem::path& path);
/// Digest of a file, or of a directory's regular files taken in name order
/// (relative name and content hash of each).
std::string sha1_tree(const std::filesystem::path& path);

/// Named RNG streams derived from a master seed, for the record.
nlohmann::ordered_json stream_seeds(std::uint64_t master, const std::vector<std::string>& names);

/// Written before a command mutates anything; holds what is needed to run
/// it again: the command line, resolved configuration, input digests,
/// seeds and the artifacts the command writes.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::pair<std::string, std::string>> config;
  std::map<std::string, std::string> inputs;  // path -> sha1
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  std::vector<std::string> artifacts;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace rodpo::cli
