#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rodpo/encoder/config.hpp"
#include "rodpo/trainer/config.hpp"

namespace rodpo::cli {

/// Everything a training command can be told, under namespaced keys:
/// data.*, model.*, moe.*, train.*, dpo.*, eval.* and run.*.
///
/// File format: `[section]` headers followed by `key = value` lines; the
/// header prefixes the keys below it. `#` starts a comment. A key may also
/// be written fully qualified outside any section.
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path output_dir = "runs/default";
  encoder::EncoderConfig model;
  trainer::TrainConfig train;
  std::vector<int> ks = {5, 10};
  int bins = 100;

  /// Applies one fully qualified key. Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
  void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies `key=value` overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);
std::string to_text(const RunConfig& cfg);

std::vector<int> parse_int_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

}  // namespace rodpo::cli
