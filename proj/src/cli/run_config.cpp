#include "rodpo/cli/run_config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "rodpo/config_value.hpp"

namespace rodpo::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& p : split_commas(value)) out.push_back(static_cast<int>(parse_int(key, p)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& p : split_commas(value)) out.push_back(parse_double(key, p));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "data.dir") {
    data_dir = value;
  } else if (key == "run.output") {
    output_dir = value;
  } else if (key == "run.seed") {
    train.seed = parse_uint(key, value);
  } else if (key == "eval.ks") {
    ks = parse_int_list(key, value);
  } else if (key == "eval.bins") {
    bins = static_cast<int>(parse_int(key, value));
  } else if (key == "eval.batch_size") {
    train.eval_batch_size = static_cast<int>(parse_int(key, value));
  } else if (!model.set(key, value) && !train.set(key, value)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out = {{"data.dir", data_dir.string()},
                                                           {"run.output", output_dir.string()},
                                                           {"run.seed", std::to_string(train.seed)}};
  for (auto& e : model.entries()) out.push_back(std::move(e));
  for (auto& e : train.entries()) {
    if (e.first != "train.seed") out.push_back(std::move(e));
  }
  out.emplace_back("eval.ks", join(ks));
  out.emplace_back("eval.bins", std::to_string(bins));
  return out;
}

void RunConfig::validate() const {
  train.validate();
  if (ks.empty()) throw ConfigError("eval.ks must list at least one cutoff");
  for (int k : ks) {
    if (k < 1) throw ConfigError("eval.ks entries must be at least 1");
  }
  if (bins < 10) throw ConfigError("eval.bins must be at least 10");
  if (output_dir.empty()) throw ConfigError("run.output must be set");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

std::string to_text(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [k, v] : cfg.entries()) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

}  // namespace rodpo::cli
