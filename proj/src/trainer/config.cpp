#include "rodpo/trainer/config.hpp"

#include <functional>
#include <sstream>

#include "rodpo/config_value.hpp"

namespace rodpo::trainer {

namespace {

struct Field {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field int_field(std::string key, T TrainConfig::*m) {
  return {key, [m, key](TrainConfig& c, const std::string& v) { c.*m = static_cast<T>(parse_int(key, v)); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}
Field real_field(std::string key, double TrainConfig::*m) {
  return {key, [m, key](TrainConfig& c, const std::string& v) { c.*m = parse_double(key, v); },
          [m](const TrainConfig& c) { return format_double(c.*m); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      int_field("train.stage1_epochs", &TrainConfig::stage1_epochs),
      int_field("train.stage2_max_epochs", &TrainConfig::stage2_max_epochs),
      real_field("train.lr", &TrainConfig::learning_rate),
      int_field("train.batch_size", &TrainConfig::batch_size),
      real_field("train.adam_beta1", &TrainConfig::adam_beta1),
      real_field("train.adam_beta2", &TrainConfig::adam_beta2),
      real_field("train.adam_eps", &TrainConfig::adam_eps),
      real_field("train.clip_norm", &TrainConfig::clip_norm),
      int_field("train.patience", &TrainConfig::patience),
      int_field("train.eval_batch_size", &TrainConfig::eval_batch_size),
      {"train.seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_uint("train.seed", v); },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      {"dpo.enabled", [](TrainConfig& c, const std::string& v) { c.dpo.enabled = parse_bool("dpo.enabled", v); },
       [](const TrainConfig& c) { return format_bool(c.dpo.enabled); }},
      {"dpo.beta", [](TrainConfig& c, const std::string& v) { c.dpo.beta = parse_double("dpo.beta", v); },
       [](const TrainConfig& c) { return format_double(c.dpo.beta); }},
      {"dpo.lambda", [](TrainConfig& c, const std::string& v) { c.dpo.lambda = parse_double("dpo.lambda", v); },
       [](const TrainConfig& c) { return format_double(c.dpo.lambda); }},
      {"dpo.k", [](TrainConfig& c, const std::string& v) { c.dpo.k = static_cast<int>(parse_int("dpo.k", v)); },
       [](const TrainConfig& c) { return std::to_string(c.dpo.k); }},
      {"dpo.strategy", [](TrainConfig& c, const std::string& v) { c.dpo.strategy = preference::parse_strategy(v); },
       [](const TrainConfig& c) { return preference::to_string(c.dpo.strategy); }},
      {"dpo.exclude_history",
       [](TrainConfig& c, const std::string& v) { c.dpo.exclude_history = parse_bool("dpo.exclude_history", v); },
       [](const TrainConfig& c) { return format_bool(c.dpo.exclude_history); }},
  };
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  need(stage1_epochs >= 1, "train.stage1_epochs must be at least 1");
  need(stage2_max_epochs >= 1, "train.stage2_max_epochs must be at least 1");
  need(learning_rate > 0, "train.lr must be positive");
  need(batch_size >= 1, "train.batch_size must be positive");
  need(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "Adam betas must lie in [0, 1)");
  need(adam_eps > 0, "train.adam_eps must be positive");
  need(clip_norm > 0, "train.clip_norm must be positive");
  need(patience >= 1, "train.patience must be at least 1");
  need(eval_batch_size >= 1, "train.eval_batch_size must be positive");
  need(dpo.beta > 0, "dpo.beta must be positive");
  need(dpo.lambda >= 0, "dpo.lambda must be non-negative");
  need(dpo.k >= 1, "dpo.k must be at least 1");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return true;
    }
  }
  return false;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : cfg.entries()) os << k << '=' << v << '\n';
  return os.str();
}

TrainConfig train_config_from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("train config: malformed line '" + line + "'");
    if (!cfg.set(line.substr(0, eq), line.substr(eq + 1))) {
      throw ConfigError("train config: unknown key '" + line.substr(0, eq) + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace rodpo::trainer
