#include "rodpo/encoder/config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include "rodpo/config_value.hpp"

namespace rodpo::encoder {

namespace {

struct Field {
  std::function<void(EncoderConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const EncoderConfig&)> get;
};

template <typename T>
Field int_field(T EncoderConfig::*m) {
  return {[m](EncoderConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<T>(parse_int(k, v)); },
          [m](const EncoderConfig& c) { return std::to_string(c.*m); }};
}
Field bool_field(bool EncoderConfig::*m) {
  return {[m](EncoderConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const EncoderConfig& c) { return format_bool(c.*m); }};
}
Field moe_int(int MoEConfig::*m) {
  return {[m](EncoderConfig& c, const std::string& k, const std::string& v) {
            c.moe.*m = static_cast<int>(parse_int(k, v));
          },
          [m](const EncoderConfig& c) { return std::to_string(c.moe.*m); }};
}
Field moe_bool(bool MoEConfig::*m) {
  return {[m](EncoderConfig& c, const std::string& k, const std::string& v) { c.moe.*m = parse_bool(k, v); },
          [m](const EncoderConfig& c) { return format_bool(c.moe.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"model.n_items", int_field(&EncoderConfig::n_items)},
      {"model.dim", int_field(&EncoderConfig::dim)},
      {"model.max_seq_len", int_field(&EncoderConfig::max_seq_len)},
      {"model.layers", int_field(&EncoderConfig::n_layers)},
      {"model.heads", int_field(&EncoderConfig::n_heads)},
      {"model.ff_mult", int_field(&EncoderConfig::ff_mult)},
      {"model.use_text", bool_field(&EncoderConfig::use_text)},
      {"model.use_image", bool_field(&EncoderConfig::use_image)},
      {"model.text_dim", int_field(&EncoderConfig::text_dim)},
      {"model.image_dim", int_field(&EncoderConfig::image_dim)},
      {"model.temporal", bool_field(&EncoderConfig::temporal)},
      {"model.time_buckets", int_field(&EncoderConfig::time_buckets)},
      {"model.init_std",
       {[](EncoderConfig& c, const std::string& k, const std::string& v) { c.init_std = parse_double(k, v); },
        [](const EncoderConfig& c) { return format_double(c.init_std); }}},
      {"moe.enabled", moe_bool(&MoEConfig::enabled)},
      {"moe.experts", moe_int(&MoEConfig::n_experts)},
      {"moe.active_k", moe_int(&MoEConfig::active_k)},
      {"moe.noise", moe_bool(&MoEConfig::noise)},
      {"moe.temporal", moe_bool(&MoEConfig::temporal)},
      {"moe.balance_coef",
       {[](EncoderConfig& c, const std::string& k, const std::string& v) { c.moe.balance_coef = parse_double(k, v); },
        [](const EncoderConfig& c) { return format_double(c.moe.balance_coef); }}},
  };
  return f;
}

}  // namespace

void EncoderConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("encoder config: " + what);
  };
  need(n_items >= 2, "n_items must be at least 2");
  need(dim >= 1, "model.dim must be positive");
  need(max_seq_len >= 1, "model.max_seq_len must be positive");
  need(n_layers >= 0, "model.layers must be non-negative");
  need(n_heads >= 1 && dim % n_heads == 0, "model.heads must divide model.dim");
  need(ff_mult >= 1, "model.ff_mult must be positive");
  need(text_dim >= 0 && image_dim >= 0, "feature widths must be non-negative");
  need(time_buckets >= 1, "model.time_buckets must be positive");
  need(init_std > 0, "model.init_std must be positive");
  need(moe.n_experts >= 1, "moe.experts must be positive");
  need(moe.active_k >= 1 && moe.active_k <= moe.n_experts, "moe.active_k must lie in [1, moe.experts]");
  need(moe.balance_coef >= 0, "moe.balance_coef must be non-negative");
}

bool EncoderConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, value);
      return true;
    }
  }
  return false;
}

std::vector<std::pair<std::string, std::string>> EncoderConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : fields()) out.emplace_back(name, field.get(*this));
  return out;
}

std::string to_text(const EncoderConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : cfg.entries()) os << k << '=' << v << '\n';
  return os.str();
}

EncoderConfig encoder_config_from_text(const std::string& text) {
  EncoderConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("encoder config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    if (!cfg.set(key, line.substr(eq + 1))) throw ConfigError("encoder config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace rodpo::encoder
