#pragma once

#include <string>
#include <utility>
#include <vector>

namespace rodpo::encoder {

/// Sparse noisy mixture-of-experts settings.
struct MoEConfig {
  bool enabled = true;
  int n_experts = 4;
  int active_k = 2;
  bool noise = true;
  /// Applies a second MoE to the temporally fused last state.
  bool temporal = true;
  /// Weight of the squared-coefficient-of-variation load balancing term.
  double balance_coef = 0.0;
};

struct EncoderConfig {
  int n_items = 0;
  int dim = 64;
  int max_seq_len = 50;
  int n_layers = 2;
  int n_heads = 2;
  int ff_mult = 4;
  bool use_text = true;
  bool use_image = true;
  /// Feature widths, resolved from the catalog (0 disables the modality).
  int text_dim = 0;
  int image_dim = 0;
  bool temporal = true;
  int time_buckets = 64;
  double init_std = 0.02;
  MoEConfig moe;

  int ff_dim() const { return ff_mult * dim; }
  bool has_text() const { return use_text && text_dim > 0; }
  bool has_image() const { return use_image && image_dim > 0; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  /// Keys use the `model.` and `moe.` namespaces of the run configuration.
  /// Returns false when `key` is not an encoder key; throws ConfigError on a
  /// malformed value.
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
};

std::string to_text(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_text(const std::string& text);

}  // namespace rodpo::encoder
