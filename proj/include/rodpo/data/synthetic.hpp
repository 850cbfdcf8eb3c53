#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rodpo/data/catalog.hpp"
#include "rodpo/data/dataset.hpp"

namespace rodpo::data {

struct SyntheticConfig {
  int n_users = 1000;
  int n_items = 500;
  int latent_dim = 8;
  double seq_len_mean = 10.0;
  double exposure_rate = 0.3;
  std::uint64_t seed = 0;
  int text_dim = 32;
  int image_dim = 32;
  double text_noise = 0.5;
  double image_noise = 1.0;
  /// Exposure probability scaled by a per-item log-normal popularity prior
  /// (mean rate preserved, clipped to [0, 1]).
  bool popularity_exposure = false;
  int max_seq_len = 50;
  int max_retries = 20;
};

/// Planted ground truth of a synthetic dataset.
///
/// A false negative for user u is an item in u's top decile of utility that
/// was never exposed to u (hence never interacted with).
struct GroundTruth {
  int n_items = 0;
  Matrix<float> utility;               // n_users x n_items
  std::vector<std::uint8_t> exposure;  // n_users * n_items, row-major
  std::vector<std::vector<int>> false_negatives;

  bool exposed(int user, int item) const {
    return exposure[static_cast<std::size_t>(user) * static_cast<std::size_t>(n_items) +
                    static_cast<std::size_t>(item)] != 0;
  }
  double mean_false_negatives() const;
};

struct SyntheticDataset {
  SplitDataset split;
  ItemCatalog catalog;
  GroundTruth truth;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Item indices of `utility_row` in its top decile (ceil(n/10) highest,
/// lower index first on ties).
std::vector<int> top_decile(const Eigen::Ref<const RowVector<float>>& utility_row);

}  // namespace rodpo::data
