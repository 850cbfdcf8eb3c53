#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rodpo/numerics/tensor.hpp"

namespace rodpo::data {

/// Item universe with pre-extracted per-item modal features. Either feature
/// matrix may have zero columns, which disables that modality.
struct ItemCatalog {
  int n_items = 0;
  Matrix<float> text;
  Matrix<float> image;
  std::vector<std::int64_t> popularity;

  int text_dim() const { return static_cast<int>(text.cols()); }
  int image_dim() const { return static_cast<int>(image.cols()); }
  void validate() const;
};

/// Binary feature matrix: magic "RODPOFM1", u64 rows, u64 cols (little
/// endian), then rows*cols little-endian float32 values in row-major order.
void save_feature_matrix(const std::filesystem::path& path, const Matrix<float>& m);
Matrix<float> read_feature_matrix(const std::filesystem::path& path);

struct ModalFeatures {
  Matrix<float> matrix;
  /// Rows stored entirely as NaN mark items with no features; they are
  /// replaced by zeros and flagged here.
  std::vector<int> missing_items;
};

/// Loads a feature file for exactly `expected_items` rows. `expected_dim`
/// < 0 accepts any width.
ModalFeatures load_modal_features(const std::filesystem::path& path, int expected_items, int expected_dim = -1);

}  // namespace rodpo::data
