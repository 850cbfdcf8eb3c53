#pragma once

#include <filesystem>
#include <optional>

#include "rodpo/data/catalog.hpp"
#include "rodpo/data/dataset.hpp"
#include "rodpo/data/interactions.hpp"
#include "rodpo/data/synthetic.hpp"

namespace rodpo::data {

/// Everything a training or evaluation command reads from a dataset
/// directory. `truth` is present only for synthetic data.
struct Dataset {
  SplitDataset split;
  ItemCatalog catalog;
  std::optional<GroundTruth> truth;
};

// Directory layout:
//   split.manifest          per-user train/valid/test ids and timestamps
//   user_map.tsv, item_map.tsv   key<TAB>dense id (when keys exist)
//   text_features.fm, image_features.fm   RODPOFM1 matrices (optional)
//   stats.json              dataset statistics
//   utility.fm, exposure.fm, false_negatives.tsv   synthetic ground truth
namespace files {
inline constexpr const char* split = "split.manifest";
inline constexpr const char* user_map = "user_map.tsv";
inline constexpr const char* item_map = "item_map.tsv";
inline constexpr const char* text = "text_features.fm";
inline constexpr const char* image = "image_features.fm";
inline constexpr const char* stats = "stats.json";
inline constexpr const char* utility = "utility.fm";
inline constexpr const char* exposure = "exposure.fm";
inline constexpr const char* false_negatives = "false_negatives.tsv";
inline constexpr const char* interactions = "interactions.tsv";
}  // namespace files

void write_id_map(const std::filesystem::path& path, const IdMap& map);

void save_dataset(const std::filesystem::path& dir, const SplitDataset& split, const ItemCatalog& catalog);
void save_synthetic(const std::filesystem::path& dir, const SyntheticDataset& ds);

/// Popularity is recomputed from the split's full sequences.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace rodpo::data
