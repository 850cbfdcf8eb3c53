#include "rodpo/data/store.hpp"

#include <fstream>
#include <sstream>

namespace rodpo::data {

namespace fs = std::filesystem;

void write_id_map(const fs::path& path, const IdMap& map) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (int i = 0; i < map.size(); ++i) out << map.key(i) << '\t' << i << '\n';
}

void save_dataset(const fs::path& dir, const SplitDataset& split, const ItemCatalog& catalog) {
  fs::create_directories(dir);
  write_split_manifest(dir / files::split, split);
  if (catalog.text_dim() > 0) save_feature_matrix(dir / files::text, catalog.text);
  if (catalog.image_dim() > 0) save_feature_matrix(dir / files::image, catalog.image);
  std::ofstream(dir / files::stats) << stats_json(dataset_stats(split)) << '\n';
}

void save_synthetic(const fs::path& dir, const SyntheticDataset& ds) {
  save_dataset(dir, ds.split, ds.catalog);
  save_feature_matrix(dir / files::utility, ds.truth.utility);
  Matrix<float> exposure(ds.truth.utility.rows(), ds.truth.utility.cols());
  for (Eigen::Index i = 0; i < exposure.size(); ++i) {
    exposure.data()[i] = ds.truth.exposure[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
  }
  save_feature_matrix(dir / files::exposure, exposure);

  std::ofstream fn(dir / files::false_negatives);
  for (std::size_t u = 0; u < ds.truth.false_negatives.size(); ++u) {
    fn << u << '\t';
    for (std::size_t k = 0; k < ds.truth.false_negatives[u].size(); ++k) {
      if (k) fn << ' ';
      fn << ds.truth.false_negatives[u][k];
    }
    fn << '\n';
  }

  // The raw log in the interactions file format, so the preprocessing path
  // can be exercised on synthetic data too.
  std::ofstream log(dir / files::interactions);
  log << "# user\titem\ttimestamp\n";
  for (const auto& s : ds.split.users) {
    for (std::size_t l = 0; l < s.items.size(); ++l) {
      log << 'u' << s.user_id << "\ti" << s.items[l] << '\t' << s.timestamps[l] << '\n';
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / files::split)) throw DataError("no " + std::string(files::split) + " in " + dir.string());
  Dataset d;
  d.split = read_split_manifest(dir / files::split);
  d.catalog.n_items = d.split.n_items;
  if (fs::exists(dir / files::text)) d.catalog.text = load_modal_features(dir / files::text, d.split.n_items).matrix;
  if (fs::exists(dir / files::image)) {
    d.catalog.image = load_modal_features(dir / files::image, d.split.n_items).matrix;
  }
  d.catalog.popularity.assign(static_cast<std::size_t>(d.split.n_items), 0);
  for (const auto& s : d.split.users) {
    for (int i : s.items) ++d.catalog.popularity[static_cast<std::size_t>(i)];
  }
  d.catalog.validate();

  if (fs::exists(dir / files::utility)) {
    GroundTruth t;
    t.n_items = d.split.n_items;
    t.utility = read_feature_matrix(dir / files::utility);
    const Matrix<float> exposure = read_feature_matrix(dir / files::exposure);
    if (t.utility.cols() != d.split.n_items || exposure.rows() != t.utility.rows() ||
        exposure.cols() != t.utility.cols()) {
      throw DataError("synthetic ground truth does not match the split");
    }
    t.exposure.resize(static_cast<std::size_t>(exposure.size()));
    for (Eigen::Index i = 0; i < exposure.size(); ++i) {
      t.exposure[static_cast<std::size_t>(i)] = exposure.data()[i] != 0.0f;
    }
    t.false_negatives.resize(static_cast<std::size_t>(t.utility.rows()));
    std::ifstream in(dir / files::false_negatives);
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("malformed false_negatives.tsv");
      const auto u = static_cast<std::size_t>(std::stoul(line.substr(0, tab)));
      if (u >= t.false_negatives.size()) throw DataError("false_negatives.tsv: user out of range");
      std::istringstream is(line.substr(tab + 1));
      int i;
      while (is >> i) t.false_negatives[u].push_back(i);
    }
    d.truth = std::move(t);
  }
  return d;
}

}  // namespace rodpo::data
