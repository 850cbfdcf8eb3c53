#include "rodpo/data/catalog.hpp"

#include <cstring>
#include <fstream>

#include "rodpo/binary_io.hpp"

namespace rodpo::data {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'D', 'P', 'O', 'F', 'M', '1'};

}  // namespace

void ItemCatalog::validate() const {
  if (n_items < 1) throw DataError("catalog has no items");
  if ((text.cols() > 0 && text.rows() != n_items) || (image.cols() > 0 && image.rows() != n_items)) {
    throw DataError("feature row count differs from item count " + std::to_string(n_items));
  }
  if (!all_finite(text) || !all_finite(image)) throw DataError("catalog features contain non-finite values");
}

void save_feature_matrix(const std::filesystem::path& path, const Matrix<float>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write(kMagic, sizeof kMagic);
  io::write_matrix(out, m);
  if (!out) throw DataError("failed writing feature file " + path.string());
}

Matrix<float> read_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + ": bad magic, not a RODPOFM1 feature file");
  }
  return io::read_matrix(in, path.string().c_str());
}

ModalFeatures load_modal_features(const std::filesystem::path& path, int expected_items, int expected_dim) {
  ModalFeatures f;
  f.matrix = read_feature_matrix(path);
  if (f.matrix.rows() != expected_items) {
    throw DataError(path.string() + ": has " + std::to_string(f.matrix.rows()) + " rows, expected " +
                    std::to_string(expected_items));
  }
  if (expected_dim >= 0 && f.matrix.cols() != expected_dim) {
    throw DataError(path.string() + ": feature dimension " + std::to_string(f.matrix.cols()) +
                    " does not match configured " + std::to_string(expected_dim));
  }
  for (Eigen::Index r = 0; r < f.matrix.rows(); ++r) {
    if (f.matrix.cols() > 0 && f.matrix.row(r).array().isNaN().all()) {
      f.matrix.row(r).setZero();
      f.missing_items.push_back(static_cast<int>(r));
    } else if (!all_finite(f.matrix.row(r))) {
      throw DataError(path.string() + ": non-finite value in row " + std::to_string(r));
    }
  }
  return f;
}

}  // namespace rodpo::data
