#include "rodpo/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rodpo/rng.hpp"

namespace rodpo::data {

namespace {

Matrix<double> normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

double GroundTruth::mean_false_negatives() const {
  if (false_negatives.empty()) return 0.0;
  double total = 0.0;
  for (const auto& fn : false_negatives) total += static_cast<double>(fn.size());
  return total / static_cast<double>(false_negatives.size());
}

std::vector<int> top_decile(const Eigen::Ref<const RowVector<float>>& utility_row) {
  const auto n = static_cast<std::size_t>(utility_row.size());
  const std::size_t k = (n + 9) / 10;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](int a, int b) {
    const float ua = utility_row(a), ub = utility_row(b);
    return ua > ub || (ua == ub && a < b);
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_users < 1 || cfg.n_items < 3 || cfg.latent_dim < 1 || cfg.seq_len_mean <= 0 || cfg.text_dim < 0 ||
      cfg.image_dim < 0 || cfg.max_seq_len < 1) {
    throw ConfigError("generate_synthetic: counts must be positive (n_items >= 3)");
  }
  if (!(cfg.exposure_rate > 0.0 && cfg.exposure_rate <= 1.0)) {
    throw ConfigError("generate_synthetic: exposure_rate must lie in (0, 1]");
  }

  Rng latent_rng = make_stream(cfg.seed, "synth/latent");
  Rng exposure_rng = make_stream(cfg.seed, "synth/exposure");
  Rng seq_rng = make_stream(cfg.seed, "synth/sequence");
  Rng feature_rng = make_stream(cfg.seed, "synth/features");

  const Matrix<double> user_lat = normal_matrix(cfg.n_users, cfg.latent_dim, 1.0, latent_rng);
  const Matrix<double> item_lat = normal_matrix(cfg.n_items, cfg.latent_dim, 1.0, latent_rng);

  SyntheticDataset ds;
  ds.truth.n_items = cfg.n_items;
  ds.truth.utility = (user_lat * item_lat.transpose()).cast<float>();

  std::vector<double> expose_p(static_cast<std::size_t>(cfg.n_items), cfg.exposure_rate);
  if (cfg.popularity_exposure) {
    std::normal_distribution<double> prior(0.0, 1.0);
    std::vector<double> w(expose_p.size());
    for (auto& x : w) x = std::exp(prior(latent_rng));
    const double mean_w = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) expose_p[i] = std::min(1.0, cfg.exposure_rate * w[i] / mean_w);
  }

  const auto n_items = static_cast<std::size_t>(cfg.n_items);
  ds.truth.exposure.assign(static_cast<std::size_t>(cfg.n_users) * n_items, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::poisson_distribution<int> extra_len(std::max(cfg.seq_len_mean - 3.0, 1e-9));
  std::uniform_int_distribution<std::int64_t> start_time(0, 100'000'000);
  std::exponential_distribution<double> gap(1.0 / 86400.0);

  std::vector<InteractionSequence> seqs;
  seqs.reserve(static_cast<std::size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    std::uint8_t* row = ds.truth.exposure.data() + static_cast<std::size_t>(u) * n_items;
    std::vector<int> exposed;
    for (int attempt = 0;; ++attempt) {
      exposed.clear();
      for (std::size_t i = 0; i < n_items; ++i) {
        row[i] = unif(exposure_rng) < expose_p[i] ? 1 : 0;
        if (row[i]) exposed.push_back(static_cast<int>(i));
      }
      if (exposed.size() >= 3) break;
      if (attempt + 1 >= cfg.max_retries) {
        throw DataError("generate_synthetic: user " + std::to_string(u) + " has fewer than 3 exposed items after " +
                        std::to_string(cfg.max_retries) + " retries");
      }
    }

    const int length = std::min<int>(3 + extra_len(seq_rng), static_cast<int>(exposed.size()));
    // Gumbel-top-L is sequential sampling without replacement from softmax(U*).
    std::vector<std::pair<double, int>> keys;
    keys.reserve(exposed.size());
    for (int i : exposed) keys.emplace_back(static_cast<double>(ds.truth.utility(u, i)) + gumbel(seq_rng), i);
    std::partial_sort(keys.begin(), keys.begin() + length, keys.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });

    InteractionSequence s;
    s.user_id = u;
    std::int64_t t = 1'600'000'000 + start_time(seq_rng);
    for (int l = 0; l < length; ++l) {
      s.items.push_back(keys[static_cast<std::size_t>(l)].second);
      s.timestamps.push_back(t);
      t += 1 + static_cast<std::int64_t>(gap(seq_rng));
    }
    seqs.push_back(std::move(s));
  }

  ds.truth.false_negatives.resize(static_cast<std::size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    for (int i : top_decile(ds.truth.utility.row(u))) {
      if (!ds.truth.exposure[static_cast<std::size_t>(u) * n_items + static_cast<std::size_t>(i)]) {
        ds.truth.false_negatives[static_cast<std::size_t>(u)].push_back(i);
      }
    }
  }

  ItemCatalog& cat = ds.catalog;
  cat.n_items = cfg.n_items;
  cat.popularity.assign(n_items, 0);
  for (const auto& s : seqs) {
    for (int i : s.items) ++cat.popularity[static_cast<std::size_t>(i)];
  }
  const double proj_sd = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  const Matrix<double> a_txt = normal_matrix(cfg.latent_dim, cfg.text_dim, proj_sd, feature_rng);
  const Matrix<double> a_img = normal_matrix(cfg.latent_dim, cfg.image_dim, proj_sd, feature_rng);
  cat.text = (item_lat * a_txt + normal_matrix(cfg.n_items, cfg.text_dim, cfg.text_noise, feature_rng)).cast<float>();
  cat.image =
      (item_lat * a_img + normal_matrix(cfg.n_items, cfg.image_dim, cfg.image_noise, feature_rng)).cast<float>();

  ds.split = leave_one_out_split(std::move(seqs), cfg.n_items, cfg.max_seq_len);
  return ds;
}

}  // namespace rodpo::data
