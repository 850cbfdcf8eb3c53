#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rodpo/data/catalog.hpp"
#include "rodpo/data/dataset.hpp"
#include "rodpo/encoder/config.hpp"
#include "rodpo/encoder/moe.hpp"
#include "rodpo/numerics/params.hpp"

namespace rodpo::encoder {

enum class Modality { id = 0, text = 1, image = 2 };
inline constexpr std::array<const char*, 3> modality_names = {"id", "txt", "img"};

/// Interval bucket of a gap in seconds: 0 below one second, otherwise
/// 1 + floor(log2(gap)), capped at n_buckets - 1.
inline int interval_bucket(std::int64_t gap, int n_buckets) {
  if (gap < 1) return 0;
  int b = 1;
  while (gap > 1) {
    gap >>= 1;
    ++b;
  }
  return std::min(b, n_buckets - 1);
}

/// Contexts packed back to back with padding removed. Positions count
/// from the start of each context.
struct PackedInput {
  SequenceLayout layout;
  std::vector<int> items;
  std::vector<int> positions;
  std::vector<int> buckets;

  void append(std::span<const int> seq_items, std::span<const std::int64_t> seq_times, int n_buckets) {
    if (seq_items.empty()) throw ContractError("cannot encode an empty context");
    for (std::size_t l = 0; l < seq_items.size(); ++l) {
      items.push_back(seq_items[l]);
      positions.push_back(static_cast<int>(l));
      buckets.push_back(l == 0 ? 0 : interval_bucket(seq_times[l] - seq_times[l - 1], n_buckets));
    }
    layout.offsets.push_back(layout.offsets.back() + static_cast<int>(seq_items.size()));
  }
};

PackedInput pack(std::span<const data::Context> contexts, int n_buckets);
PackedInput pack(const data::Batch& batch, int n_buckets);

/// Everything one forward pass produces.
template <typename Scalar>
struct Forward {
  Var<Scalar> logits;                                  // contexts x items
  std::array<std::optional<Var<Scalar>>, 3> components;  // s_id, s_txt, s_img
  std::array<std::optional<Var<Scalar>>, 3> hidden;      // packed stream outputs
  std::array<std::optional<Var<Scalar>>, 3> user;        // contexts x d, fed to scoring
  std::optional<Var<Scalar>> balance_loss;             // sum of cv^2 terms
};

/// Runtime switches of a forward pass. Noise is injected only in training
/// mode with a noise stream attached.
struct ForwardMode {
  bool training = false;
  Rng* noise = nullptr;
  ExpertCounters* content_counters = nullptr;
  ExpertCounters* temporal_counters = nullptr;
};

/// Per-item logits of one context with their modality components.
template <typename Scalar>
struct ScoreVector {
  RowVector<Scalar> logits;
  RowVector<Scalar> id;
  std::optional<RowVector<Scalar>> text;
  std::optional<RowVector<Scalar>> image;
};

/// Multimodal sequential scorer: per-modality content embeddings with a
/// shared positional table, an optional shared sparse MoE per token, one
/// pre-norm transformer stack per modality, temporal fusion of the last
/// state, and a weighted sum of per-modality dot-product scores.
template <typename Scalar>
class Encoder {
 public:
  Encoder(EncoderConfig cfg, const data::ItemCatalog& catalog, std::uint64_t init_seed)
      : cfg_(resolve(std::move(cfg), catalog)) {
    load_features(catalog);
    Rng rng = make_stream(init_seed, "init");
    build(&rng);
  }

  /// Wraps existing tensors, which must match the layout `cfg` implies.
  Encoder(EncoderConfig cfg, const data::ItemCatalog& catalog, const ParameterSet<Scalar>& values)
      : cfg_(resolve(std::move(cfg), catalog)) {
    load_features(catalog);
    build(nullptr);
    if (values.size() != params_.size()) throw DataError("parameter count does not match the encoder layout");
    for (int i = 0; i < params_.size(); ++i) {
      const auto& src = values[i];
      auto& dst = params_[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() || src.value.cols() != dst.value.cols()) {
        throw DataError("parameter " + src.name + " " + shape_of(src.value) + " does not match expected " + dst.name +
                        " " + shape_of(dst.value));
      }
      dst.value = src.value;
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }
  int n_items() const { return cfg_.n_items; }
  bool active(Modality m) const {
    return m == Modality::id || (m == Modality::text ? cfg_.has_text() : cfg_.has_image());
  }

  Forward<Scalar> forward(Tape<Scalar>& tape, const PackedInput& in, const ForwardMode& mode = {}) const {
    for (int it : in.items) {
      if (it < 0 || it >= cfg_.n_items) throw ContractError("item id " + std::to_string(it) + " out of range");
    }
    for (int p : in.positions) {
      if (p >= cfg_.max_seq_len) throw ContractError("context longer than model.max_seq_len");
    }
    Forward<Scalar> f;
    std::vector<Var<Scalar>> balance;
    const std::vector<int> last = in.layout.last_rows();
    std::vector<int> last_buckets;
    for (int r : last) last_buckets.push_back(in.buckets[static_cast<std::size_t>(r)]);
    std::optional<Var<Scalar>> total;
    Rng* noise = cfg_.moe.noise ? mode.noise : nullptr;
    for (int mi = 0; mi < 3; ++mi) {
      const auto m = static_cast<Modality>(mi);
      if (!active(m)) continue;
      const Stream& s = streams_[static_cast<std::size_t>(mi)];
      Var<Scalar> x = embed(tape, m, in);
      if (cfg_.moe.enabled) {
        auto r = moe_forward(moe_vars(tape, content_moe_), x, cfg_.moe.active_k, mode.training, noise,
                             mode.content_counters);
        x = r.out;
        if (cfg_.moe.balance_coef > 0) balance.push_back(load_balance_cv2(r.gates));
      }
      for (const Block& b : s.blocks) x = block(tape, b, x, in.layout);
      x = layer_norm(x, bind(tape, params_[s.final_gain]), bind(tape, params_[s.final_bias]));
      f.hidden[static_cast<std::size_t>(mi)] = x;

      Var<Scalar> z = gather_rows(x, last);
      if (cfg_.temporal) {
        z = z + gather_rows(bind(tape, params_[time_]), last_buckets);
        if (cfg_.moe.enabled && cfg_.moe.temporal) {
          auto r = moe_forward(moe_vars(tape, temporal_moe_), z, cfg_.moe.active_k, mode.training, noise,
                               mode.temporal_counters);
          z = r.out;
          if (cfg_.moe.balance_coef > 0) balance.push_back(load_balance_cv2(r.gates));
        }
      }
      f.user[static_cast<std::size_t>(mi)] = z;
      Var<Scalar> score = matmul_nt(z, candidates(tape, m));
      f.components[static_cast<std::size_t>(mi)] = score;
      if (m != Modality::id) score = scale_by(score, bind(tape, params_[s.alpha]));
      total = total ? *total + score : score;
    }
    f.logits = *total;
    if (!balance.empty()) {
      Var<Scalar> b = balance.front();
      for (std::size_t i = 1; i < balance.size(); ++i) b = b + balance[i];
      f.balance_loss = b;
    }
    return f;
  }

  /// Content embedding of every packed token plus its positional row.
  Var<Scalar> embed(Tape<Scalar>& tape, Modality m, const PackedInput& in) const {
    if (!active(m)) throw ContractError(std::string("modality ") + modality_names[static_cast<std::size_t>(m)] + " is disabled");
    return content(tape, m, in.items) + gather_rows(P(tape, pos_), in.positions);
  }

  /// Evaluation-mode logits of many contexts on a throwaway tape.
  Matrix<Scalar> score(std::span<const data::Context> contexts) const {
    Tape<Scalar> tape(false);
    return forward(tape, pack(contexts, cfg_.time_buckets)).logits.value();
  }

  ScoreVector<Scalar> score_vector(const data::Context& ctx) const {
    Tape<Scalar> tape(false);
    const Forward<Scalar> f = forward(tape, pack(std::span(&ctx, 1), cfg_.time_buckets));
    ScoreVector<Scalar> sv;
    sv.logits = f.logits.value().row(0);
    sv.id = f.components[0]->value().row(0);
    if (f.components[1]) sv.text = f.components[1]->value().row(0);
    if (f.components[2]) sv.image = f.components[2]->value().row(0);
    return sv;
  }

  /// Feature rows as held by the model (zero-width when unused).
  const Matrix<Scalar>& features(Modality m) const { return m == Modality::text ? text_ : image_; }

 private:
  struct Block {
    int ln1_gain, ln1_bias, wq, bq, wk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };
  struct Stream {
    std::vector<Block> blocks;
    int final_gain = -1, final_bias = -1, alpha = -1;
  };
  struct MoEIndex {
    int gate = -1, noise = -1;
    std::vector<std::array<int, 4>> experts;
  };

  static EncoderConfig resolve(EncoderConfig cfg, const data::ItemCatalog& catalog) {
    if (cfg.n_items != 0 && cfg.n_items != catalog.n_items) {
      throw DataError("model expects " + std::to_string(cfg.n_items) + " items, catalog has " +
                      std::to_string(catalog.n_items));
    }
    cfg.n_items = catalog.n_items;
    auto width = [](bool use, int configured, int available, const char* what) {
      if (!use) return 0;
      if (configured != 0 && configured != available) {
        throw DataError(std::string("model expects ") + what + " features of width " + std::to_string(configured) +
                        ", catalog has " + std::to_string(available));
      }
      return available;
    };
    cfg.text_dim = width(cfg.use_text, cfg.text_dim, catalog.text_dim(), "text");
    cfg.image_dim = width(cfg.use_image, cfg.image_dim, catalog.image_dim(), "image");
    cfg.validate();
    return cfg;
  }

  void load_features(const data::ItemCatalog& catalog) {
    if (cfg_.has_text()) text_ = catalog.text.template cast<Scalar>();
    if (cfg_.has_image()) image_ = catalog.image.template cast<Scalar>();
  }

  // With rng == nullptr the tensors are allocated with zeros.
  void build(Rng* rng) {
    const int d = cfg_.dim;
    auto normal = [&](int r, int c, double sd) {
      Matrix<Scalar> m = Matrix<Scalar>::Zero(r, c);
      if (rng) {
        std::normal_distribution<double> nd(0.0, sd);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(nd(*rng));
      }
      return m;
    };
    auto dense = [&](int in, int out) { return normal(in, out, std::sqrt(2.0 / (in + out))); };
    auto zeros = [](int r, int c) { return Matrix<Scalar>(Matrix<Scalar>::Zero(r, c)); };
    auto ones = [](int c) { return Matrix<Scalar>(Matrix<Scalar>::Ones(1, c)); };

    content_[0] = params_.add("id.embedding", normal(cfg_.n_items, d, cfg_.init_std));
    // The projections also build the output item embeddings, so they start
    // at embedding scale rather than as dense layers.
    if (cfg_.has_text()) content_[1] = params_.add("txt.proj", normal(cfg_.text_dim, d, cfg_.init_std));
    if (cfg_.has_image()) content_[2] = params_.add("img.proj", normal(cfg_.image_dim, d, cfg_.init_std));
    pos_ = params_.add("pos", normal(cfg_.max_seq_len, d, cfg_.init_std));

    auto add_moe = [&](const std::string& prefix, MoEIndex& idx) {
      idx.gate = params_.add(prefix + ".gate", normal(d, cfg_.moe.n_experts, cfg_.init_std));
      idx.noise = params_.add(prefix + ".noise", normal(d, cfg_.moe.n_experts, cfg_.init_std));
      for (int j = 0; j < cfg_.moe.n_experts; ++j) {
        const std::string e = prefix + ".expert" + std::to_string(j);
        // Experts start near zero so the residual MoE begins as identity.
        idx.experts.push_back({params_.add(e + ".w1", dense(d, cfg_.ff_dim())), params_.add(e + ".b1", zeros(1, cfg_.ff_dim())),
                               params_.add(e + ".w2", normal(cfg_.ff_dim(), d, cfg_.init_std)),
                               params_.add(e + ".b2", zeros(1, d))});
      }
    };
    if (cfg_.moe.enabled) add_moe("moe", content_moe_);

    for (int mi = 0; mi < 3; ++mi) {
      if (!active(static_cast<Modality>(mi))) continue;
      const std::string m = modality_names[static_cast<std::size_t>(mi)];
      Stream& s = streams_[static_cast<std::size_t>(mi)];
      for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string b = m + ".block" + std::to_string(l) + ".";
        Block blk{};
        blk.ln1_gain = params_.add(b + "ln1.gain", ones(d));
        blk.ln1_bias = params_.add(b + "ln1.bias", zeros(1, d));
        blk.wq = params_.add(b + "attn.wq", dense(d, d));
        blk.bq = params_.add(b + "attn.bq", zeros(1, d));
        blk.wk = params_.add(b + "attn.wk", dense(d, d));
        blk.wv = params_.add(b + "attn.wv", dense(d, d));
        blk.bv = params_.add(b + "attn.bv", zeros(1, d));
        blk.wo = params_.add(b + "attn.wo", dense(d, d));
        blk.bo = params_.add(b + "attn.bo", zeros(1, d));
        blk.ln2_gain = params_.add(b + "ln2.gain", ones(d));
        blk.ln2_bias = params_.add(b + "ln2.bias", zeros(1, d));
        blk.w1 = params_.add(b + "ff.w1", dense(d, cfg_.ff_dim()));
        blk.b1 = params_.add(b + "ff.b1", zeros(1, cfg_.ff_dim()));
        blk.w2 = params_.add(b + "ff.w2", dense(cfg_.ff_dim(), d));
        blk.b2 = params_.add(b + "ff.b2", zeros(1, d));
        s.blocks.push_back(blk);
      }
      s.final_gain = params_.add(m + ".final_ln.gain", ones(d));
      s.final_bias = params_.add(m + ".final_ln.bias", zeros(1, d));
    }

    if (cfg_.temporal) {
      time_ = params_.add("time.embedding", normal(cfg_.time_buckets, d, cfg_.init_std));
      if (cfg_.moe.enabled && cfg_.moe.temporal) add_moe("tmoe", temporal_moe_);
    }
    if (cfg_.has_text()) streams_[1].alpha = params_.add("fusion.alpha_txt", ones(1));
    if (cfg_.has_image()) streams_[2].alpha = params_.add("fusion.alpha_img", ones(1));
  }

  Var<Scalar> P(Tape<Scalar>& tape, int i) const { return bind(tape, params_[i]); }

  Var<Scalar> content(Tape<Scalar>& tape, Modality m, const std::vector<int>& items) const {
    const int mi = static_cast<int>(m);
    if (m == Modality::id) return gather_rows(P(tape, content_[0]), items);
    const Matrix<Scalar>& table = features(m);
    Matrix<Scalar> rows(static_cast<Eigen::Index>(items.size()), table.cols());
    for (std::size_t r = 0; r < items.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = table.row(items[r]);
    return matmul(tape.constant(std::move(rows)), P(tape, content_[static_cast<std::size_t>(mi)]));
  }

  Var<Scalar> candidates(Tape<Scalar>& tape, Modality m) const {
    if (m == Modality::id) return P(tape, content_[0]);
    return matmul(tape.constant(features(m)), P(tape, content_[static_cast<std::size_t>(m)]));
  }

  MoEVars<Scalar> moe_vars(Tape<Scalar>& tape, const MoEIndex& idx) const {
    MoEVars<Scalar> v;
    v.gate = P(tape, idx.gate);
    v.noise = P(tape, idx.noise);
    for (const auto& e : idx.experts) v.experts.push_back({P(tape, e[0]), P(tape, e[1]), P(tape, e[2]), P(tape, e[3])});
    return v;
  }

  Var<Scalar> block(Tape<Scalar>& tape, const Block& b, const Var<Scalar>& x, const SequenceLayout& layout) const {
    const Var<Scalar> a = layer_norm(x, P(tape, b.ln1_gain), P(tape, b.ln1_bias));
    const Var<Scalar> q = add_row(matmul(a, P(tape, b.wq)), P(tape, b.bq));
    // No key bias: it shifts every score in a row equally and cancels.
    const Var<Scalar> k = matmul(a, P(tape, b.wk));
    const Var<Scalar> v = add_row(matmul(a, P(tape, b.wv)), P(tape, b.bv));
    const Var<Scalar> att = causal_attention(q, k, v, layout, cfg_.n_heads);
    const Var<Scalar> h = x + add_row(matmul(att, P(tape, b.wo)), P(tape, b.bo));
    const Var<Scalar> f = layer_norm(h, P(tape, b.ln2_gain), P(tape, b.ln2_bias));
    return h + add_row(matmul(gelu(add_row(matmul(f, P(tape, b.w1)), P(tape, b.b1))), P(tape, b.w2)), P(tape, b.b2));
  }

  EncoderConfig cfg_;
  Matrix<Scalar> text_, image_;
  ParameterSet<Scalar> params_;
  std::array<int, 3> content_{-1, -1, -1};
  int pos_ = -1;
  int time_ = -1;
  std::array<Stream, 3> streams_;
  MoEIndex content_moe_, temporal_moe_;
};

}  // namespace rodpo::encoder
