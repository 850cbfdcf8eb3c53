#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "rodpo/numerics/ops.hpp"
#include "rodpo/rng.hpp"

namespace rodpo::encoder {

/// Indices of the k largest entries, largest first; equal values keep the
/// lower index first.
template <typename Derived>
std::vector<int> top_k_indices(const Eigen::DenseBase<Derived>& values, int k) {
  const int n = static_cast<int>(values.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const auto va = values(a), vb = values(b);
    return va > vb || (va == vb && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

/// Routing decision for one token.
template <typename Scalar>
struct GateDecision {
  std::vector<int> selected;   // by decreasing gate logit
  RowVector<Scalar> weights;   // zero outside `selected`
  RowVector<Scalar> logits;
};

/// Standard-normal noise for a rows x experts block, drawn row by row.
template <typename Scalar>
Matrix<Scalar> gate_noise(Eigen::Index rows, Eigen::Index experts, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<Scalar> eps(rows, experts);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index j = 0; j < experts; ++j) eps(r, j) = static_cast<Scalar>(normal(rng));
  }
  return eps;
}

/// Softmax over the selected entries of `logits`, zeros elsewhere.
template <typename Scalar>
RowVector<Scalar> selected_softmax(const RowVector<Scalar>& logits, const std::vector<int>& selected) {
  RowVector<Scalar> w = RowVector<Scalar>::Zero(logits.size());
  Scalar mx = logits(selected.front());
  for (int j : selected) mx = std::max(mx, logits(j));
  Scalar total = 0;
  for (int j : selected) {
    w(j) = std::exp(logits(j) - mx);
    total += w(j);
  }
  for (int j : selected) w(j) /= total;
  return w;
}

/// Noisy top-k routing of a single hidden vector. Noise is drawn only when
/// `training` is set and `rng` is given.
template <typename Scalar>
GateDecision<Scalar> noisy_topk_gate(const RowVector<Scalar>& h, const Matrix<Scalar>& gate_w,
                                     const Matrix<Scalar>& noise_w, int active_k, bool training, Rng* rng) {
  if (active_k < 1 || active_k > gate_w.cols()) throw ContractError("noisy_topk_gate: active_k out of range");
  GateDecision<Scalar> d;
  d.logits = h * gate_w;
  if (training && rng != nullptr) {
    const Matrix<Scalar> eps = gate_noise<Scalar>(1, gate_w.cols(), *rng);
    const RowVector<Scalar> pre = h * noise_w;
    for (Eigen::Index j = 0; j < d.logits.size(); ++j) d.logits(j) += eps(0, j) * softplus(pre(j));
  }
  d.selected = top_k_indices(d.logits, active_k);
  d.weights = selected_softmax(d.logits, d.selected);
  return d;
}

/// Row-wise softmax restricted to each row's selected columns.
template <typename Scalar>
Var<Scalar> masked_softmax(const Var<Scalar>& logits, std::vector<std::vector<int>> selected) {
  const Matrix<Scalar>& z = logits.value();
  if (static_cast<Eigen::Index>(selected.size()) != z.rows()) {
    throw DimensionError("masked_softmax: selection count does not match " + shape_of(z));
  }
  Matrix<Scalar> g(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    g.row(r) = selected_softmax<Scalar>(z.row(r), selected[static_cast<std::size_t>(r)]);
  }
  Matrix<Scalar> saved = g;
  return logits.tape->record(
      std::move(g), {logits},
      [logits, selected = std::move(selected), saved = std::move(saved)](Tape<Scalar>& t, const Matrix<Scalar>& dg) {
        Matrix<Scalar> dz = Matrix<Scalar>::Zero(saved.rows(), saved.cols());
        for (Eigen::Index r = 0; r < saved.rows(); ++r) {
          const Scalar inner = saved.row(r).dot(dg.row(r));
          for (int j : selected[static_cast<std::size_t>(r)]) dz(r, j) = saved(r, j) * (dg(r, j) - inner);
        }
        t.accumulate(logits, dz);
      });
}

/// Squared coefficient of variation of the column sums of `gates`.
template <typename Scalar>
Var<Scalar> load_balance_cv2(const Var<Scalar>& gates) {
  const Matrix<Scalar>& g = gates.value();
  const Eigen::Index e = g.cols();
  const RowVector<Scalar> imp = g.colwise().sum();
  const Scalar mu = imp.mean();
  const Scalar var = (imp.array() - mu).square().mean();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = mu > Scalar(0) ? var / (mu * mu) : Scalar(0);
  return gates.tape->record(std::move(out), {gates}, [gates, imp, mu, var, e](Tape<Scalar>& t, const Matrix<Scalar>& dl) {
    if (!(mu > Scalar(0))) return;
    const RowVector<Scalar> dimp =
        ((imp.array() - mu) * (Scalar(2) / (Scalar(e) * mu * mu)) - Scalar(2) * var / (mu * mu * mu * Scalar(e))).matrix();
    t.accumulate(gates, Matrix<Scalar>(dimp.replicate(t.value(gates).rows(), 1) * dl(0, 0)));
  });
}

/// Tape handles of one MoE layer's tensors.
template <typename Scalar>
struct MoEVars {
  struct Expert {
    Var<Scalar> w1, b1, w2, b2;
  };
  Var<Scalar> gate, noise;
  std::vector<Expert> experts;
};

/// How many token rows each expert processed.
struct ExpertCounters {
  std::vector<long long> rows;
  long long tokens = 0;
  long long routed = 0;

  void reset(int n_experts) {
    rows.assign(static_cast<std::size_t>(n_experts), 0);
    tokens = 0;
    routed = 0;
  }
};

template <typename Scalar>
struct MoEOutput {
  Var<Scalar> out;    // h + sum_j G_j E_j(h)
  Var<Scalar> gates;  // rows x experts, zero outside the selection
  std::vector<std::vector<int>> selected;
};

template <typename Scalar>
Var<Scalar> expert_ff(const typename MoEVars<Scalar>::Expert& e, const Var<Scalar>& x) {
  return add_row(matmul(gelu(add_row(matmul(x, e.w1), e.b1)), e.w2), e.b2);
}

/// Sparse mixture with residual. Each expert sees only the rows routed to it.
template <typename Scalar>
MoEOutput<Scalar> moe_forward(const MoEVars<Scalar>& moe, const Var<Scalar>& h, int active_k, bool training, Rng* rng,
                              ExpertCounters* counters = nullptr) {
  const int n_experts = static_cast<int>(moe.experts.size());
  if (active_k < 1 || active_k > n_experts) throw ContractError("moe_forward: active_k out of range");
  Tape<Scalar>& tape = *h.tape;
  Var<Scalar> logits = matmul(h, moe.gate);
  if (training && rng != nullptr) {
    Var<Scalar> eps = tape.constant(gate_noise<Scalar>(h.rows(), n_experts, *rng));
    logits = logits + hadamard(eps, softplus(matmul(h, moe.noise)));
  }
  const Matrix<Scalar>& z = logits.value();
  MoEOutput<Scalar> res;
  res.selected.resize(static_cast<std::size_t>(z.rows()));
  std::vector<std::vector<int>> routed(static_cast<std::size_t>(n_experts));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    res.selected[static_cast<std::size_t>(r)] = top_k_indices(z.row(r), active_k);
    for (int j : res.selected[static_cast<std::size_t>(r)]) routed[static_cast<std::size_t>(j)].push_back(static_cast<int>(r));
  }
  res.gates = masked_softmax(logits, res.selected);

  Var<Scalar> acc = h;
  for (int j = 0; j < n_experts; ++j) {
    const auto& rows = routed[static_cast<std::size_t>(j)];
    if (counters) counters->rows[static_cast<std::size_t>(j)] += static_cast<long long>(rows.size());
    if (rows.empty()) continue;
    const Var<Scalar> y = expert_ff<Scalar>(moe.experts[static_cast<std::size_t>(j)], gather_rows(h, rows));
    const Var<Scalar> w = gather_entries(res.gates, rows, std::vector<int>(rows.size(), j));
    acc = acc + scatter_rows(scale_rows(y, w), rows, h.rows());
  }
  if (counters) {
    counters->tokens += h.rows();
    counters->routed += h.rows() * active_k;
  }
  res.out = acc;
  return res;
}

}  // namespace rodpo::encoder
