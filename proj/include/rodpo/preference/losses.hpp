#pragma once

#include <cmath>
#include <vector>

#include "rodpo/numerics/ops.hpp"

namespace rodpo::preference {

/// -log softmax(scores)[target] for one score row.
template <typename Derived>
double ce_loss(const Eigen::MatrixBase<Derived>& scores, int target) {
  if (target < 0 || target >= scores.size()) throw ContractError("ce_loss: target out of range");
  const double mx = static_cast<double>(scores.maxCoeff());
  double z = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) z += std::exp(static_cast<double>(scores(i)) - mx);
  return mx + std::log(z) - static_cast<double>(scores(target));
}

/// Value and policy-logit gradients of the DPO term for one pair.
struct DpoTerm {
  double loss = 0;
  double margin = 0;      // beta * (policy gap - reference gap)
  double d_winner = 0;    // d loss / d s(x, y_w)
  double d_loser = 0;     // d loss / d s(x, y_l)
};

/// -log sigmoid(beta * ((s_w - s_l) - (r_w - r_l))).
inline DpoTerm dpo_loss(double s_w, double s_l, double r_w, double r_l, double beta) {
  if (!(beta > 0)) throw ContractError("dpo_loss: beta must be positive");
  DpoTerm t;
  t.margin = beta * ((s_w - s_l) - (r_w - r_l));
  t.loss = softplus(-t.margin);
  const double g = -beta * sigmoid(-t.margin);
  t.d_winner = g;
  t.d_loser = -g;
  return t;
}

/// Mean cross-entropy of each row of `logits` against its target.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::vector<int> targets) {
  const Matrix<Scalar>& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows() || z.rows() == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_of(z));
  }
  for (int t : targets) {
    if (t < 0 || t >= z.cols()) throw ContractError("cross_entropy: target out of range");
  }
  const Matrix<Scalar> p = softmax_rows(z);
  Scalar total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar mx = z.row(r).maxCoeff();
    total += mx + std::log((z.row(r).array() - mx).exp().sum()) - z(r, targets[static_cast<std::size_t>(r)]);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / Scalar(z.rows());
  return logits.tape->record(std::move(out), {logits},
                             [logits, targets = std::move(targets), p](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                               Matrix<Scalar> d = p;
                               for (std::size_t r = 0; r < targets.size(); ++r) {
                                 d(static_cast<Eigen::Index>(r), targets[r]) -= Scalar(1);
                               }
                               t.accumulate(logits, d * (g(0, 0) / Scalar(p.rows())));
                             });
}

/// Mean DPO loss over rows. `reference` holds frozen reference logits of
/// the same shape; only the policy logits receive gradient.
template <typename Scalar>
Var<Scalar> dpo_margin_loss(const Var<Scalar>& logits, const Matrix<Scalar>& reference, std::vector<int> winners,
                            std::vector<int> losers, double beta) {
  const Matrix<Scalar>& s = logits.value();
  if (reference.rows() != s.rows() || reference.cols() != s.cols()) {
    throw DimensionError("dpo_margin_loss: reference " + shape_of(reference) + " vs policy " + shape_of(s));
  }
  if (winners.size() != losers.size() || static_cast<Eigen::Index>(winners.size()) != s.rows() || s.rows() == 0) {
    throw DimensionError("dpo_margin_loss: pair count does not match the batch");
  }
  const auto n = static_cast<Eigen::Index>(winners.size());
  std::vector<double> dw(static_cast<std::size_t>(n));
  double total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int w = winners[static_cast<std::size_t>(r)], l = losers[static_cast<std::size_t>(r)];
    if (w < 0 || l < 0 || w >= s.cols() || l >= s.cols()) throw ContractError("dpo pair item out of range");
    if (w == l) throw ContractError("dpo pair has identical winner and loser");
    const DpoTerm term = dpo_loss(static_cast<double>(s(r, w)), static_cast<double>(s(r, l)),
                                  static_cast<double>(reference(r, w)), static_cast<double>(reference(r, l)), beta);
    total += term.loss;
    dw[static_cast<std::size_t>(r)] = term.d_winner;
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / static_cast<double>(n));
  return logits.tape->record(std::move(out), {logits},
                             [logits, winners = std::move(winners), losers = std::move(losers), dw = std::move(dw), n](
                                 Tape<Scalar>& t, const Matrix<Scalar>& g) {
                               Matrix<Scalar>& buf = t.grad_buffer(logits);
                               const double scale = static_cast<double>(g(0, 0)) / static_cast<double>(n);
                               for (Eigen::Index r = 0; r < n; ++r) {
                                 const auto gw = static_cast<Scalar>(dw[static_cast<std::size_t>(r)] * scale);
                                 buf(r, winners[static_cast<std::size_t>(r)]) += gw;
                                 buf(r, losers[static_cast<std::size_t>(r)]) -= gw;
                               }
                             });
}

}  // namespace rodpo::preference
