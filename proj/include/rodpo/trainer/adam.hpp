#pragma once

#include <cmath>
#include <vector>

#include "rodpo/numerics/params.hpp"

namespace rodpo::trainer {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter in the
/// parameter's own precision.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet<Scalar>& params, AdamHyper h) : h_(h) {
    for (const auto& p : params) {
      m_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  /// Applies one update from the accumulated gradients.
  void step(ParameterSet<Scalar>& params) {
    if (static_cast<int>(m_.size()) != params.size()) throw ContractError("optimizer state does not match parameters");
    for (const auto& p : params) {
      if (!all_finite(p.grad)) throw TrainingError("non-finite gradient in " + p.name);
    }
    ++t_;
    const Scalar b1 = static_cast<Scalar>(h_.beta1), b2 = static_cast<Scalar>(h_.beta2);
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(h_.beta1, static_cast<double>(t_)));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(h_.beta2, static_cast<double>(t_)));
    const Scalar lr = static_cast<Scalar>(h_.lr), eps = static_cast<Scalar>(h_.eps);
    for (int i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[static_cast<std::size_t>(i)];
      auto& v = v_[static_cast<std::size_t>(i)];
      m = b1 * m + (Scalar(1) - b1) * p.grad;
      v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
  }

  long long steps() const { return t_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }
  void restore(long long t, std::vector<Matrix<Scalar>> m, std::vector<Matrix<Scalar>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw DataError("optimizer state size mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamHyper h_;
  long long t_ = 0;
  std::vector<Matrix<Scalar>> m_, v_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_global_norm(const ParameterSet<Scalar>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) sq += p.grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto f = static_cast<Scalar>(max_norm / norm);
    for (const auto& p : params) p.grad *= f;
  }
  return norm;
}

}  // namespace rodpo::trainer
