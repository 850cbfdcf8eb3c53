#pragma once

#include <random>

#include "rodpo/numerics/ops.hpp"

namespace rodpo::testing {

template <typename Scalar = double>
Matrix<Scalar> random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(n(rng));
  return m;
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// entry contributes a distinct gradient.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& v, const Matrix<Scalar>& w) {
  Var<Scalar> c = v.tape->constant(w);
  return sum(hadamard(v, c));
}

}  // namespace rodpo::testing
