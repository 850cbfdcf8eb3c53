#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "rodpo/numerics/tape.hpp"

namespace rodpo {

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares tape gradients against central differences.
///
/// `loss_fn` must rebuild the scalar loss on the tape it is handed and be a
/// pure function of the parameter values (seed any RNG inside it). Per
/// parameter tensor the error is ||analytic - numeric||_inf / max(||analytic||_inf,
/// ||numeric||_inf, 1e-8). Throws ContractError if two evaluations disagree.
template <typename Scalar>
GradCheckReport check_gradients(const std::function<Var<Scalar>(Tape<Scalar>&)>& loss_fn,
                                const std::vector<Parameter<Scalar>*>& params, double eps = 1e-5,
                                double tol = 1e-4) {
  auto evaluate = [&]() {
    Tape<Scalar> tape(false);
    return loss_fn(tape).item();
  };

  const Scalar l0 = evaluate();
  const Scalar l1 = evaluate();
  if (std::memcmp(&l0, &l1, sizeof(Scalar)) != 0) {
    throw ContractError("check_gradients: loss function is not deterministic");
  }

  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape(true);
    Var<Scalar> loss = loss_fn(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto* p : params) {
    Matrix<Scalar> numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      Scalar& w = p->value.data()[i];
      const Scalar saved = w;
      w = saved + Scalar(eps);
      const Scalar up = evaluate();
      w = saved - Scalar(eps);
      const Scalar down = evaluate();
      w = saved;
      numeric.data()[i] = (up - down) / Scalar(2 * eps);
    }
    const double diff = static_cast<double>((p->grad - numeric).cwiseAbs().maxCoeff());
    const double scale = std::max({static_cast<double>(p->grad.cwiseAbs().maxCoeff()),
                                   static_cast<double>(numeric.cwiseAbs().maxCoeff()), 1e-8});
    double rel = diff / scale;
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
    report.entries.push_back({p->name, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace rodpo
