#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "rodpo/numerics/tape.hpp"

// Differentiable primitives. Each op computes its value eagerly and records
// a hand-derived backward rule on the operands' tape.

namespace rodpo {

namespace detail {

template <typename Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape != b.tape) {
    throw ContractError("operands recorded on different tapes");
  }
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a.value()) + " vs " +
                         shape_of(b.value()));
  }
}

// A * B one row at a time through aligned scratch vectors. Every row goes
// through the same vector-matrix kernel, so its result does not depend on
// how many other rows are in A.
template <typename Scalar, typename Rhs>
Matrix<Scalar> rowwise_product(const Matrix<Scalar>& a, const Rhs& b) {
  Matrix<Scalar> c(a.rows(), b.cols());
  RowVector<Scalar> x(a.cols()), y(b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    x = a.row(i);
    y.noalias() = x * b;
    c.row(i) = y;
  }
  return c;
}

}  // namespace detail

/// C = A B. dA = dC B^T, dB = A^T dC.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_of(a.value()) + " * " +
                         shape_of(b.value()));
  }
  Matrix<Scalar> c = detail::rowwise_product(a.value(), b.value());
  return a.tape->record(std::move(c), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

/// C = A B^T.
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_of(a.value()) + " * " +
                         shape_of(b.value()) + "^T");
  }
  Matrix<Scalar> c = detail::rowwise_product(a.value(), b.value().transpose());
  return a.tape->record(std::move(c), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Matrix<Scalar> c = a.value() + b.value();
  return a.tape->record(std::move(c), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

/// Adds a 1xn row to every row of `a`.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  detail::require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: bias " + shape_of(row.value()) + " does not broadcast over " +
                         shape_of(a.value()));
  }
  Matrix<Scalar> c = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(c), {a, row}, [a, row](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  Matrix<Scalar> out = a.value() * c;
  return a.tape->record(std::move(out), {a}, [a, c](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g * c);
  });
}

/// Multiplies `a` by a learnable 1x1 scalar.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& a, const Var<Scalar>& s) {
  detail::require_same_tape(a, s);
  if (s.value().size() != 1) {
    throw DimensionError("scale_by: expected a 1x1 scale, got " + shape_of(s.value()));
  }
  Matrix<Scalar> out = a.value() * s.value()(0, 0);
  return a.tape->record(std::move(out), {a, s}, [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g * t.value(s)(0, 0));
    if (t.requires_grad(s)) {
      Matrix<Scalar> ds(1, 1);
      ds(0, 0) = g.cwiseProduct(t.value(a)).sum();
      t.accumulate(s, ds);
    }
  });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("hadamard", a, b);
  Matrix<Scalar> c = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(c), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Matrix<Scalar> out = a.value().unaryExpr(
      [inv_sqrt2](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2)); });
  return a.tape->record(std::move(out), {a}, [a, inv_sqrt2](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix<Scalar> d = t.value(a).unaryExpr([&](Scalar x) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2));
      const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * x * x);
      return cdf + x * pdf;
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return rodpo::softplus(x); });
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g.cwiseProduct(t.value(a).unaryExpr([](Scalar x) { return sigmoid(x); })));
  });
}

/// Elementwise log sigma(x).
template <typename Scalar>
Var<Scalar> log_sigmoid(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return rodpo::log_sigmoid(x); });
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g.cwiseProduct(t.value(a).unaryExpr([](Scalar x) { return sigmoid(-x); })));
  });
}

/// Softmax along `axis` (1: each row sums to one, 0: each column).
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, int axis = 1) {
  if (axis != 0 && axis != 1) {
    throw DimensionError("softmax: axis must be 0 or 1");
  }
  if (!all_finite(a.value())) {
    throw ContractError("softmax: non-finite input");
  }
  Matrix<Scalar> out =
      axis == 1 ? softmax_rows(a.value()) : Matrix<Scalar>(softmax_rows(a.value().transpose()).transpose());
  Var<Scalar> result;
  const int out_id = static_cast<int>(a.tape->size());
  result = a.tape->record(std::move(out), {a}, [a, axis, out_id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const Matrix<Scalar>& y = t.value(Var<Scalar>{&t, out_id});
    Matrix<Scalar> gy = g.cwiseProduct(y);
    if (axis == 1) {
      ColVector<Scalar> s = gy.rowwise().sum();
      t.accumulate(a, gy - (y.array().colwise() * s.array()).matrix());
    } else {
      RowVector<Scalar> s = gy.colwise().sum();
      t.accumulate(a, gy - (y.array().rowwise() * s.array()).matrix());
    }
  });
  return result;
}

/// Per-row normalisation followed by an affine transform with 1xn gain/bias.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  if (!(eps > Scalar(0))) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const Eigen::Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  const Matrix<Scalar>& xv = x.value();
  Matrix<Scalar> xhat(xv.rows(), n);
  ColVector<Scalar> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                            Tape<Scalar>& t, const Matrix<Scalar>& g) {
                          if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                          if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                          if (t.requires_grad(x)) {
                            const Scalar n_inv = Scalar(1) / Scalar(xhat.cols());
                            Matrix<Scalar> gh = g.array().rowwise() * t.value(gain).row(0).array();
                            Matrix<Scalar> dx(xhat.rows(), xhat.cols());
                            for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                              const Scalar m1 = gh.row(r).sum() * n_inv;
                              const Scalar m2 = gh.row(r).cwiseProduct(xhat.row(r)).sum() * n_inv;
                              dx.row(r) = inv_std(r) * (gh.row(r).array() - m1 - xhat.row(r).array() * m2);
                            }
                            t.accumulate(x, dx);
                          }
                        });
}

/// Rows `index[i]` of `table`; backward scatter-adds.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, std::vector<int> index) {
  const Matrix<Scalar>& tv = table.value();
  Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), tv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= tv.rows()) {
      throw ContractError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                          shape_of(tv));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(index[i]);
  }
  return table.tape->record(std::move(out), {table},
                            [table, index = std::move(index)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                              Matrix<Scalar>& dt = t.grad_buffer(table);
                              for (std::size_t i = 0; i < index.size(); ++i) {
                                dt.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
                              }
                            });
}

/// Places row i of `src` at row `index[i]` of an n_rows result (other rows
/// zero). Indices must be distinct.
template <typename Scalar>
Var<Scalar> scatter_rows(const Var<Scalar>& src, std::vector<int> index, Eigen::Index n_rows) {
  if (static_cast<Eigen::Index>(index.size()) != src.rows()) {
    throw DimensionError("scatter_rows: index count does not match source rows");
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n_rows, src.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.row(index[i]) = src.value().row(static_cast<Eigen::Index>(i));
  }
  return src.tape->record(std::move(out), {src},
                          [src, index = std::move(index)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            Matrix<Scalar> ds(static_cast<Eigen::Index>(index.size()), g.cols());
                            for (std::size_t i = 0; i < index.size(); ++i) {
                              ds.row(static_cast<Eigen::Index>(i)) = g.row(index[i]);
                            }
                            t.accumulate(src, ds);
                          });
}

/// Column vector of entries a(rows[i], cols[i]).
template <typename Scalar>
Var<Scalar> gather_entries(const Var<Scalar>& a, std::vector<int> rows, std::vector<int> cols) {
  if (rows.size() != cols.size()) {
    throw DimensionError("gather_entries: rows/cols length mismatch");
  }
  Matrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = a.value()(rows[i], cols[i]);
  }
  return a.tape->record(std::move(out), {a},
                        [a, rows = std::move(rows), cols = std::move(cols)](Tape<Scalar>& t,
                                                                           const Matrix<Scalar>& g) {
                          Matrix<Scalar>& da = t.grad_buffer(a);
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            da(rows[i], cols[i]) += g(static_cast<Eigen::Index>(i), 0);
                          }
                        });
}

/// Multiplies row i of `a` by w(i, 0).
template <typename Scalar>
Var<Scalar> scale_rows(const Var<Scalar>& a, const Var<Scalar>& w) {
  detail::require_same_tape(a, w);
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw DimensionError("scale_rows: weights " + shape_of(w.value()) + " vs " + shape_of(a.value()));
  }
  Matrix<Scalar> out = a.value().array().colwise() * w.value().col(0).array();
  return a.tape->record(std::move(out), {a, w}, [a, w](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(a)) t.accumulate(a, (g.array().colwise() * t.value(w).col(0).array()).matrix());
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

/// Elementwise product with a constant matrix (no gradient to the constant).
template <typename Scalar>
Var<Scalar> mul_const(const Var<Scalar>& a, Matrix<Scalar> c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw DimensionError("mul_const: shape mismatch " + shape_of(a.value()) + " vs " + shape_of(c));
  }
  Matrix<Scalar> out = a.value().cwiseProduct(c);
  return a.tape->record(std::move(out), {a}, [a, c = std::move(c)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g.cwiseProduct(c));
  });
}

/// Sum of all entries as a 1x1.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, Matrix<Scalar>::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

/// Dot product of two 1xn (or same-shape) tensors as a 1x1.
template <typename Scalar>
Var<Scalar> dot(const Var<Scalar>& a, const Var<Scalar>& b) {
  return sum(hadamard(a, b));
}

/// Packed variable-length sequences: segment b owns rows
/// offsets[b] .. offsets[b+1]-1 in chronological order.
struct SequenceLayout {
  std::vector<int> offsets{0};

  int segments() const { return static_cast<int>(offsets.size()) - 1; }
  int rows() const { return offsets.back(); }
  int length(int b) const { return offsets[b + 1] - offsets[b]; }
  int last_row(int b) const { return offsets[b + 1] - 1; }
  std::vector<int> last_rows() const {
    std::vector<int> r(static_cast<std::size_t>(segments()));
    for (int b = 0; b < segments(); ++b) r[static_cast<std::size_t>(b)] = last_row(b);
    return r;
  }
};

/// Multi-head scaled dot-product attention, causal within each segment.
/// q, k, v are packed (rows x d); heads split the columns evenly.
template <typename Scalar>
Var<Scalar> causal_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                             const SequenceLayout& layout, int heads) {
  detail::require_same_shape("causal_attention", q, k);
  detail::require_same_shape("causal_attention", q, v);
  if (q.rows() != layout.rows()) {
    throw DimensionError("causal_attention: layout covers " + std::to_string(layout.rows()) + " rows, got " +
                         shape_of(q.value()));
  }
  const Eigen::Index d = q.cols();
  if (heads < 1 || d % heads != 0) {
    throw DimensionError("causal_attention: dimension not divisible by head count");
  }
  const Eigen::Index dh = d / heads;
  const Scalar sc = Scalar(1) / std::sqrt(Scalar(dh));
  const Matrix<Scalar>& Q = q.value();
  const Matrix<Scalar>& K = k.value();
  const Matrix<Scalar>& V = v.value();
  Matrix<Scalar> out(Q.rows(), d);
  // probs[b * heads + h] is the len x len attention matrix.
  std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(layout.segments() * heads));
  for (int b = 0; b < layout.segments(); ++b) {
    const Eigen::Index s = layout.offsets[static_cast<std::size_t>(b)];
    const Eigen::Index len = layout.length(b);
    for (int h = 0; h < heads; ++h) {
      const auto Qb = Q.block(s, h * dh, len, dh);
      const auto Kb = K.block(s, h * dh, len, dh);
      const auto Vb = V.block(s, h * dh, len, dh);
      Matrix<Scalar>& P = probs[static_cast<std::size_t>(b * heads + h)];
      P.setZero(len, len);
      // Explicit causal loops over an aligned scratch row: entry (i, j) never
      // depends on the segment length, so a prefix reproduces bit for bit.
      RowVector<Scalar> row(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        auto r = row.head(i + 1);
        for (Eigen::Index j = 0; j <= i; ++j) r(j) = Qb.row(i).dot(Kb.row(j)) * sc;
        r = (r.array() - r.maxCoeff()).exp().matrix();
        r /= r.sum();
        P.row(i).head(i + 1) = r;
        auto o = out.block(s + i, h * dh, 1, dh);
        o = P(i, 0) * Vb.row(0);
        for (Eigen::Index j = 1; j <= i; ++j) o += P(i, j) * Vb.row(j);
      }
    }
  }
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, layout, heads, dh, sc, probs = std::move(probs)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const Matrix<Scalar>& Q = t.value(q);
        const Matrix<Scalar>& K = t.value(k);
        const Matrix<Scalar>& V = t.value(v);
        Matrix<Scalar> dQ = Matrix<Scalar>::Zero(Q.rows(), Q.cols());
        Matrix<Scalar> dK = Matrix<Scalar>::Zero(Q.rows(), Q.cols());
        Matrix<Scalar> dV = Matrix<Scalar>::Zero(Q.rows(), Q.cols());
        for (int b = 0; b < layout.segments(); ++b) {
          const Eigen::Index s = layout.offsets[static_cast<std::size_t>(b)];
          const Eigen::Index len = layout.length(b);
          for (int h = 0; h < heads; ++h) {
            const Matrix<Scalar>& P = probs[static_cast<std::size_t>(b * heads + h)];
            const auto dO = g.block(s, h * dh, len, dh);
            dV.block(s, h * dh, len, dh) = P.transpose() * dO;
            Matrix<Scalar> dP = dO * V.block(s, h * dh, len, dh).transpose();
            ColVector<Scalar> rs = dP.cwiseProduct(P).rowwise().sum();
            Matrix<Scalar> dS = P.cwiseProduct((dP.colwise() - rs));
            dQ.block(s, h * dh, len, dh) = dS * K.block(s, h * dh, len, dh) * sc;
            dK.block(s, h * dh, len, dh) = dS.transpose() * Q.block(s, h * dh, len, dh) * sc;
          }
        }
        t.accumulate(q, dQ);
        t.accumulate(k, dK);
        t.accumulate(v, dV);
      });
}

}  // namespace rodpo
