#pragma once

#include <cassert>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rodpo/numerics/tensor.hpp"

namespace rodpo {

/// A named trainable tensor with its gradient accumulator.
///
/// `grad_updates` counts how many backward passes wrote into `grad`; each
/// pass touches a parameter at most once no matter how many ops read it.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  // Gradient buffers are scratch state, writable through a const model.
  mutable Matrix<Scalar> grad;
  mutable long grad_updates = 0;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() const {
    grad.setZero(value.rows(), value.cols());
    grad_updates = 0;
  }
  Eigen::Index size() const { return value.size(); }
};

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Convenience for 1x1 results.
  Scalar item() const {
    assert(value().size() == 1);
    return value()(0, 0);
  }
};

/// Reverse-mode computation record.
///
/// Nodes are appended in evaluation order; `backward` walks them in reverse
/// and calls each node's hand-written rule once. A tape constructed with
/// `recording = false` evaluates values only (reference/inference scoring).
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  /// Receives the node's output gradient and pushes it into its parents.
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Scalar> constant(Mat value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to a parameter. Repeated calls with the same parameter
  /// return the same node, so gradient flows into it exactly once.
  Var<Scalar> param(const Parameter<Scalar>& p) {
    if (auto it = leaves_.find(&p); it != leaves_.end()) {
      return Var<Scalar>{this, it->second};
    }
    Node n;
    n.external = &p.value;
    n.param = recording_ ? &p : nullptr;
    n.requires_grad = recording_;
    Var<Scalar> v = push(std::move(n));
    leaves_.emplace(&p, v.id);
    return v;
  }

  /// Read-only leaf bound to a parameter (no gradient, no copy).
  Var<Scalar> frozen(const Parameter<Scalar>& p) {
    Node n;
    n.external = &p.value;
    return push(std::move(n));
  }

  /// Records an op result. The backward rule is kept only when recording
  /// and at least one parent needs a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    if (recording_) {
      for (const auto& p : parents) {
        if (nodes_[p.id].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
      if (n.requires_grad) {
        n.backward = std::move(backward);
      }
    }
    return push(std::move(n));
  }

  bool requires_grad(const Var<Scalar>& v) const { return nodes_[v.id].requires_grad; }

  const Mat& value(const Var<Scalar>& v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  /// Adds `g` into the gradient of `v` (no-op for constants).
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) {
      return;
    }
    ensure_grad(v.id);
    n.grad += g;
  }

  /// Mutable gradient buffer of `v`, allocated on first use. Only valid for
  /// nodes that require gradients.
  Mat& grad_buffer(const Var<Scalar>& v) {
    ensure_grad(v.id);
    return nodes_[v.id].grad;
  }

  bool has_grad(const Var<Scalar>& v) const { return nodes_[v.id].grad.size() > 0; }
  const Mat& grad(const Var<Scalar>& v) const { return nodes_[v.id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and replays the record backwards, then adds
  /// leaf gradients into their parameters.
  void backward(const Var<Scalar>& loss) {
    if (!recording_) {
      throw ContractError("backward called on a non-recording tape");
    }
    if (value(loss).size() != 1) {
      throw DimensionError("backward expects a scalar loss, got " + shape_of(value(loss)));
    }
    if (!nodes_[loss.id].requires_grad) {
      return;
    }
    ensure_grad(loss.id);
    nodes_[loss.id].grad(0, 0) += Scalar(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) {
        n.backward(*this, n.grad);
      }
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr && n.grad.size() > 0) {
        n.param->grad += n.grad;
        ++n.param->grad_updates;
      }
    }
  }

  void clear() {
    nodes_.clear();
    leaves_.clear();
  }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    BackwardFn backward;
    const Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };

  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Mat& v = n.external ? *n.external : n.owned;
      n.grad.setZero(v.rows(), v.cols());
    }
  }

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, int> leaves_;
};

}  // namespace rodpo
