#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "rodpo/numerics/tape.hpp"

namespace rodpo {

/// Ordered, named collection of parameters. Indices are stable, so models
/// refer to their tensors by index and stay copyable.
template <typename Scalar>
class ParameterSet {
 public:
  int add(std::string name, Matrix<Scalar> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    index_.emplace(name, static_cast<int>(params_.size()));
    params_.emplace_back(std::move(name), std::move(value));
    return static_cast<int>(params_.size()) - 1;
  }

  int size() const { return static_cast<int>(params_.size()); }
  Parameter<Scalar>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<Scalar>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }

  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter<Scalar>& get(const std::string& name) { return (*this)[index(name)]; }
  const Parameter<Scalar>& get(const std::string& name) const { return (*this)[index(name)]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() const {
    for (const auto& p : params_) p.zero_grad();
  }

  /// Total number of scalar entries.
  long long count() const {
    long long n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_) {
      if (!rodpo::all_finite(p.value)) return false;
    }
    return true;
  }

  template <typename To>
  ParameterSet<To> cast() const {
    ParameterSet<To> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<To>());
    return out;
  }

  /// Bit-level fingerprint of names, shapes and values.
  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a("", 0);
    for (const auto& p : params_) {
      h = fnv1a(p.name.data(), p.name.size(), h);
      const std::int64_t dims[2] = {p.value.rows(), p.value.cols()};
      h = fnv1a(dims, sizeof dims, h);
      h = fnv1a(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(Scalar), h);
    }
    return h;
  }

 private:
  std::deque<Parameter<Scalar>> params_;
  std::unordered_map<std::string, int> index_;
};

/// Binds a parameter to a tape: trainable on a recording tape, read-only
/// otherwise.
template <typename Scalar>
Var<Scalar> bind(Tape<Scalar>& tape, const Parameter<Scalar>& p) {
  return tape.recording() ? tape.param(p) : tape.frozen(p);
}

}  // namespace rodpo
