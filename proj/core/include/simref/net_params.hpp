#pragma once

#include <deque>
#include <string>
#include <utility>

#include "simref/tensor.hpp"

namespace simref {

/// Ordered, name-addressed collection of parameter tensors for one network.
/// Iteration order is insertion order and is stable across runs, which the
/// initializer, checkpoint format and SGD all rely on. Backed by a deque so
/// references handed out by add()/at() stay valid as parameters are added.
class NetParams {
 public:
  NetParams() = default;
  explicit NetParams(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;

  size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Total scalar parameter count.
  size_t param_count() const;
  /// FNV-1a over all parameter values in order; detects any drift.
  uint64_t value_hash() const;
  bool bit_equal(const NetParams& o) const;
  void clear_grads();

 private:
  std::string kind_;
  std::deque<std::pair<std::string, Tensor>> items_;
};

/// One SGD step: p <- p - lr * grad(p) for every parameter, then clears the
/// grads. A parameter without a populated gradient is an error.
void sgd_step(NetParams& params, float lr);

}  // namespace simref
