#include "simref/net_params.hpp"

#include "simref/rng.hpp"

namespace simref {

Tensor& NetParams::add(const std::string& name, Tensor t) {
  if (has(name)) throw ConfigError("duplicate parameter name: " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& NetParams::at(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter: " + name + " (network kind " + kind_ + ")");
}

const Tensor& NetParams::at(const std::string& name) const {
  return const_cast<NetParams*>(this)->at(name);
}

bool NetParams::has(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

size_t NetParams::param_count() const {
  size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

uint64_t NetParams::value_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : items_) {
    h = hash_bytes(name.data(), name.size(), h);
    h = hash_bytes(t.data(), t.numel() * sizeof(float), h);
  }
  return h;
}

bool NetParams::bit_equal(const NetParams& o) const {
  if (items_.size() != o.items_.size()) return false;
  for (size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].first != o.items_[i].first) return false;
    if (!items_[i].second.bit_equal(o.items_[i].second)) return false;
  }
  return true;
}

void NetParams::clear_grads() {
  for (auto& [name, t] : items_) t.clear_grad();
}

void sgd_step(NetParams& params, float lr) {
  for (auto& [name, t] : params) {
    if (!t.has_grad()) {
      throw NumericError("sgd_step: parameter '" + name + "' has no gradient");
    }
  }
  for (auto& [name, t] : params) {
    const auto& g = t.grad();
    float* p = t.data();
    for (size_t i = 0; i < t.numel(); ++i) p[i] -= lr * g[i];
    t.clear_grad();
  }
}

}  // namespace simref
