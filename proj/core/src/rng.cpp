#include "simref/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace simref {

Pcg32::Pcg32(uint64_t seed, uint64_t stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0u;
  next_u32();
  state_ += seed;
  next_u32();
}

Pcg32 Pcg32::restore(uint64_t state, uint64_t inc) {
  Pcg32 g;
  g.state_ = state;
  g.inc_ = inc;
  return g;
}

uint32_t Pcg32::next_u32() {
  uint64_t old = state_;
  state_ = old * 6364136223846793005ull + inc_;
  uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
  uint32_t rot = static_cast<uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

double Pcg32::uniform() {
  return next_u32() * 0x1p-32;
}

double Pcg32::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

uint32_t Pcg32::uniform_below(uint32_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below: n must be > 0");
  // rejection sampling for exact uniformity
  uint32_t threshold = (-n) % n;
  for (;;) {
    uint32_t r = next_u32();
    if (r >= threshold) return r % n;
  }
}

float Pcg32::gaussian() {
  // open-interval uniforms keep the log argument strictly positive
  double u1 = (static_cast<double>(next_u32()) + 0.5) * 0x1p-32;
  double u2 = (static_cast<double>(next_u32()) + 0.5) * 0x1p-32;
  double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
}

std::vector<uint32_t> Pcg32::sample_without_replacement(uint32_t k, uint32_t n) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  // partial Fisher-Yates on an index table
  std::vector<uint32_t> idx(n);
  for (uint32_t i = 0; i < n; ++i) idx[i] = i;
  std::vector<uint32_t> out(k);
  for (uint32_t i = 0; i < k; ++i) {
    uint32_t j = i + uniform_below(n - i);
    std::swap(idx[i], idx[j]);
    out[i] = idx[i];
  }
  return out;
}

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  return splitmix64(x);
}

uint64_t hash_bytes(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace simref
