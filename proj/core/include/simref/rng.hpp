#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace simref {

/// PCG32 generator (O'Neill's pcg32_random_r). Chosen over <random> engines
/// because its state is two u64 words that serialize exactly, and because the
/// distributions below behave identically on every platform. Every stochastic
/// component (init, samplers, buffer, world) draws from its own instance.
class Pcg32 {
 public:
  explicit Pcg32(uint64_t seed, uint64_t stream = 0);

  uint32_t next_u32();

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Unbiased integer in [0, n). n must be > 0.
  uint32_t uniform_below(uint32_t n);
  /// Standard normal via Box-Muller. Consumes exactly two u32 draws per call
  /// (no cached spare, so the generator state alone captures the sequence).
  float gaussian();

  /// k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<uint32_t> sample_without_replacement(uint32_t k, uint32_t n);

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }
  static Pcg32 restore(uint64_t state, uint64_t inc);

 private:
  Pcg32() = default;
  uint64_t state_ = 0;
  uint64_t inc_ = 0;
};

/// SplitMix64 step; used to derive independent seeds from one master seed.
uint64_t splitmix64(uint64_t& x);
/// One-shot mix of a seed with a salt.
uint64_t mix_seed(uint64_t seed, uint64_t salt);

/// FNV-1a over a byte range; used for parameter/content hashing in tests and
/// the trainer's alternation assertions.
uint64_t hash_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);

}  // namespace simref
