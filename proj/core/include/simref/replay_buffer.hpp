#pragma once

#include <filesystem>
#include <span>

#include "simref/rng.hpp"
#include "simref/tensor.hpp"

namespace simref {

/// Fixed-capacity history of refined images. Once filled the size stays at
/// exactly the capacity; every update replaces a uniformly chosen set of
/// slots with freshly refined images. Samples are copied out, so mutating a
/// returned image never touches the stored one. All randomness comes from the
/// buffer's own generator, making every op sequence reproducible from
/// (seed, inputs).
class ReplayBuffer {
 public:
  ReplayBuffer(uint32_t capacity, uint64_t seed);

  uint32_t capacity() const { return capacity_; }
  uint32_t size() const { return static_cast<uint32_t>(slots_.size()); }
  bool filled() const { return size() == capacity_; }

  /// Fills an empty buffer to capacity by cycling the given refined images.
  /// Refilling a non-empty buffer is an error.
  void seed_fill(std::span<const Tensor> refined);

  /// k images drawn uniformly without replacement (within this call).
  std::vector<Tensor> sample(uint32_t k);

  /// Replaces exactly new_refined.size() distinct, uniformly chosen slots
  /// with the given images. Requires a filled buffer and count <= capacity.
  void replace_half(std::span<const Tensor> new_refined);

  const Tensor& slot(uint32_t i) const { return slots_[i]; }
  uint64_t content_hash() const;

  /// Serialized as one TNS1 stack [size, C, H, W]; generator state is
  /// reported separately so the trainer checkpoint can own it.
  void save_stack(const std::filesystem::path& path) const;
  void load_stack(const std::filesystem::path& path);
  uint64_t rng_state() const { return rng_.state(); }
  uint64_t rng_inc() const { return rng_.inc(); }
  void restore_rng(uint64_t state, uint64_t inc) { rng_ = Pcg32::restore(state, inc); }

 private:
  uint32_t capacity_;
  std::vector<Tensor> slots_;
  Pcg32 rng_;
};

/// History-buffer minibatch composition for one discriminator update: the
/// fake stream is the current refined images plus an equal number sampled
/// from the buffer; the real images pass through untouched.
struct DiscBatch {
  std::vector<Tensor> fake;
  std::vector<Tensor> real;
};

DiscBatch compose_disc_batch(ReplayBuffer& buffer, std::span<const Tensor> current_refined,
                             std::span<const Tensor> real);

}  // namespace simref
