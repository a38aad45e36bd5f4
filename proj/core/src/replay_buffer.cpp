#include "simref/replay_buffer.hpp"

#include "simref/tensor_io.hpp"

namespace simref {

ReplayBuffer::ReplayBuffer(uint32_t capacity, uint64_t seed)
    : capacity_(capacity), rng_(mix_seed(seed, 0xb0ff)) {
  if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::seed_fill(std::span<const Tensor> refined) {
  if (!slots_.empty()) throw ConfigError("seed_fill on a non-empty replay buffer");
  if (refined.empty()) throw ConfigError("seed_fill needs at least one refined image");
  slots_.reserve(capacity_);
  for (uint32_t i = 0; i < capacity_; ++i) slots_.push_back(refined[i % refined.size()]);
}

std::vector<Tensor> ReplayBuffer::sample(uint32_t k) {
  if (!filled()) throw ConfigError("sampling from an unfilled replay buffer");
  if (k > capacity_) throw ConfigError("cannot sample more images than the buffer holds");
  std::vector<uint32_t> idx = rng_.sample_without_replacement(k, capacity_);
  std::vector<Tensor> out;
  out.reserve(k);
  for (uint32_t i : idx) out.push_back(slots_[i]);  // copy-out
  return out;
}

void ReplayBuffer::replace_half(std::span<const Tensor> new_refined) {
  if (!filled()) throw ConfigError("replace_half on an unfilled replay buffer");
  if (new_refined.empty()) throw ConfigError("replace_half needs at least one image");
  if (new_refined.size() > capacity_) {
    throw ConfigError("replace_half: " + std::to_string(new_refined.size()) +
                      " images exceed buffer capacity " + std::to_string(capacity_));
  }
  std::vector<uint32_t> idx =
      rng_.sample_without_replacement(static_cast<uint32_t>(new_refined.size()), capacity_);
  for (size_t j = 0; j < new_refined.size(); ++j) slots_[idx[j]] = new_refined[j];
}

uint64_t ReplayBuffer::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& t : slots_) {
    uint64_t th = t.content_hash();
    h = hash_bytes(&th, sizeof(th), h);
  }
  return h;
}

void ReplayBuffer::save_stack(const std::filesystem::path& path) const {
  if (slots_.empty()) throw ConfigError("cannot save an empty replay buffer");
  save_tns(stack_images(slots_), path);
}

void ReplayBuffer::load_stack(const std::filesystem::path& path) {
  Tensor stack = load_tns(path);
  if (stack.rank() != 4) {
    throw IoError("replay buffer stack must be rank 4, got " + shape_str(stack.shape()));
  }
  if (stack.dim(0) != capacity_) {
    throw IoError("replay buffer stack in " + path.string() + " holds " +
                  std::to_string(stack.dim(0)) + " images, capacity is " +
                  std::to_string(capacity_));
  }
  slots_ = unstack_images(stack);
}

DiscBatch compose_disc_batch(ReplayBuffer& buffer, std::span<const Tensor> current_refined,
                             std::span<const Tensor> real) {
  if (current_refined.empty()) throw ConfigError("compose_disc_batch: no current refined images");
  DiscBatch batch;
  batch.fake.assign(current_refined.begin(), current_refined.end());
  std::vector<Tensor> history = buffer.sample(static_cast<uint32_t>(current_refined.size()));
  for (Tensor& t : history) batch.fake.push_back(std::move(t));
  batch.real.assign(real.begin(), real.end());
  return batch;
}

}  // namespace simref
