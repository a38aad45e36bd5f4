#include "simref/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "simref/rng.hpp"

namespace simref {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (uint32_t d : s) n *= d;
  return n;
}

static void validate_shape(const Shape& s) {
  if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (uint32_t d : s) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
  }
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

std::vector<float>& Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
  return grad_;
}

std::vector<float>& Tensor::grad() {
  if (grad_.empty()) throw NumericError("tensor has no gradient");
  return grad_;
}

const std::vector<float>& Tensor::grad() const {
  if (grad_.empty()) throw NumericError("tensor has no gradient");
  return grad_;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
}

uint64_t Tensor::content_hash() const {
  uint64_t h = hash_bytes(data_.data(), data_.size() * sizeof(float));
  return hash_bytes(shape_.data(), shape_.size() * sizeof(uint32_t), h);
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("stack_images: empty image list");
  const Shape& s = images[0].shape();
  if (s.size() != 3) throw ShapeError("stack_images: expected rank-3 images, got " + shape_str(s));
  Tensor out({static_cast<uint32_t>(images.size()), s[0], s[1], s[2]});
  size_t per = images[0].numel();
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) {
      throw ShapeError("stack_images: image " + std::to_string(i) + " has shape " +
                       shape_str(images[i].shape()) + ", expected " + shape_str(s));
    }
    std::memcpy(out.data() + i * per, images[i].data(), per * sizeof(float));
  }
  return out;
}

std::vector<Tensor> unstack_images(const Tensor& batch) {
  if (batch.rank() != 4) throw ShapeError("unstack_images: expected rank-4 batch");
  std::vector<Tensor> out;
  out.reserve(batch.dim(0));
  for (size_t n = 0; n < batch.dim(0); ++n) out.push_back(image_from_batch(batch, n));
  return out;
}

Tensor image_from_batch(const Tensor& batch, size_t n) {
  if (batch.rank() != 4) throw ShapeError("image_from_batch: expected rank-4 batch");
  if (n >= batch.dim(0)) throw ShapeError("image_from_batch: index out of range");
  Shape s{batch.dim(1), batch.dim(2), batch.dim(3)};
  size_t per = shape_numel(s);
  std::vector<float> data(batch.data() + n * per, batch.data() + (n + 1) * per);
  return Tensor(std::move(s), std::move(data));
}

}  // namespace simref
