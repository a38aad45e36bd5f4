#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simref/errors.hpp"

namespace simref {

using Shape = std::vector<uint32_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

/// Dense row-major float32 array with an optional gradient buffer of the same
/// shape. The single value type for images, activations and parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float v);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  uint32_t dim(size_t i) const { return shape_[i]; }
  size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }

  // 4-D accessors (N,C,H,W); bounds are the caller's responsibility
  size_t offset4(size_t n, size_t c, size_t y, size_t x) const {
    return ((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  float& at4(size_t n, size_t c, size_t y, size_t x) { return data_[offset4(n, c, y, x)]; }
  float at4(size_t n, size_t c, size_t y, size_t x) const { return data_[offset4(n, c, y, x)]; }

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zero gradient if absent.
  std::vector<float>& ensure_grad();
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void clear_grad() { grad_.clear(); }

  bool all_finite() const;
  bool bit_equal(const Tensor& o) const;
  uint64_t content_hash() const;

 private:
  Shape shape_;
  std::vector<float> data_;
  std::vector<float> grad_;  // empty means absent
};

/// Stacks rank-3 images [C,H,W] (all same shape) into a batch [N,C,H,W].
Tensor stack_images(std::span<const Tensor> images);
/// Splits a batch [N,C,H,W] back into N rank-3 images.
std::vector<Tensor> unstack_images(const Tensor& batch);
/// One image [C,H,W] extracted from a batch.
Tensor image_from_batch(const Tensor& batch, size_t n);

}  // namespace simref
