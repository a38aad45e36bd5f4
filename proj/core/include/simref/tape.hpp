#pragma once

#include <functional>
#include <unordered_map>

#include "simref/tensor.hpp"

namespace simref {

class Tape;

/// Handle to a node on a tape. Cheap to copy; invalidated when the tape dies.
struct Value {
  int id = -1;
  Tape* tape = nullptr;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& tensor() const;
  const Shape& shape() const;
  /// Scalar nodes (reductions and scalar arithmetic on them) carry a float64
  /// copy of their value; finite-difference checks read this to avoid float32
  /// quantization of the loss.
  double scalar() const;
};

enum class OpKind : uint8_t {
  kLeaf,        // trainable parameter
  kInput,       // constant data (no gradient)
  kConv2d,      // x[N,I,H,W] * w[O,I,K,K] (+ b[O]), zero padding
  kRelu,
  kAdd,         // elementwise; also the residual skip connection
  kMaxPool,
  kAvgChannel,  // mean over channels -> [N,1,H,W]
  kAvgSpatial,  // mean over H,W -> [N,C,1,1]
  kSpatialDiff, // forward differences (dx, dy), replicate boundary -> [N,2,H,W]
  kL1Diff,      // sum |a - b| -> scalar
  kSqDiff,      // sum (a - b)^2 -> scalar
  kSoftmax2,    // softmax over a 2-channel axis, per patch
  kTakeChannel, // one channel, kept as [N,1,h,w]
  kLog,         // log of a probability, input clamped to [1e-7, 1 - 1e-7]
  kSum,         // sum of all entries -> scalar
  kScale,       // y = a*x + c (scalars a, c)
  kTanh,
  kAffine,      // dense layer: x[N,F] * w[O,F]^T + b[O]
  kReshape,
};

/// Reverse-mode tape. One tape records one forward pass; backward() walks the
/// nodes in reverse creation order (a valid reverse topological order, since
/// inputs always precede their consumers) exactly once and deposits gradients
/// on every reachable parameter tensor.
///
/// Reductions and the convolution/dense inner loops accumulate in float64;
/// stored tensors stay float32. Within one process and seed the whole
/// forward/backward pass is bit-deterministic: parallel loops partition
/// output elements, and the per-element reduction order is fixed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant data; no gradient flows into it.
  Value input(Tensor t);
  /// Trainable leaf. Repeated calls with the same tensor return the same
  /// node, so gradient contributions from shared use accumulate correctly.
  Value leaf(Tensor& param);
  /// Read-only view of a parameter: value participates, gradient does not.
  /// Used when one network is held fixed while the other trains.
  Value frozen(const Tensor& param);

  /// Backpropagates from a scalar loss node. Gradients are written (not
  /// accumulated) into each reachable parameter's grad buffer. Calling this a
  /// second time on the same tape is an error.
  void backward(Value loss);
  bool backward_done() const { return backward_done_; }

  size_t node_count() const { return nodes_.size(); }

  // -- op builders ---------------------------------------------------------
  friend Value conv2d(Value x, Value w, Value b, int stride, int pad);
  friend Value conv2d(Value x, Value w, int stride, int pad);
  friend Value relu(Value x);
  friend Value add(Value a, Value b);
  friend Value maxpool(Value x, int k, int stride);
  friend Value avg_channel(Value x);
  friend Value avg_spatial(Value x);
  friend Value spatial_diff(Value x);
  friend Value l1_diff(Value a, Value b);
  friend Value sq_diff(Value a, Value b);
  friend Value softmax2(Value x);
  friend Value take_channel(Value x, int c);
  friend Value log(Value x);
  friend Value sum(Value x);
  friend Value scale(Value x, float a, float c);
  friend Value tanh(Value x);
  friend Value affine(Value x, Value w, Value b);
  friend Value reshape(Value x, Shape shape);

 private:
  friend struct Value;

  struct Node {
    OpKind kind;
    int in0 = -1, in1 = -1, in2 = -1;
    bool needs_grad = false;
    Tensor value;
    double scalar64 = 0.0;        // valid when value.numel() == 1
    std::vector<float> grad;      // allocated during backward

    // op attributes
    int stride = 1, pad = 0, k = 0, channel = 0;
    float a = 1.0f, c = 0.0f;
    Tensor* param = nullptr;            // kLeaf target
    std::vector<int32_t> argmax;        // kMaxPool
    std::vector<float> col;             // kConv2d cached im2col (per image, [P x R])
  };

  int push(Node n);
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  Value make(int id) { return Value{id, this}; }

  static Value emit_unary(OpKind kind, Value x, const char* what, size_t rank);
  static Value emit_pair_reduce(OpKind kind, Value a, Value b, const char* what);

  void forward_op(Node& n);
  void backward_op(int id);
  std::vector<float>& grad_buf(int id);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> leaf_ids_;
  bool backward_done_ = false;
};

Value conv2d(Value x, Value w, Value b, int stride, int pad);
Value conv2d(Value x, Value w, int stride, int pad);
Value relu(Value x);
Value add(Value a, Value b);
Value maxpool(Value x, int k, int stride);
Value avg_channel(Value x);
Value avg_spatial(Value x);
Value spatial_diff(Value x);
Value l1_diff(Value a, Value b);
Value sq_diff(Value a, Value b);
Value softmax2(Value x);
Value take_channel(Value x, int c);
Value log(Value x);
Value sum(Value x);
Value scale(Value x, float a, float c = 0.0f);
Value tanh(Value x);
Value affine(Value x, Value w, Value b);
Value reshape(Value x, Shape shape);

/// Probability clamp applied by the log op (the losses diverge at 0 and 1).
inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

}  // namespace simref
