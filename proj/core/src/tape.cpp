#include "simref/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace simref {

// ---------------------------------------------------------------------------
// Value
// ---------------------------------------------------------------------------

const Tensor& Value::tensor() const {
  if (!valid()) throw NumericError("use of an invalid Value handle");
  return tape->node(id).value;
}

const Shape& Value::shape() const { return tensor().shape(); }

double Value::scalar() const {
  const Tensor& t = tensor();
  if (t.numel() != 1) throw ShapeError("scalar() on a non-scalar node " + shape_str(t.shape()));
  return tape->node(id).scalar64;
}

// ---------------------------------------------------------------------------
// Tape plumbing
// ---------------------------------------------------------------------------

int Tape::push(Node n) {
  forward_op(n);
  if (n.value.numel() == 1 && n.kind != OpKind::kSum && n.kind != OpKind::kL1Diff &&
      n.kind != OpKind::kSqDiff && n.kind != OpKind::kScale && n.kind != OpKind::kAdd &&
      n.kind != OpKind::kLog) {
    n.scalar64 = n.value[0];
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::input(Tensor t) {
  Node n;
  n.kind = OpKind::kInput;
  n.value = std::move(t);
  return make(push(std::move(n)));
}

Value Tape::leaf(Tensor& param) {
  auto it = leaf_ids_.find(&param);
  if (it != leaf_ids_.end()) return make(it->second);
  Node n;
  n.kind = OpKind::kLeaf;
  n.needs_grad = true;
  n.param = &param;
  n.value = param;  // snapshot; params do not change during one tape's life
  int id = push(std::move(n));
  leaf_ids_.emplace(&param, id);
  return make(id);
}

Value Tape::frozen(const Tensor& param) {
  Node n;
  n.kind = OpKind::kInput;
  n.value = param;
  return make(push(std::move(n)));
}

std::vector<float>& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0f);
  return n.grad;
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

static Tape* same_tape(std::initializer_list<Value> vs) {
  Tape* t = nullptr;
  for (const Value& v : vs) {
    if (!v.valid()) throw NumericError("op called with an invalid Value");
    if (t == nullptr) t = v.tape;
    if (v.tape != t) throw NumericError("op called with Values from different tapes");
  }
  return t;
}

static void require_rank(const Value& v, size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank-" + std::to_string(rank) +
                     " tensor, got " + shape_str(v.shape()));
  }
}

Value conv2d(Value x, Value w, Value b, int stride, int pad) {
  Tape* t = b.valid() ? same_tape({x, w, b}) : same_tape({x, w});
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d kernel");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input channels " + shape_str(xs) + " do not match kernel " +
                     shape_str(ws));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv2d: only square kernels, got " + shape_str(ws));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  int K = static_cast<int>(ws[2]);
  int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
  if (H + 2 * pad < K || W + 2 * pad < K) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " smaller than kernel " + shape_str(ws) +
                     " with pad " + std::to_string(pad));
  }
  if (b.valid()) {
    require_rank(b, 1, "conv2d bias");
    if (b.shape()[0] != ws[0]) {
      throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match kernel " +
                       shape_str(ws));
    }
  }
  Tape::Node n;
  n.kind = OpKind::kConv2d;
  n.in0 = x.id;
  n.in1 = w.id;
  n.in2 = b.valid() ? b.id : -1;
  n.stride = stride;
  n.pad = pad;
  n.needs_grad = t->node(x.id).needs_grad || t->node(w.id).needs_grad ||
                 (b.valid() && t->node(b.id).needs_grad);
  return t->make(t->push(std::move(n)));
}

Value conv2d(Value x, Value w, int stride, int pad) {
  return conv2d(x, w, Value{}, stride, pad);
}

Value Tape::emit_unary(OpKind kind, Value x, const char* what, size_t rank) {
  Tape* t = same_tape({x});
  if (rank) require_rank(x, rank, what);
  Node n;
  n.kind = kind;
  n.in0 = x.id;
  n.needs_grad = t->node(x.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value Tape::emit_pair_reduce(OpKind kind, Value a, Value b, const char* what) {
  Tape* t = same_tape({a, b});
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Node n;
  n.kind = kind;
  n.in0 = a.id;
  n.in1 = b.id;
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value relu(Value x) { return Tape::emit_unary(OpKind::kRelu, x, "relu", 0); }

Value add(Value a, Value b) {
  Tape* t = same_tape({a, b});
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tape::Node n;
  n.kind = OpKind::kAdd;
  n.in0 = a.id;
  n.in1 = b.id;
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value maxpool(Value x, int k, int stride) {
  Tape* t = same_tape({x});
  require_rank(x, 4, "maxpool");
  if (k < 1 || stride < 1) throw ShapeError("maxpool: kernel and stride must be >= 1");
  const Shape& s = x.shape();
  if (s[2] < static_cast<uint32_t>(k) || s[3] < static_cast<uint32_t>(k)) {
    throw ShapeError("maxpool: input " + shape_str(s) + " smaller than window " +
                     std::to_string(k));
  }
  Tape::Node n;
  n.kind = OpKind::kMaxPool;
  n.in0 = x.id;
  n.k = k;
  n.stride = stride;
  n.needs_grad = t->node(x.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value avg_channel(Value x) { return Tape::emit_unary(OpKind::kAvgChannel, x, "avg_channel", 4); }
Value avg_spatial(Value x) { return Tape::emit_unary(OpKind::kAvgSpatial, x, "avg_spatial", 4); }

Value spatial_diff(Value x) {
  Tape* t = same_tape({x});
  require_rank(x, 4, "spatial_diff");
  if (x.shape()[1] != 1) {
    throw ShapeError("spatial_diff: expects a single-channel image, got " + shape_str(x.shape()));
  }
  return Tape::emit_unary(OpKind::kSpatialDiff, x, "spatial_diff", 4);
}

Value l1_diff(Value a, Value b) { return Tape::emit_pair_reduce(OpKind::kL1Diff, a, b, "l1_diff"); }
Value sq_diff(Value a, Value b) { return Tape::emit_pair_reduce(OpKind::kSqDiff, a, b, "sq_diff"); }

Value softmax2(Value x) {
  if (x.valid() && x.shape().size() == 4 && x.shape()[1] != 2) {
    throw ShapeError("softmax2: expects 2 channels, got " + shape_str(x.shape()));
  }
  return Tape::emit_unary(OpKind::kSoftmax2, x, "softmax2", 4);
}

Value take_channel(Value x, int c) {
  Tape* t = same_tape({x});
  require_rank(x, 4, "take_channel");
  if (c < 0 || static_cast<uint32_t>(c) >= x.shape()[1]) {
    throw ShapeError("take_channel: channel " + std::to_string(c) + " out of range for " +
                     shape_str(x.shape()));
  }
  Tape::Node n;
  n.kind = OpKind::kTakeChannel;
  n.in0 = x.id;
  n.channel = c;
  n.needs_grad = t->node(x.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value log(Value x) { return Tape::emit_unary(OpKind::kLog, x, "log", 0); }
Value sum(Value x) { return Tape::emit_unary(OpKind::kSum, x, "sum", 0); }

Value scale(Value x, float a, float c) {
  Tape* t = same_tape({x});
  Tape::Node n;
  n.kind = OpKind::kScale;
  n.in0 = x.id;
  n.a = a;
  n.c = c;
  n.needs_grad = t->node(x.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value tanh(Value x) { return Tape::emit_unary(OpKind::kTanh, x, "tanh", 0); }

Value affine(Value x, Value w, Value b) {
  Tape* t = same_tape({x, w, b});
  require_rank(x, 2, "affine input");
  require_rank(w, 2, "affine weight");
  require_rank(b, 1, "affine bias");
  if (x.shape()[1] != w.shape()[1] || w.shape()[0] != b.shape()[0]) {
    throw ShapeError("affine: incompatible shapes x=" + shape_str(x.shape()) +
                     " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  }
  Tape::Node n;
  n.kind = OpKind::kAffine;
  n.in0 = x.id;
  n.in1 = w.id;
  n.in2 = b.id;
  n.needs_grad = t->node(x.id).needs_grad || t->node(w.id).needs_grad || t->node(b.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

Value reshape(Value x, Shape shape) {
  Tape* t = same_tape({x});
  if (shape_numel(shape) != x.tensor().numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  Tape::Node n;
  n.kind = OpKind::kReshape;
  n.in0 = x.id;
  n.value = Tensor(std::move(shape));  // shape carried via value; data filled in forward
  n.needs_grad = t->node(x.id).needs_grad;
  return t->make(t->push(std::move(n)));
}

// ---------------------------------------------------------------------------
// forward kernels
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int N, I, H, W, O, K, Ho, Wo, P, R;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvDims d;
  d.N = static_cast<int>(x.dim(0));
  d.I = static_cast<int>(x.dim(1));
  d.H = static_cast<int>(x.dim(2));
  d.W = static_cast<int>(x.dim(3));
  d.O = static_cast<int>(w.dim(0));
  d.K = static_cast<int>(w.dim(2));
  d.Ho = (d.H + 2 * pad - d.K) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.K) / stride + 1;
  d.P = d.Ho * d.Wo;
  d.R = d.I * d.K * d.K;
  return d;
}

// one image's patch matrix, [P x R] row-major, zero padding
void im2col(const float* xi, const ConvDims& d, int stride, int pad, float* col) {
  for (int oy = 0; oy < d.Ho; ++oy) {
    for (int ox = 0; ox < d.Wo; ++ox) {
      float* row = col + static_cast<size_t>(oy * d.Wo + ox) * d.R;
      int r = 0;
      for (int i = 0; i < d.I; ++i) {
        const float* plane = xi + static_cast<size_t>(i) * d.H * d.W;
        for (int ky = 0; ky < d.K; ++ky) {
          int y = oy * stride - pad + ky;
          if (y < 0 || y >= d.H) {
            for (int kx = 0; kx < d.K; ++kx) row[r++] = 0.0f;
            continue;
          }
          const float* line = plane + static_cast<size_t>(y) * d.W;
          for (int kx = 0; kx < d.K; ++kx) {
            int xx = ox * stride - pad + kx;
            row[r++] = (xx >= 0 && xx < d.W) ? line[xx] : 0.0f;
          }
        }
      }
    }
  }
}

inline double dot_f64(const float* a, const float* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace

void Tape::forward_op(Node& n) {
  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kInput:
      return;  // value already set

    case OpKind::kConv2d: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& w = nodes_[n.in1].value;
      const float* bias = n.in2 >= 0 ? nodes_[n.in2].value.data() : nullptr;
      ConvDims d = conv_dims(x, w, n.stride, n.pad);
      n.value = Tensor({static_cast<uint32_t>(d.N), static_cast<uint32_t>(d.O),
                        static_cast<uint32_t>(d.Ho), static_cast<uint32_t>(d.Wo)});
      n.col.assign(static_cast<size_t>(d.N) * d.P * d.R, 0.0f);
      const float* wd = w.data();
      float* out = n.value.data();
#pragma omp parallel for schedule(static)
      for (int img = 0; img < d.N; ++img) {
        float* col = n.col.data() + static_cast<size_t>(img) * d.P * d.R;
        im2col(x.data() + static_cast<size_t>(img) * d.I * d.H * d.W, d, n.stride, n.pad, col);
        float* oimg = out + static_cast<size_t>(img) * d.O * d.P;
        for (int p = 0; p < d.P; ++p) {
          const float* row = col + static_cast<size_t>(p) * d.R;
          for (int o = 0; o < d.O; ++o) {
            double acc = dot_f64(wd + static_cast<size_t>(o) * d.R, row, d.R);
            if (bias) acc += bias[o];
            oimg[static_cast<size_t>(o) * d.P + p] = static_cast<float>(acc);
          }
        }
      }
      return;
    }

    case OpKind::kRelu: {
      const Tensor& x = nodes_[n.in0].value;
      n.value = Tensor(x.shape());
      const float* xd = x.data();
      float* yd = n.value.data();
      for (size_t i = 0; i < x.numel(); ++i) yd[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
      return;
    }

    case OpKind::kAdd: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      n.value = Tensor(a.shape());
      const float* ad = a.data();
      const float* bd = b.data();
      float* yd = n.value.data();
      for (size_t i = 0; i < a.numel(); ++i) yd[i] = ad[i] + bd[i];
      if (a.numel() == 1) {
        n.scalar64 = nodes_[n.in0].scalar64 + nodes_[n.in1].scalar64;
        n.value[0] = static_cast<float>(n.scalar64);
      }
      return;
    }

    case OpKind::kMaxPool: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      int Ho = (H - n.k) / n.stride + 1;
      int Wo = (W - n.k) / n.stride + 1;
      n.value = Tensor({static_cast<uint32_t>(N), static_cast<uint32_t>(C),
                        static_cast<uint32_t>(Ho), static_cast<uint32_t>(Wo)});
      n.argmax.assign(n.value.numel(), 0);
      const float* xd = x.data();
      float* yd = n.value.data();
      size_t j = 0;
      for (int img = 0; img < N; ++img) {
        for (int c = 0; c < C; ++c) {
          const float* plane = xd + (static_cast<size_t>(img) * C + c) * H * W;
          size_t base = (static_cast<size_t>(img) * C + c) * H * W;
          for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox, ++j) {
              float best = -std::numeric_limits<float>::infinity();
              int besti = 0;
              for (int ky = 0; ky < n.k; ++ky) {
                int y = oy * n.stride + ky;
                for (int kx = 0; kx < n.k; ++kx) {
                  int xx = ox * n.stride + kx;
                  float v = plane[y * W + xx];
                  if (v > best) {  // strict: ties keep the first in scan order
                    best = v;
                    besti = y * W + xx;
                  }
                }
              }
              yd[j] = best;
              n.argmax[j] = static_cast<int32_t>(base) + besti;
            }
          }
        }
      }
      return;
    }

    case OpKind::kAvgChannel: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      n.value = Tensor({static_cast<uint32_t>(N), 1u, static_cast<uint32_t>(H),
                        static_cast<uint32_t>(W)});
      const float* xd = x.data();
      float* yd = n.value.data();
      size_t hw = static_cast<size_t>(H) * W;
      for (int img = 0; img < N; ++img) {
        for (size_t p = 0; p < hw; ++p) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c) acc += xd[(static_cast<size_t>(img) * C + c) * hw + p];
          yd[img * hw + p] = static_cast<float>(acc / C);
        }
      }
      return;
    }

    case OpKind::kAvgSpatial: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      n.value = Tensor({static_cast<uint32_t>(N), static_cast<uint32_t>(C), 1u, 1u});
      const float* xd = x.data();
      float* yd = n.value.data();
      size_t hw = static_cast<size_t>(H) * W;
      for (size_t nc = 0; nc < static_cast<size_t>(N) * C; ++nc) {
        double acc = 0.0;
        for (size_t p = 0; p < hw; ++p) acc += xd[nc * hw + p];
        yd[nc] = static_cast<float>(acc / static_cast<double>(hw));
      }
      return;
    }

    case OpKind::kSpatialDiff: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), H = x.dim(2), W = x.dim(3);
      n.value = Tensor({static_cast<uint32_t>(N), 2u, static_cast<uint32_t>(H),
                        static_cast<uint32_t>(W)});
      const float* xd = x.data();
      float* yd = n.value.data();
      size_t hw = static_cast<size_t>(H) * W;
      for (int img = 0; img < N; ++img) {
        const float* p = xd + img * hw;
        float* gx = yd + static_cast<size_t>(img) * 2 * hw;
        float* gy = gx + hw;
        for (int y = 0; y < H; ++y) {
          for (int xx = 0; xx < W; ++xx) {
            // replicate boundary: the last forward difference is zero
            gx[y * W + xx] = (xx + 1 < W) ? p[y * W + xx + 1] - p[y * W + xx] : 0.0f;
            gy[y * W + xx] = (y + 1 < H) ? p[(y + 1) * W + xx] - p[y * W + xx] : 0.0f;
          }
        }
      }
      return;
    }

    case OpKind::kL1Diff: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      double acc = 0.0;
      const float* ad = a.data();
      const float* bd = b.data();
      for (size_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(ad[i]) - bd[i]);
      n.scalar64 = acc;
      n.value = Tensor({1u}, {static_cast<float>(acc)});
      return;
    }

    case OpKind::kSqDiff: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      double acc = 0.0;
      const float* ad = a.data();
      const float* bd = b.data();
      for (size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(ad[i]) - bd[i];
        acc += d * d;
      }
      n.scalar64 = acc;
      n.value = Tensor({1u}, {static_cast<float>(acc)});
      return;
    }

    case OpKind::kSoftmax2: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), H = x.dim(2), W = x.dim(3);
      n.value = Tensor(x.shape());
      const float* xd = x.data();
      float* yd = n.value.data();
      size_t hw = static_cast<size_t>(H) * W;
      for (int img = 0; img < N; ++img) {
        const float* z0 = xd + static_cast<size_t>(img) * 2 * hw;
        const float* z1 = z0 + hw;
        float* p0 = yd + static_cast<size_t>(img) * 2 * hw;
        float* p1 = p0 + hw;
        for (size_t p = 0; p < hw; ++p) {
          double m = std::max(z0[p], z1[p]);
          double e0 = std::exp(z0[p] - m);
          double e1 = std::exp(z1[p] - m);
          double q0 = e0 / (e0 + e1);
          p0[p] = static_cast<float>(q0);
          p1[p] = static_cast<float>(1.0 - q0);
        }
      }
      return;
    }

    case OpKind::kTakeChannel: {
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      n.value = Tensor({static_cast<uint32_t>(N), 1u, static_cast<uint32_t>(H),
                        static_cast<uint32_t>(W)});
      size_t hw = static_cast<size_t>(H) * W;
      const float* xd = x.data();
      float* yd = n.value.data();
      for (int img = 0; img < N; ++img) {
        std::memcpy(yd + img * hw, xd + (static_cast<size_t>(img) * C + n.channel) * hw,
                    hw * sizeof(float));
      }
      return;
    }

    case OpKind::kLog: {
      const Tensor& x = nodes_[n.in0].value;
      n.value = Tensor(x.shape());
      const float* xd = x.data();
      float* yd = n.value.data();
      for (size_t i = 0; i < x.numel(); ++i) {
        double v = std::clamp(static_cast<double>(xd[i]), kProbClampLo, kProbClampHi);
        yd[i] = static_cast<float>(std::log(v));
      }
      if (x.numel() == 1) {
        n.scalar64 =
            std::log(std::clamp(nodes_[n.in0].scalar64, kProbClampLo, kProbClampHi));
        n.value[0] = static_cast<float>(n.scalar64);
      }
      return;
    }

    case OpKind::kSum: {
      const Tensor& x = nodes_[n.in0].value;
      double acc = 0.0;
      const float* xd = x.data();
      for (size_t i = 0; i < x.numel(); ++i) acc += xd[i];
      n.scalar64 = acc;
      n.value = Tensor({1u}, {static_cast<float>(acc)});
      return;
    }

    case OpKind::kScale: {
      const Tensor& x = nodes_[n.in0].value;
      n.value = Tensor(x.shape());
      const float* xd = x.data();
      float* yd = n.value.data();
      for (size_t i = 0; i < x.numel(); ++i) yd[i] = n.a * xd[i] + n.c;
      if (x.numel() == 1) {
        n.scalar64 = static_cast<double>(n.a) * nodes_[n.in0].scalar64 + n.c;
        n.value[0] = static_cast<float>(n.scalar64);
      }
      return;
    }

    case OpKind::kTanh: {
      const Tensor& x = nodes_[n.in0].value;
      n.value = Tensor(x.shape());
      const float* xd = x.data();
      float* yd = n.value.data();
      for (size_t i = 0; i < x.numel(); ++i) yd[i] = std::tanh(xd[i]);
      return;
    }

    case OpKind::kAffine: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& w = nodes_[n.in1].value;
      const Tensor& b = nodes_[n.in2].value;
      int N = x.dim(0), F = x.dim(1), O = w.dim(0);
      n.value = Tensor({static_cast<uint32_t>(N), static_cast<uint32_t>(O)});
      const float* xd = x.data();
      const float* wd = w.data();
      float* yd = n.value.data();
      for (int img = 0; img < N; ++img) {
        for (int o = 0; o < O; ++o) {
          double acc = dot_f64(xd + static_cast<size_t>(img) * F,
                               wd + static_cast<size_t>(o) * F, F);
          yd[static_cast<size_t>(img) * O + o] = static_cast<float>(acc + b[o]);
        }
      }
      return;
    }

    case OpKind::kReshape: {
      const Tensor& x = nodes_[n.in0].value;
      Shape s = n.value.shape();  // target shape stashed by the builder
      n.value = Tensor(std::move(s), std::vector<float>(x.data(), x.data() + x.numel()));
      return;
    }
  }
  throw NumericError("forward_op: unhandled op kind");
}

// ---------------------------------------------------------------------------
// backward kernels
// ---------------------------------------------------------------------------

void Tape::backward(Value loss) {
  if (loss.tape != this) throw NumericError("backward: loss from a different tape");
  if (backward_done_) {
    throw NumericError("backward called twice on one tape; record a new forward pass first");
  }
  const Node& ln = nodes_[loss.id];
  if (ln.value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
  }
  backward_done_ = true;
  if (!ln.needs_grad) return;  // no parameters reachable

  grad_buf(loss.id)[0] = 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::kLeaf) {
      auto& g = n.param->ensure_grad();
      std::memcpy(g.data(), n.grad.data(), g.size() * sizeof(float));
      continue;
    }
    backward_op(id);
  }
}

void Tape::backward_op(int id) {
  Node& n = nodes_[id];
  const std::vector<float>& dy = n.grad;

  auto needs = [&](int in) { return in >= 0 && nodes_[in].needs_grad; };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kInput:
      return;

    case OpKind::kConv2d: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& w = nodes_[n.in1].value;
      ConvDims d = conv_dims(x, w, n.stride, n.pad);
      const float* wd = w.data();

      if (needs(n.in1)) {
        // per-image f64 partials merged in ascending image order, so the
        // reduction order per weight is independent of the thread count
        std::vector<double> partial(static_cast<size_t>(d.N) * d.O * d.R, 0.0);
#pragma omp parallel for schedule(static)
        for (int img = 0; img < d.N; ++img) {
          const float* col = n.col.data() + static_cast<size_t>(img) * d.P * d.R;
          const float* g = dy.data() + static_cast<size_t>(img) * d.O * d.P;
          double* acc = partial.data() + static_cast<size_t>(img) * d.O * d.R;
          for (int p = 0; p < d.P; ++p) {
            const float* row = col + static_cast<size_t>(p) * d.R;
            for (int o = 0; o < d.O; ++o) {
              double gv = g[static_cast<size_t>(o) * d.P + p];
              if (gv == 0.0) continue;
              double* a = acc + static_cast<size_t>(o) * d.R;
              for (int r = 0; r < d.R; ++r) a[r] += gv * row[r];
            }
          }
        }
        auto& gw = grad_buf(n.in1);
        for (size_t j = 0; j < static_cast<size_t>(d.O) * d.R; ++j) {
          double acc = 0.0;
          for (int img = 0; img < d.N; ++img) {
            acc += partial[static_cast<size_t>(img) * d.O * d.R + j];
          }
          gw[j] += static_cast<float>(acc);
        }
      }

      if (n.in2 >= 0 && needs(n.in2)) {
        auto& gb = grad_buf(n.in2);
        for (int o = 0; o < d.O; ++o) {
          double acc = 0.0;
          for (int img = 0; img < d.N; ++img) {
            const float* g = dy.data() + (static_cast<size_t>(img) * d.O + o) * d.P;
            for (int p = 0; p < d.P; ++p) acc += g[p];
          }
          gb[o] += static_cast<float>(acc);
        }
      }

      if (needs(n.in0)) {
        auto& gx = grad_buf(n.in0);
#pragma omp parallel for schedule(static)
        for (int img = 0; img < d.N; ++img) {
          std::vector<double> dcol(static_cast<size_t>(d.P) * d.R, 0.0);
          const float* g = dy.data() + static_cast<size_t>(img) * d.O * d.P;
          for (int p = 0; p < d.P; ++p) {
            double* row = dcol.data() + static_cast<size_t>(p) * d.R;
            for (int o = 0; o < d.O; ++o) {
              double gv = g[static_cast<size_t>(o) * d.P + p];
              if (gv == 0.0) continue;
              const float* wrow = wd + static_cast<size_t>(o) * d.R;
              for (int r = 0; r < d.R; ++r) row[r] += gv * wrow[r];
            }
          }
          // col2im: scatter-add in fixed (p, r) order
          std::vector<double> dximg(static_cast<size_t>(d.I) * d.H * d.W, 0.0);
          for (int oy = 0; oy < d.Ho; ++oy) {
            for (int ox = 0; ox < d.Wo; ++ox) {
              const double* row = dcol.data() + static_cast<size_t>(oy * d.Wo + ox) * d.R;
              int r = 0;
              for (int i = 0; i < d.I; ++i) {
                for (int ky = 0; ky < d.K; ++ky) {
                  int y = oy * n.stride - n.pad + ky;
                  if (y < 0 || y >= d.H) {
                    r += d.K;
                    continue;
                  }
                  for (int kx = 0; kx < d.K; ++kx, ++r) {
                    int xx = ox * n.stride - n.pad + kx;
                    if (xx >= 0 && xx < d.W) {
                      dximg[(static_cast<size_t>(i) * d.H + y) * d.W + xx] += row[r];
                    }
                  }
                }
              }
            }
          }
          float* gxi = gx.data() + static_cast<size_t>(img) * d.I * d.H * d.W;
          for (size_t j = 0; j < dximg.size(); ++j) gxi[j] += static_cast<float>(dximg[j]);
        }
      }
      return;
    }

    case OpKind::kRelu: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      auto& gx = grad_buf(n.in0);
      const float* xd = x.data();
      for (size_t i = 0; i < x.numel(); ++i) {
        if (xd[i] > 0.0f) gx[i] += dy[i];  // subgradient at 0 is 0
      }
      return;
    }

    case OpKind::kAdd: {
      if (needs(n.in0)) {
        auto& ga = grad_buf(n.in0);
        for (size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
      }
      if (needs(n.in1)) {
        auto& gb = grad_buf(n.in1);
        for (size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i];
      }
      return;
    }

    case OpKind::kMaxPool: {
      if (!needs(n.in0)) return;
      auto& gx = grad_buf(n.in0);
      for (size_t j = 0; j < dy.size(); ++j) gx[n.argmax[j]] += dy[j];
      return;
    }

    case OpKind::kAvgChannel: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1);
      size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
      auto& gx = grad_buf(n.in0);
      float inv = 1.0f / static_cast<float>(C);
      for (int img = 0; img < N; ++img) {
        for (int c = 0; c < C; ++c) {
          for (size_t p = 0; p < hw; ++p) {
            gx[(static_cast<size_t>(img) * C + c) * hw + p] += dy[img * hw + p] * inv;
          }
        }
      }
      return;
    }

    case OpKind::kAvgSpatial: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
      size_t nc = static_cast<size_t>(x.dim(0)) * x.dim(1);
      auto& gx = grad_buf(n.in0);
      float inv = 1.0f / static_cast<float>(hw);
      for (size_t j = 0; j < nc; ++j) {
        for (size_t p = 0; p < hw; ++p) gx[j * hw + p] += dy[j] * inv;
      }
      return;
    }

    case OpKind::kSpatialDiff: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), H = x.dim(2), W = x.dim(3);
      size_t hw = static_cast<size_t>(H) * W;
      auto& gx = grad_buf(n.in0);
      for (int img = 0; img < N; ++img) {
        const float* gdx = dy.data() + static_cast<size_t>(img) * 2 * hw;
        const float* gdy = gdx + hw;
        float* g = gx.data() + img * hw;
        for (int y = 0; y < H; ++y) {
          for (int xx = 0; xx < W; ++xx) {
            if (xx + 1 < W) {
              g[y * W + xx + 1] += gdx[y * W + xx];
              g[y * W + xx] -= gdx[y * W + xx];
            }
            if (y + 1 < H) {
              g[(y + 1) * W + xx] += gdy[y * W + xx];
              g[y * W + xx] -= gdy[y * W + xx];
            }
          }
        }
      }
      return;
    }

    case OpKind::kL1Diff: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      float g = dy[0];
      const float* ad = a.data();
      const float* bd = b.data();
      if (needs(n.in0)) {
        auto& ga = grad_buf(n.in0);
        for (size_t i = 0; i < a.numel(); ++i) {
          float dl = ad[i] - bd[i];
          if (dl != 0.0f) ga[i] += (dl > 0.0f ? g : -g);
        }
      }
      if (needs(n.in1)) {
        auto& gb = grad_buf(n.in1);
        for (size_t i = 0; i < a.numel(); ++i) {
          float dl = ad[i] - bd[i];
          if (dl != 0.0f) gb[i] += (dl > 0.0f ? -g : g);
        }
      }
      return;
    }

    case OpKind::kSqDiff: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      float g = dy[0];
      const float* ad = a.data();
      const float* bd = b.data();
      if (needs(n.in0)) {
        auto& ga = grad_buf(n.in0);
        for (size_t i = 0; i < a.numel(); ++i) ga[i] += 2.0f * (ad[i] - bd[i]) * g;
      }
      if (needs(n.in1)) {
        auto& gb = grad_buf(n.in1);
        for (size_t i = 0; i < a.numel(); ++i) gb[i] -= 2.0f * (ad[i] - bd[i]) * g;
      }
      return;
    }

    case OpKind::kSoftmax2: {
      if (!needs(n.in0)) return;
      const Tensor& y = n.value;
      int N = y.dim(0);
      size_t hw = static_cast<size_t>(y.dim(2)) * y.dim(3);
      auto& gx = grad_buf(n.in0);
      for (int img = 0; img < N; ++img) {
        const float* p0 = y.data() + static_cast<size_t>(img) * 2 * hw;
        const float* p1 = p0 + hw;
        const float* g0 = dy.data() + static_cast<size_t>(img) * 2 * hw;
        const float* g1 = g0 + hw;
        float* d0 = gx.data() + static_cast<size_t>(img) * 2 * hw;
        float* d1 = d0 + hw;
        for (size_t p = 0; p < hw; ++p) {
          double s = static_cast<double>(g0[p]) * p0[p] + static_cast<double>(g1[p]) * p1[p];
          d0[p] += static_cast<float>(p0[p] * (g0[p] - s));
          d1[p] += static_cast<float>(p1[p] * (g1[p] - s));
        }
      }
      return;
    }

    case OpKind::kTakeChannel: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      int N = x.dim(0), C = x.dim(1);
      size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
      auto& gx = grad_buf(n.in0);
      for (int img = 0; img < N; ++img) {
        float* g = gx.data() + (static_cast<size_t>(img) * C + n.channel) * hw;
        const float* gy = dy.data() + img * hw;
        for (size_t p = 0; p < hw; ++p) g[p] += gy[p];
      }
      return;
    }

    case OpKind::kLog: {
      if (!needs(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      auto& gx = grad_buf(n.in0);
      const float* xd = x.data();
      for (size_t i = 0; i < x.numel(); ++i) {
        double v = xd[i];
        if (v >= kProbClampLo && v <= kProbClampHi) {
          gx[i] += static_cast<float>(dy[i] / v);
        }  // clamped region: zero slope
      }
      return;
    }

    case OpKind::kSum: {
      if (!needs(n.in0)) return;
      auto& gx = grad_buf(n.in0);
      float g = dy[0];
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
      return;
    }

    case OpKind::kScale: {
      if (!needs(n.in0)) return;
      auto& gx = grad_buf(n.in0);
      for (size_t i = 0; i < dy.size(); ++i) gx[i] += n.a * dy[i];
      return;
    }

    case OpKind::kTanh: {
      if (!needs(n.in0)) return;
      const Tensor& y = n.value;
      auto& gx = grad_buf(n.in0);
      const float* yd = y.data();
      for (size_t i = 0; i < y.numel(); ++i) gx[i] += (1.0f - yd[i] * yd[i]) * dy[i];
      return;
    }

    case OpKind::kAffine: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& w = nodes_[n.in1].value;
      int N = x.dim(0), F = x.dim(1), O = w.dim(0);
      const float* xd = x.data();
      const float* wd = w.data();
      if (needs(n.in1)) {
        auto& gw = grad_buf(n.in1);
        for (int o = 0; o < O; ++o) {
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            for (int img = 0; img < N; ++img) {
              acc += static_cast<double>(dy[static_cast<size_t>(img) * O + o]) *
                     xd[static_cast<size_t>(img) * F + f];
            }
            gw[static_cast<size_t>(o) * F + f] += static_cast<float>(acc);
          }
        }
      }
      if (needs(n.in2)) {
        auto& gb = grad_buf(n.in2);
        for (int o = 0; o < O; ++o) {
          double acc = 0.0;
          for (int img = 0; img < N; ++img) acc += dy[static_cast<size_t>(img) * O + o];
          gb[o] += static_cast<float>(acc);
        }
      }
      if (needs(n.in0)) {
        auto& gx = grad_buf(n.in0);
        for (int img = 0; img < N; ++img) {
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            for (int o = 0; o < O; ++o) {
              acc += static_cast<double>(dy[static_cast<size_t>(img) * O + o]) *
                     wd[static_cast<size_t>(o) * F + f];
            }
            gx[static_cast<size_t>(img) * F + f] += static_cast<float>(acc);
          }
        }
      }
      return;
    }

    case OpKind::kReshape: {
      if (!needs(n.in0)) return;
      auto& gx = grad_buf(n.in0);
      for (size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
      return;
    }
  }
  throw NumericError("backward_op: unhandled op kind");
}

}  // namespace simref
