#include "simref/nets.hpp"

#include <cmath>

#include "simref/rng.hpp"

namespace simref {

void RefinerArch::validate() const {
  if (in_channels == 0 || stem_filters == 0 || resblocks == 0 || kernel == 0) {
    throw ConfigError("refiner arch fields must be positive");
  }
  if (kernel % 2 == 0) throw ConfigError("refiner kernel must be odd for same-size output");
}

size_t RefinerArch::param_count() const {
  size_t f = stem_filters, k = kernel, c = in_channels;
  size_t stem = f * c * k * k + f;
  size_t block = 2 * (f * f * k * k + f);
  size_t head = f * c + c;  // 1x1 conv back to the input channel count
  return stem + resblocks * block + head;
}

DiscArch DiscArch::desk() {
  DiscArch a;
  a.in_channels = 1;
  a.layers = {
      {DiscLayer::Kind::conv, 3, 2, 32, 1},
      {DiscLayer::Kind::conv, 3, 2, 32, 1},
      {DiscLayer::Kind::conv, 3, 1, 16, 1},
      {DiscLayer::Kind::conv, 1, 1, 16, 0},
      {DiscLayer::Kind::conv, 1, 1, 2, 0},
  };
  return a;
}

DiscArch DiscArch::paper_gaze() {
  DiscArch a;
  a.in_channels = 1;
  a.layers = {
      {DiscLayer::Kind::conv, 3, 2, 96, 1},
      {DiscLayer::Kind::conv, 3, 2, 64, 1},
      {DiscLayer::Kind::maxpool, 3, 1, 0, 0},
      {DiscLayer::Kind::conv, 3, 1, 32, 1},
      {DiscLayer::Kind::conv, 1, 1, 32, 0},
      {DiscLayer::Kind::conv, 1, 1, 2, 0},
  };
  return a;
}

DiscArch DiscArch::paper_hand() {
  DiscArch a;
  a.in_channels = 1;
  a.layers = {
      {DiscLayer::Kind::conv, 7, 4, 96, 3},
      {DiscLayer::Kind::conv, 5, 2, 64, 2},
      {DiscLayer::Kind::maxpool, 3, 2, 0, 0},
      {DiscLayer::Kind::conv, 3, 2, 32, 1},
      {DiscLayer::Kind::conv, 1, 1, 32, 0},
      {DiscLayer::Kind::conv, 1, 1, 2, 0},
  };
  return a;
}

void DiscArch::validate() const {
  if (in_channels == 0) throw ConfigError("discriminator needs at least one input channel");
  if (layers.empty()) throw ConfigError("discriminator layer list is empty");
  const DiscLayer& last = layers.back();
  if (last.kind != DiscLayer::Kind::conv || last.filters != 2) {
    throw ConfigError("discriminator must end in a 2-filter conv before the softmax");
  }
  for (const DiscLayer& l : layers) {
    if (l.kernel == 0 || l.stride == 0) throw ConfigError("discriminator layer needs kernel and stride >= 1");
    if (l.kind == DiscLayer::Kind::conv && l.filters == 0) {
      throw ConfigError("conv layer needs a positive filter count");
    }
  }
}

std::pair<uint32_t, uint32_t> DiscArch::patch_grid(uint32_t h, uint32_t w) const {
  int64_t hh = h, ww = w;
  for (const DiscLayer& l : layers) {
    int64_t pad = (l.kind == DiscLayer::Kind::conv) ? l.pad : 0;
    hh = (hh + 2 * pad - l.kernel) / l.stride + 1;
    ww = (ww + 2 * pad - l.kernel) / l.stride + 1;
    if (hh < 1 || ww < 1) {
      throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                       " is smaller than the discriminator receptive field");
    }
  }
  if (global_pool) return {1u, 1u};
  return {static_cast<uint32_t>(hh), static_cast<uint32_t>(ww)};
}

uint32_t DiscArch::receptive_field() const {
  uint64_t rf = 1, jump = 1;
  for (const DiscLayer& l : layers) {
    rf += (static_cast<uint64_t>(l.kernel) - 1) * jump;
    jump *= l.stride;
  }
  return static_cast<uint32_t>(rf);
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

static Tensor he_conv(Pcg32& rng, uint32_t out_ch, uint32_t in_ch, uint32_t k) {
  Tensor w({out_ch, in_ch, k, k});
  float std = std::sqrt(2.0f / static_cast<float>(in_ch * k * k));
  for (size_t i = 0; i < w.numel(); ++i) w[i] = std * rng.gaussian();
  return w;
}

Refiner build_refiner(const RefinerArch& arch, uint64_t seed) {
  arch.validate();
  Pcg32 rng(mix_seed(seed, 0x5ef1));
  Refiner r;
  r.arch = arch;
  auto& p = r.params;
  p.add("stem.w", he_conv(rng, arch.stem_filters, arch.in_channels, arch.kernel));
  p.add("stem.b", Tensor({arch.stem_filters}));
  for (uint32_t i = 0; i < arch.resblocks; ++i) {
    std::string base = "block" + std::to_string(i);
    p.add(base + ".conv0.w", he_conv(rng, arch.stem_filters, arch.stem_filters, arch.kernel));
    p.add(base + ".conv0.b", Tensor({arch.stem_filters}));
    p.add(base + ".conv1.w", he_conv(rng, arch.stem_filters, arch.stem_filters, arch.kernel));
    p.add(base + ".conv1.b", Tensor({arch.stem_filters}));
  }
  p.add("head.w", he_conv(rng, arch.in_channels, arch.stem_filters, 1));
  p.add("head.b", Tensor({arch.in_channels}));
  return r;
}

Discriminator build_discriminator(const DiscArch& arch, uint64_t seed) {
  arch.validate();
  Pcg32 rng(mix_seed(seed, 0xd15c));
  Discriminator d;
  d.arch = arch;
  uint32_t ch = arch.in_channels;
  uint32_t li = 0;
  for (const DiscLayer& l : arch.layers) {
    if (l.kind == DiscLayer::Kind::conv) {
      std::string base = "conv" + std::to_string(li);
      d.params.add(base + ".w", he_conv(rng, l.filters, ch, l.kernel));
      d.params.add(base + ".b", Tensor({l.filters}));
      ch = l.filters;
    }
    ++li;
  }
  return d;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

static Value net_leaf(Tape& t, NetParams& p, const std::string& name, bool frozen) {
  return frozen ? t.frozen(p.at(name)) : t.leaf(p.at(name));
}

Value refine_fwd(Tape& t, Refiner& r, Value batch, bool frozen) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != r.arch.in_channels) {
    throw ShapeError("refiner expects [N," + std::to_string(r.arch.in_channels) +
                     ",H,W] input, got " + shape_str(s));
  }
  int pad = static_cast<int>(r.arch.kernel / 2);  // same-size padding
  auto& p = r.params;
  Value h = relu(conv2d(batch, net_leaf(t, p, "stem.w", frozen), net_leaf(t, p, "stem.b", frozen),
                        1, pad));
  for (uint32_t i = 0; i < r.arch.resblocks; ++i) {
    std::string base = "block" + std::to_string(i);
    Value a = relu(conv2d(h, net_leaf(t, p, base + ".conv0.w", frozen),
                          net_leaf(t, p, base + ".conv0.b", frozen), 1, pad));
    Value b = conv2d(a, net_leaf(t, p, base + ".conv1.w", frozen),
                     net_leaf(t, p, base + ".conv1.b", frozen), 1, pad);
    h = relu(add(b, h));
  }
  Value out = conv2d(h, net_leaf(t, p, "head.w", frozen), net_leaf(t, p, "head.b", frozen), 1, 0);
  // tanh squashed into the image range [0,1]
  return scale(tanh(out), 0.5f, 0.5f);
}

Value discriminate_fwd(Tape& t, Discriminator& d, Value batch, bool frozen) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != d.arch.in_channels) {
    throw ShapeError("discriminator expects [N," + std::to_string(d.arch.in_channels) +
                     ",H,W] input, got " + shape_str(s));
  }
  Value h = batch;
  uint32_t li = 0;
  size_t conv_count = 0;
  for (const DiscLayer& l : d.arch.layers) conv_count += (l.kind == DiscLayer::Kind::conv);
  size_t seen = 0;
  for (const DiscLayer& l : d.arch.layers) {
    if (l.kind == DiscLayer::Kind::conv) {
      std::string base = "conv" + std::to_string(li);
      h = conv2d(h, net_leaf(t, d.params, base + ".w", frozen),
                 net_leaf(t, d.params, base + ".b", frozen), static_cast<int>(l.stride),
                 static_cast<int>(l.pad));
      ++seen;
      if (seen < conv_count) h = relu(h);  // final conv emits raw logits
    } else {
      h = maxpool(h, static_cast<int>(l.kernel), static_cast<int>(l.stride));
    }
    ++li;
  }
  if (d.arch.global_pool) h = avg_spatial(h);
  return softmax2(h);
}

double PatchMap::mean_pfake() const {
  size_t n = probs.dim(0);
  size_t hw = static_cast<size_t>(probs.dim(2)) * probs.dim(3);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const float* p0 = probs.data() + i * 2 * hw;
    for (size_t p = 0; p < hw; ++p) acc += p0[p];
  }
  return acc / static_cast<double>(n * hw);
}

void PatchMap::validate(double tol) const {
  if (probs.rank() != 4 || probs.dim(1) != 2) {
    throw ShapeError("patch map must be [N,2,w,h], got " + shape_str(probs.shape()));
  }
  size_t n = probs.dim(0);
  size_t hw = static_cast<size_t>(probs.dim(2)) * probs.dim(3);
  for (size_t i = 0; i < n; ++i) {
    const float* p0 = probs.data() + i * 2 * hw;
    const float* p1 = p0 + hw;
    for (size_t p = 0; p < hw; ++p) {
      if (!(p0[p] > 0.0f && p0[p] < 1.0f && p1[p] > 0.0f && p1[p] < 1.0f)) {
        throw NumericError("patch probability outside (0,1)");
      }
      if (std::abs(static_cast<double>(p0[p]) + p1[p] - 1.0) > tol) {
        throw NumericError("patch probability pair does not sum to 1");
      }
    }
  }
}

Tensor refine(Refiner& r, const Tensor& batch) {
  Tape t;
  Value out = refine_fwd(t, r, t.input(batch), /*frozen=*/true);
  return out.tensor();
}

PatchMap discriminate(Discriminator& d, const Tensor& batch) {
  Tape t;
  Value out = discriminate_fwd(t, d, t.input(batch), /*frozen=*/true);
  return PatchMap{out.tensor()};
}

}  // namespace simref
