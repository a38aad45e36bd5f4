#include "simref/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "simref/rng.hpp"

namespace simref {

const char* to_string(Role r) {
  switch (r) {
    case Role::synthetic: return "synthetic";
    case Role::refined: return "refined";
    case Role::real: return "real";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  if (s == "synthetic") return Role::synthetic;
  if (s == "refined") return Role::refined;
  if (s == "real") return Role::real;
  throw ConfigError("unknown role: " + s);
}

AnnotatedImage::AnnotatedImage(Tensor pixels, Annotation ann, Role role)
    : pixels_(std::move(pixels)), ann_(ann), role_(role) {
  if (role_ == Role::real) {
    throw ConfigError("real images must not carry annotations");
  }
  float norm = std::sqrt(ann.gaze[0] * ann.gaze[0] + ann.gaze[1] * ann.gaze[1]);
  if (std::abs(norm - 1.0f) > 1e-5f) throw ConfigError("gaze vector must have unit norm");
}

AnnotatedImage AnnotatedImage::real(Tensor pixels) {
  AnnotatedImage img(std::move(pixels));
  return img;
}

AnnotatedImage::AnnotatedImage(Tensor pixels)  // private-ish real constructor
    : pixels_(std::move(pixels)), ann_(std::nullopt), role_(Role::real) {}

const Annotation& AnnotatedImage::annotation() const {
  if (!ann_) throw ConfigError("image with role 'real' exposes no annotation");
  return *ann_;
}

AnnotatedImage AnnotatedImage::with_refined_pixels(Tensor pixels) const {
  return AnnotatedImage(std::move(pixels), annotation(), Role::refined);
}

void WorldConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("world images must be at least 16x16");
  if (noise_sigma < 0.0f || jitter_amp < 0.0f) {
    throw ConfigError("corruption magnitudes must be non-negative");
  }
  if (gain_lo > gain_hi || bias_lo > bias_hi) throw ConfigError("bad gain/bias range");
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

struct EyeGeometry {
  float eye_cx, eye_cy, eye_r;
  float pupil_cx, pupil_cy;
  float pupil_rx, pupil_ry;
  float iris_r;
  float gaze_x, gaze_y;
  float sclera_base, vignette, iris_val, pupil_val;
  // boundary wobble (zero for clean renders)
  float wobble_amp = 0.0f, wobble_phase = 0.0f;
};

constexpr float kEdgeSoftPx = 0.8f;  // anti-aliasing transition width

float smooth01(float t) {
  t = std::clamp(t, 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

EyeGeometry sample_geometry(Pcg32& rng, const WorldConfig& cfg) {
  float m = static_cast<float>(std::min(cfg.height, cfg.width));
  EyeGeometry g;
  g.eye_cx = 0.5f * cfg.width + static_cast<float>(rng.uniform(-1.0, 1.0));
  g.eye_cy = 0.5f * cfg.height + static_cast<float>(rng.uniform(-1.0, 1.0));
  g.eye_r = m * static_cast<float>(rng.uniform(0.40, 0.44));

  float pupil_r = m * static_cast<float>(rng.uniform(0.08, 0.12));
  g.pupil_rx = pupil_r * static_cast<float>(rng.uniform(0.9, 1.1));
  g.pupil_ry = pupil_r * static_cast<float>(rng.uniform(0.9, 1.1));
  g.iris_r = pupil_r * static_cast<float>(rng.uniform(1.6, 2.0));

  double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  g.gaze_x = static_cast<float>(std::cos(theta));
  g.gaze_y = static_cast<float>(std::sin(theta));

  // keep the whole iris strictly inside the eye disc so every render is
  // radially symmetric around the pupil center (the localization oracle
  // depends on that symmetry)
  float rho_max = std::max(0.10f, 1.0f - (g.iris_r + 2.0f) / g.eye_r);
  float rho = static_cast<float>(rng.uniform(0.05, rho_max));
  g.pupil_cx = g.eye_cx + rho * g.eye_r * g.gaze_x;
  g.pupil_cy = g.eye_cy + rho * g.eye_r * g.gaze_y;

  g.sclera_base = static_cast<float>(rng.uniform(0.78, 0.90));
  g.vignette = static_cast<float>(rng.uniform(0.12, 0.25));
  g.iris_val = static_cast<float>(rng.uniform(0.38, 0.52));
  g.pupil_val = static_cast<float>(rng.uniform(0.03, 0.10));
  return g;
}

Tensor render(const EyeGeometry& g, const WorldConfig& cfg) {
  Tensor img({1u, cfg.height, cfg.width});
  float* d = img.data();
  for (uint32_t y = 0; y < cfg.height; ++y) {
    for (uint32_t x = 0; x < cfg.width; ++x) {
      float px = x + 0.5f, py = y + 0.5f;

      float de = std::hypot(px - g.eye_cx, py - g.eye_cy) / g.eye_r;
      float base = g.sclera_base * (1.0f - g.vignette * std::min(de, 1.2f) * std::min(de, 1.2f));

      float dxp = px - g.pupil_cx, dyp = py - g.pupil_cy;
      float dp = std::hypot(dxp, dyp);

      float wobble = 0.0f;
      if (g.wobble_amp != 0.0f) {
        float ang = std::atan2(dyp, dxp);
        wobble = g.wobble_amp * std::sin(3.0f * ang + g.wobble_phase);
      }

      // iris ring with slight radial shading
      float iris_cov = smooth01((g.iris_r + wobble - dp) / kEdgeSoftPx + 0.5f);
      float iris_shade = g.iris_val * (1.0f - 0.25f * std::min(dp / g.iris_r, 1.0f));

      // elliptical pupil
      float pr = 0.5f * (g.pupil_rx + g.pupil_ry);
      float dpe = std::sqrt((dxp / g.pupil_rx) * (dxp / g.pupil_rx) +
                            (dyp / g.pupil_ry) * (dyp / g.pupil_ry)) *
                  pr;
      float pupil_cov = smooth01((pr + wobble - dpe) / kEdgeSoftPx + 0.5f);

      float v = base;
      v = v + iris_cov * (iris_shade - v);
      v = v + pupil_cov * (g.pupil_val - v);
      d[y * cfg.width + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return img;
}

void gaussian_blur(Tensor& img, uint32_t radius) {
  if (radius == 0) return;
  int r = static_cast<int>(radius);
  std::vector<float> kernel(2 * r + 1);
  float sigma = 0.6f * r + 0.2f;
  double ksum = 0.0;
  for (int i = -r; i <= r; ++i) {
    kernel[i + r] = std::exp(-0.5f * (i * i) / (sigma * sigma));
    ksum += kernel[i + r];
  }
  for (float& k : kernel) k = static_cast<float>(k / ksum);

  int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  std::vector<float> tmp(static_cast<size_t>(h) * w);
  const float* src = img.data();
  // horizontal, clamped borders
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[i + r] * src[y * w + xx];
      }
      tmp[y * w + x] = static_cast<float>(acc);
    }
  }
  float* dst = img.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[i + r] * tmp[yy * w + x];
      }
      dst[y * w + x] = static_cast<float>(acc);
    }
  }
}

constexpr uint64_t kCorruptSalt = 0x4e01;

}  // namespace

std::vector<AnnotatedImage> simulate(const WorldConfig& cfg, size_t n, uint64_t seed) {
  cfg.validate();
  if (n == 0) throw ConfigError("simulate: n must be >= 1");
  std::vector<AnnotatedImage> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Pcg32 rng(seed, 2 * i + 1);
    EyeGeometry g = sample_geometry(rng, cfg);
    Annotation ann{g.pupil_cx, g.pupil_cy, {g.gaze_x, g.gaze_y}};
    out.emplace_back(render(g, cfg), ann, Role::synthetic);
  }
  return out;
}

RealSample realize(const WorldConfig& cfg, size_t n, uint64_t seed) {
  cfg.validate();
  if (n == 0) throw ConfigError("realize: n must be >= 1");
  RealSample out;
  out.images.reserve(n);
  out.hidden_truth.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    // geometry draws mirror simulate() exactly; corruption uses its own
    // stream so zeroed corruption parameters reproduce the clean render bit
    // for bit
    Pcg32 rng(seed, 2 * i + 1);
    EyeGeometry g = sample_geometry(rng, cfg);
    Pcg32 crng(mix_seed(seed, kCorruptSalt), 2 * i + 1);

    if (cfg.jitter_amp > 0.0f) {
      g.pupil_rx += static_cast<float>(crng.uniform(-cfg.jitter_amp, cfg.jitter_amp));
      g.pupil_ry += static_cast<float>(crng.uniform(-cfg.jitter_amp, cfg.jitter_amp));
      g.wobble_amp = cfg.jitter_amp;
      g.wobble_phase = static_cast<float>(crng.uniform(0.0, 2.0 * std::numbers::pi));
    }

    Tensor img = render(g, cfg);
    gaussian_blur(img, cfg.blur_radius);

    bool has_gain = cfg.gain_lo != 1.0f || cfg.gain_hi != 1.0f || cfg.bias_lo != 0.0f ||
                    cfg.bias_hi != 0.0f;
    if (has_gain) {
      float gain = static_cast<float>(crng.uniform(cfg.gain_lo, cfg.gain_hi));
      float bias = static_cast<float>(crng.uniform(cfg.bias_lo, cfg.bias_hi));
      for (size_t p = 0; p < img.numel(); ++p) img[p] = gain * img[p] + bias;
    }
    if (cfg.noise_sigma > 0.0f) {
      for (size_t p = 0; p < img.numel(); ++p) img[p] += cfg.noise_sigma * crng.gaussian();
    }
    if (cfg.jitter_amp > 0.0f || cfg.blur_radius > 0 || has_gain || cfg.noise_sigma > 0.0f) {
      for (size_t p = 0; p < img.numel(); ++p) img[p] = std::clamp(img[p], 0.0f, 1.0f);
    }

    out.images.push_back(AnnotatedImage::real(std::move(img)));
    out.hidden_truth.push_back(Annotation{g.pupil_cx, g.pupil_cy, {g.gaze_x, g.gaze_y}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// pupil oracle
// ---------------------------------------------------------------------------

std::pair<float, float> pupil_center_oracle(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw ShapeError("pupil oracle expects a [1,H,W] image, got " + shape_str(image.shape()));
  }
  const float* d = image.data();
  size_t n = image.numel();

  // Otsu threshold over a 256-bin histogram
  constexpr int kBins = 256;
  std::array<uint32_t, kBins> hist{};
  for (size_t i = 0; i < n; ++i) {
    int b = static_cast<int>(std::clamp(d[i], 0.0f, 1.0f) * (kBins - 1) + 0.5f);
    ++hist[b];
  }
  double total_sum = 0.0;
  for (int b = 0; b < kBins; ++b) total_sum += static_cast<double>(b) * hist[b];

  double best_var = -1.0;
  int best_t = -1;
  double w0 = 0.0, sum0 = 0.0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[t];
    if (w0 == 0.0) continue;
    double w1 = static_cast<double>(n) - w0;
    if (w1 == 0.0) break;
    sum0 += static_cast<double>(t) * hist[t];
    double m0 = sum0 / w0;
    double m1 = (total_sum - sum0) / w1;
    double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  if (best_t < 0 || best_var <= 0.0) throw NumericError("no pupil found");
  float thr = (best_t + 0.5f) / (kBins - 1);

  // darkness-weighted centroid of the below-threshold pixels
  uint32_t h = image.dim(1), w = image.dim(2);
  double wsum = 0.0, cx = 0.0, cy = 0.0;
  for (uint32_t y = 0; y < h; ++y) {
    for (uint32_t x = 0; x < w; ++x) {
      float v = d[y * w + x];
      if (v < thr) {
        double wt = thr - v;
        wsum += wt;
        cx += wt * (x + 0.5);
        cy += wt * (y + 0.5);
      }
    }
  }
  if (wsum <= 0.0) throw NumericError("no pupil found");
  return {static_cast<float>(cx / wsum), static_cast<float>(cy / wsum)};
}

}  // namespace simref
