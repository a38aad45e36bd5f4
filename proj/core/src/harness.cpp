#include "simref/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "simref/grad_check.hpp"
#include "simref/objectives.hpp"
#include "simref/rng.hpp"

namespace simref {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// predictor
// ---------------------------------------------------------------------------

uint32_t PredictorArch::flat_dim() const {
  uint32_t h = height, w = width;
  for (size_t i = 0; i < filters.size(); ++i) {
    h /= 2;
    w /= 2;  // conv keeps the size (pad 1), each 2x2 pool halves it
  }
  return filters.back() * h * w;
}

Predictor build_predictor(uint32_t height, uint32_t width, uint64_t seed) {
  if (height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("predictor input extents must be divisible by 8");
  }
  Predictor p;
  p.arch.height = height;
  p.arch.width = width;
  Pcg32 rng(mix_seed(seed, 0x9e8d));
  uint32_t in_ch = 1;
  for (size_t i = 0; i < p.arch.filters.size(); ++i) {
    uint32_t f = p.arch.filters[i];
    Tensor w({f, in_ch, 3, 3});
    float std = std::sqrt(2.0f / static_cast<float>(in_ch * 9));
    for (size_t j = 0; j < w.numel(); ++j) w[j] = std * rng.gaussian();
    p.params.add("conv" + std::to_string(i) + ".w", std::move(w));
    p.params.add("conv" + std::to_string(i) + ".b", Tensor({f}));
    in_ch = f;
  }
  uint32_t flat = p.arch.flat_dim();
  Tensor w1({p.arch.fc_hidden, flat});
  float std1 = std::sqrt(2.0f / static_cast<float>(flat));
  for (size_t j = 0; j < w1.numel(); ++j) w1[j] = std1 * rng.gaussian();
  p.params.add("fc0.w", std::move(w1));
  p.params.add("fc0.b", Tensor({p.arch.fc_hidden}));
  Tensor w2({4u, p.arch.fc_hidden});
  float std2 = std::sqrt(2.0f / static_cast<float>(p.arch.fc_hidden));
  for (size_t j = 0; j < w2.numel(); ++j) w2[j] = std2 * rng.gaussian();
  p.params.add("fc1.w", std::move(w2));
  p.params.add("fc1.b", Tensor({4u}));
  return p;
}

Value predictor_fwd(Tape& t, Predictor& p, Value batch, bool frozen) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != p.arch.height || s[3] != p.arch.width) {
    throw ShapeError("predictor expects [N,1," + std::to_string(p.arch.height) + "," +
                     std::to_string(p.arch.width) + "], got " + shape_str(s));
  }
  auto leaf = [&](const std::string& name) {
    return frozen ? t.frozen(p.params.at(name)) : t.leaf(p.params.at(name));
  };
  Value h = batch;
  for (size_t i = 0; i < p.arch.filters.size(); ++i) {
    std::string base = "conv" + std::to_string(i);
    h = relu(conv2d(h, leaf(base + ".w"), leaf(base + ".b"), 1, 1));
    h = maxpool(h, 2, 2);
  }
  h = reshape(h, Shape{s[0], p.arch.flat_dim()});
  h = relu(affine(h, leaf("fc0.w"), leaf("fc0.b")));
  return affine(h, leaf("fc1.w"), leaf("fc1.b"));
}

Tensor predict(Predictor& p, const Tensor& batch) {
  Tape t;
  return predictor_fwd(t, p, t.input(batch), /*frozen=*/true).tensor();
}

/// Targets in normalized coordinates: pupil center over the image extent,
/// gaze mapped from [-1,1] to [0,1].
static std::array<float, 4> normalized_target(const Annotation& a, uint32_t h, uint32_t w) {
  return {a.pupil_cx / static_cast<float>(w), a.pupil_cy / static_cast<float>(h),
          0.5f * (a.gaze[0] + 1.0f), 0.5f * (a.gaze[1] + 1.0f)};
}

std::vector<float> train_predictor(Predictor& p, std::span<const AnnotatedImage> dataset,
                                   uint64_t seed, const PredictorTrainOpts& opts) {
  if (dataset.empty()) throw ConfigError("train_predictor: empty dataset");
  for (const AnnotatedImage& img : dataset) {
    if (!img.has_annotation()) {
      throw ConfigError("train_predictor: dataset with role 'real' carries no labels");
    }
  }
  Pcg32 rng(mix_seed(seed, 0x47e0));
  uint32_t n = static_cast<uint32_t>(dataset.size());
  std::vector<uint32_t> order(n);
  for (uint32_t i = 0; i < n; ++i) order[i] = i;

  std::vector<float> epoch_losses;
  epoch_losses.reserve(opts.epochs);
  for (uint32_t e = 0; e < opts.epochs; ++e) {
    // in-place Fisher-Yates shuffle per epoch
    for (uint32_t i = n - 1; i > 0; --i) {
      uint32_t j = rng.uniform_below(i + 1);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (uint32_t off = 0; off < n; off += opts.batch) {
      uint32_t bs = std::min(opts.batch, n - off);
      std::vector<Tensor> imgs;
      imgs.reserve(bs);
      Tensor target({bs, 4u});
      for (uint32_t i = 0; i < bs; ++i) {
        const AnnotatedImage& img = dataset[order[off + i]];
        imgs.push_back(img.pixels());
        auto tgt = normalized_target(img.annotation(), p.arch.height, p.arch.width);
        for (int j = 0; j < 4; ++j) target[i * 4 + j] = tgt[j];
      }
      Tape t;
      Value pred = predictor_fwd(t, p, t.input(stack_images(imgs)));
      // mean-per-example squared error decouples the step size from bs
      Value vloss = scale(sq_diff(pred, t.input(std::move(target))), 1.0f / bs);
      double lv = vloss.scalar();
      if (!std::isfinite(lv)) {
        throw NumericError("predictor loss became non-finite at epoch " + std::to_string(e));
      }
      t.backward(vloss);
      sgd_step(p.params, opts.lr);
      epoch_loss += lv * bs;
    }
    epoch_losses.push_back(static_cast<float>(epoch_loss / n));
  }
  return epoch_losses;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

static const std::array<double, 7> kCurveThresholds{0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0};

std::span<const double> curve_thresholds() { return kCurveThresholds; }

CumulativeCurve cumulative_curve(std::span<const double> errors,
                                 std::span<const double> thresholds) {
  if (errors.empty()) throw ConfigError("cumulative_curve: empty error list");
  CumulativeCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  c.fraction_within.reserve(thresholds.size());
  for (double d : thresholds) {
    size_t within = 0;
    for (double e : errors) within += (e <= d);
    c.fraction_within.push_back(static_cast<double>(within) / errors.size());
  }
  return c;
}

EvalResult eval_predictor(Predictor& p, std::span<const AnnotatedImage> real_test,
                          std::span<const Annotation> hidden_truth) {
  if (real_test.empty()) throw ConfigError("eval_predictor: empty test set");
  if (real_test.size() != hidden_truth.size()) {
    throw ConfigError("eval_predictor: truth table does not match the test set");
  }
  uint32_t h = p.arch.height, w = p.arch.width;
  std::vector<double> pupil_err, gaze_err;
  pupil_err.reserve(real_test.size());
  gaze_err.reserve(real_test.size());

  constexpr uint32_t kChunk = 64;
  for (size_t off = 0; off < real_test.size(); off += kChunk) {
    size_t bs = std::min<size_t>(kChunk, real_test.size() - off);
    std::vector<Tensor> imgs;
    imgs.reserve(bs);
    for (size_t i = 0; i < bs; ++i) imgs.push_back(real_test[off + i].pixels());
    Tensor out = predict(p, stack_images(imgs));
    for (size_t i = 0; i < bs; ++i) {
      const Annotation& a = hidden_truth[off + i];
      double cx = out[i * 4 + 0] * w;
      double cy = out[i * 4 + 1] * h;
      pupil_err.push_back(std::hypot(cx - a.pupil_cx, cy - a.pupil_cy));

      double gx = 2.0 * out[i * 4 + 2] - 1.0;
      double gy = 2.0 * out[i * 4 + 3] - 1.0;
      double norm = std::hypot(gx, gy);
      double dot = norm > 1e-12 ? (gx * a.gaze[0] + gy * a.gaze[1]) / norm : 0.0;
      dot = std::clamp(dot, -1.0, 1.0);
      gaze_err.push_back(std::acos(dot) * 180.0 / std::numbers::pi);
    }
  }

  EvalResult r;
  r.n = real_test.size();
  for (double e : pupil_err) r.mean_pupil_err_px += e;
  for (double e : gaze_err) r.mean_gaze_err_deg += e;
  r.mean_pupil_err_px /= static_cast<double>(r.n);
  r.mean_gaze_err_deg /= static_cast<double>(r.n);
  r.pupil_curve = cumulative_curve(pupil_err, kCurveThresholds);
  r.gaze_curve = cumulative_curve(gaze_err, kCurveThresholds);
  return r;
}

std::vector<AnnotatedImage> refine_dataset(Refiner& r, std::span<const AnnotatedImage> synthetic,
                                           uint32_t batch) {
  std::vector<AnnotatedImage> out;
  out.reserve(synthetic.size());
  for (size_t off = 0; off < synthetic.size(); off += batch) {
    size_t bs = std::min<size_t>(batch, synthetic.size() - off);
    std::vector<Tensor> imgs;
    imgs.reserve(bs);
    for (size_t i = 0; i < bs; ++i) imgs.push_back(synthetic[off + i].pixels());
    Tensor refined = refine(r, stack_images(imgs));
    for (size_t i = 0; i < bs; ++i) {
      out.push_back(synthetic[off + i].with_refined_pixels(image_from_batch(refined, i)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// annotation drift
// ---------------------------------------------------------------------------

DriftResult annotation_drift(const std::function<Tensor(const Tensor&)>& refine_batch,
                             std::span<const AnnotatedImage> synthetic, uint32_t batch) {
  if (synthetic.size() < 100) {
    throw ConfigError("annotation_drift needs at least 100 images, got " +
                      std::to_string(synthetic.size()));
  }
  std::vector<double> drifts;
  drifts.reserve(synthetic.size());
  size_t failures = 0;

  for (size_t off = 0; off < synthetic.size(); off += batch) {
    size_t bs = std::min<size_t>(batch, synthetic.size() - off);
    std::vector<Tensor> imgs;
    imgs.reserve(bs);
    for (size_t i = 0; i < bs; ++i) imgs.push_back(synthetic[off + i].pixels());
    Tensor refined = refine_batch(stack_images(imgs));
    for (size_t i = 0; i < bs; ++i) {
      try {
        auto [sx, sy] = pupil_center_oracle(synthetic[off + i].pixels());
        auto [rx, ry] = pupil_center_oracle(image_from_batch(refined, i));
        drifts.push_back(std::hypot(static_cast<double>(rx) - sx, static_cast<double>(ry) - sy));
      } catch (const NumericError&) {
        ++failures;
      }
    }
  }

  if (failures * 20 > synthetic.size()) {  // > 5%
    throw NumericError("pupil oracle failed on " + std::to_string(failures) + " of " +
                       std::to_string(synthetic.size()) + " images");
  }
  DriftResult r;
  r.n = drifts.size();
  r.oracle_failures = failures;
  for (double d : drifts) r.mean_px += d;
  r.mean_px /= static_cast<double>(r.n);
  for (double d : drifts) r.std_px += (d - r.mean_px) * (d - r.mean_px);
  r.std_px = std::sqrt(r.std_px / static_cast<double>(r.n));
  return r;
}

DriftResult annotation_drift(Refiner& r, std::span<const AnnotatedImage> synthetic,
                             uint32_t batch) {
  return annotation_drift([&r](const Tensor& b) { return refine(r, b); }, synthetic, batch);
}

// ---------------------------------------------------------------------------
// confusion export / image grids
// ---------------------------------------------------------------------------

double confusion_accuracy(const ConfusionMatrix& m) {
  uint64_t total = m[0][0] + m[0][1] + m[1][0] + m[1][1];
  if (total == 0) throw ConfigError("confusion matrix is all zero; accuracy undefined");
  return static_cast<double>(m[0][0] + m[1][1]) / static_cast<double>(total);
}

void export_confusion(const ConfusionMatrix& m, const fs::path& path) {
  double acc = confusion_accuracy(m);  // validates before any file is touched
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << ",selected_real,selected_synthetic\n";
  f << "ground_truth_real," << m[0][0] << "," << m[0][1] << "\n";
  f << "ground_truth_synthetic," << m[1][0] << "," << m[1][1] << "\n";
  char line[64];
  std::snprintf(line, sizeof(line), "accuracy,%.6f,\n", acc);
  f << line;
}

void export_image_grid_pgm(std::span<const Tensor> images, const fs::path& path, uint32_t cols) {
  if (images.empty()) throw ConfigError("export_image_grid_pgm: no images");
  if (cols == 0) throw ConfigError("export_image_grid_pgm: cols must be positive");
  uint32_t h = images[0].dim(1), w = images[0].dim(2);
  for (const Tensor& t : images) {
    if (t.rank() != 3 || t.dim(0) != 1 || t.dim(1) != h || t.dim(2) != w) {
      throw ShapeError("export_image_grid_pgm: images must all be [1," + std::to_string(h) +
                       "," + std::to_string(w) + "]");
    }
  }
  uint32_t rows = (static_cast<uint32_t>(images.size()) + cols - 1) / cols;
  uint32_t gw = cols * (w + 1) - 1, gh = rows * (h + 1) - 1;
  std::vector<uint8_t> canvas(static_cast<size_t>(gw) * gh, 255);
  for (size_t i = 0; i < images.size(); ++i) {
    uint32_t r = static_cast<uint32_t>(i) / cols, c = static_cast<uint32_t>(i) % cols;
    uint32_t oy = r * (h + 1), ox = c * (w + 1);
    const float* d = images[i].data();
    for (uint32_t y = 0; y < h; ++y) {
      for (uint32_t x = 0; x < w; ++x) {
        float v = std::clamp(d[y * w + x], 0.0f, 1.0f);
        canvas[static_cast<size_t>(oy + y) * gw + ox + x] =
            static_cast<uint8_t>(v * 255.0f + 0.5f);
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << gw << " " << gh << "\n255\n";
  f.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
}

// ---------------------------------------------------------------------------
// realism probe
// ---------------------------------------------------------------------------

double probe_realism(Refiner& r, std::span<const AnnotatedImage> synthetic,
                     std::span<const AnnotatedImage> real, uint64_t seed, uint32_t steps,
                     uint32_t batch, float lr) {
  Discriminator probe = build_discriminator(DiscArch::desk(), mix_seed(seed, 0x1207e));
  Pcg32 rng(mix_seed(seed, 0x5a17));
  uint32_t half = batch / 2;
  auto draw = [&rng](std::span<const AnnotatedImage> set, uint32_t count) {
    std::vector<Tensor> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
      out.push_back(set[rng.uniform_below(static_cast<uint32_t>(set.size()))].pixels());
    }
    return out;
  };

  for (uint32_t s = 0; s < steps; ++s) {
    std::vector<Tensor> synth = draw(synthetic, half);
    Tensor fakes = refine(r, stack_images(synth));
    std::vector<Tensor> reals = draw(real, half);
    Tape t;
    Value mf = discriminate_fwd(t, probe, t.input(std::move(fakes)));
    Value mr = discriminate_fwd(t, probe, t.input(stack_images(reals)));
    Value vloss = loss_discriminator(mf, mr);
    if (!std::isfinite(vloss.scalar())) {
      throw NumericError("probe discriminator loss became non-finite");
    }
    t.backward(vloss);
    sgd_step(probe.params, lr);
  }

  // held-out refined sample scored by the trained probe
  std::vector<Tensor> synth = draw(synthetic, std::min<uint32_t>(256, batch * 8));
  Tensor refined = refine(r, stack_images(synth));
  PatchMap map = discriminate(probe, refined);
  return map.mean_pfake();
}

// ---------------------------------------------------------------------------
// standard gradient checks
// ---------------------------------------------------------------------------

std::vector<GradCheckCase> standard_grad_checks(uint64_t seed, double eps) {
  Pcg32 rng(mix_seed(seed, 0x6ca0));
  auto rand_tensor = [&rng](Shape s, float scale) {
    Tensor t(std::move(s));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
    return t;
  };
  auto rand_image_batch = [&rng](uint32_t n, uint32_t c) {
    Tensor t({n, c, 16u, 16u});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(0.05, 0.95));
    return t;
  };

  std::vector<GradCheckCase> cases;

  {  // conv2d through a nonlinearity
    NetParams p("check");
    p.add("w", rand_tensor({4u, 2u, 3u, 3u}, 0.4f));
    p.add("b", rand_tensor({4u}, 0.1f));
    Tensor x = rand_image_batch(2, 2);
    auto build = [&](Tape& t) {
      return sum(relu(conv2d(t.input(x), t.leaf(p.at("w")), t.leaf(p.at("b")), 2, 1)));
    };
    cases.push_back({"conv2d", grad_check(build, p, eps)});
  }

  RefinerArch small_r{1, 6, 1, 3};
  DiscArch small_d;
  small_d.in_channels = 1;
  small_d.layers = {
      {DiscLayer::Kind::conv, 3, 2, 8, 1},
      {DiscLayer::Kind::conv, 1, 1, 2, 0},
  };

  {  // one residual block
    Refiner r = build_refiner(small_r, mix_seed(seed, 1));
    NetParams p("check");
    p.add("c0.w", r.params.at("block0.conv0.w"));
    p.add("c0.b", r.params.at("block0.conv0.b"));
    p.add("c1.w", r.params.at("block0.conv1.w"));
    p.add("c1.b", r.params.at("block0.conv1.b"));
    Tensor x = rand_image_batch(2, 6);
    auto build = [&](Tape& t) {
      Value vx = t.input(x);
      Value a = relu(conv2d(vx, t.leaf(p.at("c0.w")), t.leaf(p.at("c0.b")), 1, 1));
      Value b2 = conv2d(a, t.leaf(p.at("c1.w")), t.leaf(p.at("c1.b")), 1, 1);
      return sum(relu(add(b2, vx)));
    };
    cases.push_back({"resblock", grad_check(build, p, eps)});
  }

  Tensor x_syn = rand_image_batch(2, 1);
  Tensor x_real = rand_image_batch(2, 1);

  {  // discriminator objective w.r.t. discriminator weights
    Refiner r = build_refiner(small_r, mix_seed(seed, 2));
    Discriminator d = build_discriminator(small_d, mix_seed(seed, 3));
    Tensor refined = refine(r, x_syn);
    auto build = [&](Tape& t) {
      Value mf = discriminate_fwd(t, d, t.input(refined));
      Value mr = discriminate_fwd(t, d, t.input(x_real));
      return loss_discriminator(mf, mr);
    };
    cases.push_back({"disc_loss", grad_check(build, d.params, eps)});
  }

  {  // realism objective w.r.t. refiner weights, discriminator frozen
    Refiner r = build_refiner(small_r, mix_seed(seed, 4));
    Discriminator d = build_discriminator(small_d, mix_seed(seed, 5));
    auto build = [&](Tape& t) {
      Value vref = refine_fwd(t, r, t.input(x_syn));
      Value map = discriminate_fwd(t, d, vref, /*frozen=*/true);
      return loss_realism(map);
    };
    cases.push_back({"realism_loss", grad_check(build, r.params, eps)});
  }

  {  // combined refiner objective
    Refiner r = build_refiner(small_r, mix_seed(seed, 6));
    Discriminator d = build_discriminator(small_d, mix_seed(seed, 7));
    auto build = [&](Tape& t) {
      Value vx = t.input(x_syn);
      Value vref = refine_fwd(t, r, vx);
      Value map = discriminate_fwd(t, d, vref, /*frozen=*/true);
      return loss_refiner(map, vref, vx, 0.5f, FeatureTransform::identity);
    };
    cases.push_back({"refiner_loss", grad_check(build, r.params, eps)});
  }

  return cases;
}

}  // namespace simref
