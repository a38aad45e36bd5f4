#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>

#include "simref/nets.hpp"
#include "simref/toyworld.hpp"

namespace simref {

/// Small conv regressor for the downstream task: three conv+pool stages
/// (8/16/32 filters), then two dense layers onto 4 outputs
/// (pupil cx, cy, gaze x, y), all predicted in normalized coordinates.
struct PredictorArch {
  uint32_t height = 32;
  uint32_t width = 32;
  std::array<uint32_t, 3> filters{8, 16, 32};
  uint32_t fc_hidden = 64;

  uint32_t flat_dim() const;
};

struct Predictor {
  PredictorArch arch;
  NetParams params{"predictor"};
};

Predictor build_predictor(uint32_t height, uint32_t width, uint64_t seed);

Value predictor_fwd(Tape& tape, Predictor& p, Value batch, bool frozen = false);
/// Forward-only predictions, [N,4] in normalized coordinates.
Tensor predict(Predictor& p, const Tensor& batch);

struct PredictorTrainOpts {
  uint32_t epochs = 20;
  uint32_t batch = 32;
  float lr = 0.002f;
};

/// SGD on the summed squared error of the 4-vector. Every image must carry an
/// annotation: synthetic sets and refined sets (which inherit their source
/// annotations) qualify, real sets are rejected.
/// Returns the mean per-example loss of each epoch.
std::vector<float> train_predictor(Predictor& p, std::span<const AnnotatedImage> dataset,
                                   uint64_t seed, const PredictorTrainOpts& opts = {});

struct CumulativeCurve {
  std::vector<double> thresholds;
  std::vector<double> fraction_within;
};

/// Fraction of errors <= d for each threshold; non-decreasing by construction.
CumulativeCurve cumulative_curve(std::span<const double> errors,
                                 std::span<const double> thresholds);

/// Fixed threshold grid used for all reported curves.
std::span<const double> curve_thresholds();

struct EvalResult {
  double mean_pupil_err_px = 0.0;
  double mean_gaze_err_deg = 0.0;
  CumulativeCurve pupil_curve;  // pixels
  CumulativeCurve gaze_curve;   // degrees
  size_t n = 0;
};

/// Scores a predictor on a real test split whose ground truth is held by the
/// harness alone.
EvalResult eval_predictor(Predictor& p, std::span<const AnnotatedImage> real_test,
                          std::span<const Annotation> hidden_truth);

/// Refines a whole annotated set; outputs inherit the source annotations.
std::vector<AnnotatedImage> refine_dataset(Refiner& r, std::span<const AnnotatedImage> synthetic,
                                           uint32_t batch = 32);

struct DriftResult {
  double mean_px = 0.0;
  double std_px = 0.0;
  size_t n = 0;
  size_t oracle_failures = 0;
};

/// Pupil-center displacement between each synthetic image and its refinement,
/// measured by the localization oracle on both sides. Oracle failure on more
/// than 5% of the set aborts.
DriftResult annotation_drift(const std::function<Tensor(const Tensor&)>& refine_batch,
                             std::span<const AnnotatedImage> synthetic, uint32_t batch = 32);
DriftResult annotation_drift(Refiner& r, std::span<const AnnotatedImage> synthetic,
                             uint32_t batch = 32);

/// 2x2 confusion matrix: rows = ground truth (real, synthetic), columns =
/// selected (real, synthetic). Accuracy is the diagonal mass; an all-zero
/// matrix is an error.
using ConfusionMatrix = std::array<std::array<uint64_t, 2>, 2>;
double confusion_accuracy(const ConfusionMatrix& m);
void export_confusion(const ConfusionMatrix& m, const std::filesystem::path& path);

/// Binary PGM (P5) grid of images for eyeballing; images are tiled row-major.
void export_image_grid_pgm(std::span<const Tensor> images, const std::filesystem::path& path,
                           uint32_t cols);

/// Realism probe: trains a fresh discriminator from scratch against the given
/// refiner, then reports the mean fake probability it assigns to held-out
/// refined images. Lower means the refiner output is harder to separate from
/// the real set.
double probe_realism(Refiner& r, std::span<const AnnotatedImage> synthetic,
                     std::span<const AnnotatedImage> real, uint64_t seed, uint32_t steps = 300,
                     uint32_t batch = 32, float lr = 0.001f);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
};

/// Finite-difference verification of the canonical loss graphs (plain conv
/// stack, residual block, both adversarial objectives, the combined refiner
/// objective) on randomized 2-image 16x16 batches. Small architectures keep
/// each case to a second or two.
std::vector<GradCheckCase> standard_grad_checks(uint64_t seed, double eps);

}  // namespace simref
