#pragma once

#include <array>
#include <optional>
#include <vector>

#include "simref/tensor.hpp"

namespace simref {

enum class Role : uint8_t { synthetic, refined, real };

const char* to_string(Role r);
Role role_from_string(const std::string& s);

struct Annotation {
  float pupil_cx = 0.0f;  // continuous pixel coordinates, pixel centers at +0.5
  float pupil_cy = 0.0f;
  std::array<float, 2> gaze{1.0f, 0.0f};  // unit norm
};

/// A single-channel image in [0,1] with its role tag. Synthetic and refined
/// images carry the simulator annotation; real images never do — the hidden
/// corruption process keeps its ground truth away from anything the trainer
/// can reach.
class AnnotatedImage {
 public:
  AnnotatedImage(Tensor pixels, Annotation ann, Role role);
  static AnnotatedImage real(Tensor pixels);

  const Tensor& pixels() const { return pixels_; }
  Role role() const { return role_; }
  bool has_annotation() const { return ann_.has_value(); }
  const Annotation& annotation() const;

  /// A refined copy inheriting this image's annotation.
  AnnotatedImage with_refined_pixels(Tensor pixels) const;

 private:
  explicit AnnotatedImage(Tensor pixels);  // real-role constructor

  Tensor pixels_;
  std::optional<Annotation> ann_;
  Role role_;
};

/// Generation and hidden-corruption parameters. The corruption fields are
/// consumed only by realize(); the trainer never reads them.
struct WorldConfig {
  uint32_t height = 32;
  uint32_t width = 32;
  float noise_sigma = 0.05f;
  uint32_t blur_radius = 1;
  float gain_lo = 0.85f, gain_hi = 1.15f;
  float bias_lo = -0.05f, bias_hi = 0.05f;
  float jitter_amp = 0.5f;  // pupil boundary jitter, pixels

  void validate() const;
};

/// Clean renders: radial-gradient sclera, iris ring, dark elliptical pupil at
/// a sampled center; annotation = exact generative parameters. Deterministic
/// per (seed, index).
std::vector<AnnotatedImage> simulate(const WorldConfig& cfg, size_t n, uint64_t seed);

struct RealSample {
  std::vector<AnnotatedImage> images;      // role = real, no annotations
  std::vector<Annotation> hidden_truth;    // evaluation harness only
};

/// The hidden "real world": clean renders pushed through boundary jitter,
/// blur, per-image gain/bias and sensor noise. With all corruption parameters
/// zero the output is bit-identical to simulate().
RealSample realize(const WorldConfig& cfg, size_t n, uint64_t seed);

/// Pupil localization oracle: Otsu split of the intensity histogram, then the
/// darkness-weighted centroid of the below-threshold pixels. Sub-pixel.
/// Throws NumericError("no pupil found") when nothing falls below threshold.
std::pair<float, float> pupil_center_oracle(const Tensor& image);

}  // namespace simref
