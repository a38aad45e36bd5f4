#pragma once

#include "simref/net_params.hpp"
#include "simref/tape.hpp"

namespace simref {

/// Fully convolutional refiner: stem conv + ReLU, a chain of residual blocks
/// (conv-ReLU-conv plus skip, ReLU after the add), then a 1x1 conv whose tanh
/// output is mapped affinely into [0,1]. No striding, no pooling, so the
/// output spatial shape always equals the input's.
struct RefinerArch {
  uint32_t in_channels = 1;
  uint32_t stem_filters = 16;
  uint32_t resblocks = 2;
  uint32_t kernel = 3;

  static RefinerArch desk() { return {1, 16, 2, 3}; }
  static RefinerArch paper_gaze() { return {1, 64, 4, 3}; }
  static RefinerArch paper_hand() { return {1, 64, 10, 7}; }

  void validate() const;
  /// Closed-form scalar parameter count.
  size_t param_count() const;
};

struct DiscLayer {
  enum class Kind : uint8_t { conv, maxpool };
  Kind kind;
  uint32_t kernel = 3;
  uint32_t stride = 1;
  uint32_t filters = 0;  // conv only
  uint32_t pad = 0;
};

/// Patch discriminator: a conv/maxpool stack ending in a 2-filter 1x1 conv,
/// followed by a per-patch 2-way softmax. Channel 0 is the probability that
/// the patch comes from a refined image. With global_pool set the spatial map
/// is averaged before the softmax, giving one decision per image (the
/// "global adversarial loss" ablation).
struct DiscArch {
  uint32_t in_channels = 1;
  std::vector<DiscLayer> layers;
  bool global_pool = false;

  static DiscArch desk();
  static DiscArch paper_gaze();
  static DiscArch paper_hand();

  void validate() const;
  /// Patch-map spatial extent for a given input size.
  std::pair<uint32_t, uint32_t> patch_grid(uint32_t h, uint32_t w) const;
  /// Receptive field of one output patch, in input pixels.
  uint32_t receptive_field() const;
};

struct Refiner {
  RefinerArch arch;
  NetParams params{"refiner"};
};

struct Discriminator {
  DiscArch arch;
  NetParams params{"discriminator"};
};

/// He fan-in Gaussian init for conv kernels, zero biases; bit-deterministic
/// for a given seed.
Refiner build_refiner(const RefinerArch& arch, uint64_t seed);
Discriminator build_discriminator(const DiscArch& arch, uint64_t seed);

/// Records the refiner forward pass on the tape. With frozen=true the
/// parameters are treated as constants (no gradients).
Value refine_fwd(Tape& tape, Refiner& r, Value batch, bool frozen = false);
/// Discriminator forward; output is the softmax patch map [N,2,w,h].
Value discriminate_fwd(Tape& tape, Discriminator& d, Value batch, bool frozen = false);

/// Softmax patch map with channel 0 = P(refined/fake).
struct PatchMap {
  Tensor probs;

  double mean_pfake() const;
  /// Checks the per-patch pair sum and (0,1) range invariants.
  void validate(double tol = 1e-6) const;
};

/// Convenience non-tape entry points (forward only).
Tensor refine(Refiner& r, const Tensor& batch);
PatchMap discriminate(Discriminator& d, const Tensor& batch);

}  // namespace simref
