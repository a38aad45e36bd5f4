#pragma once

#include "simref/tape.hpp"

namespace simref {

/// Map from image space to the feature space the L1 anchor is computed in.
enum class FeatureTransform : uint8_t {
  identity,      // psi(x) = x
  channel_mean,  // mean over channels, for multi-channel refinement
  derivatives,   // forward differences (dx, dy), replicate boundary
};

const char* to_string(FeatureTransform t);
FeatureTransform feature_transform_from_string(const std::string& s);

Value apply_feature_transform(Value x, FeatureTransform psi);

/// Discriminator objective: per-patch cross-entropy with target "fake" for
/// every refined patch and "real" for every real patch, summed over batch and
/// patches:  -sum log P_fake(refined) - sum log(1 - P_fake(real)).
/// Both arguments are softmax patch maps; per-image grids must match, batch
/// counts may differ.
Value loss_discriminator(Value map_refined, Value map_real);

/// Realism term of the refiner objective: -sum log(1 - P_fake(refined)).
/// Gradients reach the refiner only when the discriminator weights entered
/// the tape frozen, which is how the trainer always evaluates it.
Value loss_realism(Value map_refined);

/// Self-regularization: sum |psi(refined) - psi(synthetic)| over all entries.
Value loss_self_reg(Value refined, Value synthetic, FeatureTransform psi);

/// Full refiner objective: loss_realism + lambda * loss_self_reg.
Value loss_refiner(Value map_refined, Value refined, Value synthetic, float lambda,
                   FeatureTransform psi);

}  // namespace simref
