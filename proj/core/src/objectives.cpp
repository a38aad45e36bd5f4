#include "simref/objectives.hpp"

#include "simref/errors.hpp"

namespace simref {

const char* to_string(FeatureTransform t) {
  switch (t) {
    case FeatureTransform::identity: return "identity";
    case FeatureTransform::channel_mean: return "channel_mean";
    case FeatureTransform::derivatives: return "derivatives";
  }
  return "?";
}

FeatureTransform feature_transform_from_string(const std::string& s) {
  if (s == "identity") return FeatureTransform::identity;
  if (s == "channel_mean") return FeatureTransform::channel_mean;
  if (s == "derivatives") return FeatureTransform::derivatives;
  throw ConfigError("unknown feature transform: " + s);
}

Value apply_feature_transform(Value x, FeatureTransform psi) {
  switch (psi) {
    case FeatureTransform::identity: return x;
    case FeatureTransform::channel_mean: return avg_channel(x);
    case FeatureTransform::derivatives: return spatial_diff(x);
  }
  throw ConfigError("unknown feature transform");
}

static void check_patch_map(const Value& m, const char* what) {
  const Shape& s = m.shape();
  if (s.size() != 4 || s[1] != 2) {
    throw ShapeError(std::string(what) + ": expected a [N,2,w,h] patch map, got " + shape_str(s));
  }
}

Value loss_discriminator(Value map_refined, Value map_real) {
  check_patch_map(map_refined, "loss_discriminator");
  check_patch_map(map_real, "loss_discriminator");
  const Shape& a = map_refined.shape();
  const Shape& b = map_real.shape();
  if (a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("loss_discriminator: patch grids differ, " + shape_str(a) + " vs " +
                     shape_str(b));
  }
  Value fake_term = sum(log(take_channel(map_refined, 0)));  // log P_fake(refined)
  Value real_term = sum(log(take_channel(map_real, 1)));     // log (1 - P_fake(real))
  return scale(add(fake_term, real_term), -1.0f);
}

Value loss_realism(Value map_refined) {
  check_patch_map(map_refined, "loss_realism");
  return scale(sum(log(take_channel(map_refined, 1))), -1.0f);
}

Value loss_self_reg(Value refined, Value synthetic, FeatureTransform psi) {
  Value a = apply_feature_transform(refined, psi);
  Value b = apply_feature_transform(synthetic, psi);
  return l1_diff(a, b);
}

Value loss_refiner(Value map_refined, Value refined, Value synthetic, float lambda,
                   FeatureTransform psi) {
  if (lambda < 0.0f) throw ConfigError("loss_refiner: lambda must be >= 0");
  Value realism = loss_realism(map_refined);
  Value reg = loss_self_reg(refined, synthetic, psi);
  return add(realism, scale(reg, lambda));
}

}  // namespace simref
