#pragma once

#include <filesystem>

#include "simref/toyworld.hpp"

namespace simref {

/// On-disk dataset: manifest.json (count, role, seed, world-config echo),
/// images.tns stack [N,C,H,W], and annotations.csv for annotated roles only.
/// Real splits are stored without any annotation data.
struct Dataset {
  std::vector<AnnotatedImage> images;
  Role role = Role::synthetic;
  WorldConfig config;
  uint64_t seed = 0;
};

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace simref
