#pragma once

#include <filesystem>

#include "simref/nets.hpp"

namespace simref {

/// Checkpoint directory layout: manifest.json (network kind, arch descriptor,
/// ordered tensor names and shapes) plus one TNS1 file per tensor. Round
/// trips are bit-exact.
void save_refiner(const Refiner& r, const std::filesystem::path& dir);
Refiner load_refiner(const std::filesystem::path& dir);

void save_discriminator(const Discriminator& d, const std::filesystem::path& dir);
Discriminator load_discriminator(const std::filesystem::path& dir);

}  // namespace simref
