#pragma once

#include <filesystem>

#include "simref/tensor.hpp"

namespace simref {

/// TNS1 container: magic "TNS1", u32-LE rank, rank u32-LE extents, then the
/// row-major float32-LE payload. Used for checkpoints, datasets and image
/// stacks.
void save_tns(const Tensor& t, const std::filesystem::path& path);

/// Loads a TNS1 file. Throws IoError on bad magic, bad shape, or truncation;
/// never returns a partially-filled tensor.
Tensor load_tns(const std::filesystem::path& path);

}  // namespace simref
