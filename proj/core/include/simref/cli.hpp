#pragma once

#include <string>
#include <vector>

namespace simref {

/// Command-line entry point. Subcommands: gen-data, pretrain, train, refine,
/// eval, drift, grad-check, export-study, sweep-lambda. Options come from a
/// flat JSON config file (--config) plus flags; flags win on conflict.
/// Returns 0 on success, 1 on validation/usage errors, 2 on numerical aborts.
int run_cli(const std::vector<std::string>& args);

}  // namespace simref
