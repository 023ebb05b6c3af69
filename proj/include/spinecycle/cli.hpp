#pragma once

#include <string>
#include <vector>

#include "spinecycle/vertebra.hpp"

namespace spinecycle {

/// Runs the command-line interface on `args` (program name excluded). Returns 0 on success,
/// 2 when run-cycle finishes with an inconsistent spine, 1 on any error or bad usage.
int run_cli(const std::vector<std::string>& args);

/// Labels from "L1-L5", "T10,T11,T12,T13,L1" or a mix of both.
std::vector<VertebraLabel> parse_label_list(const std::string& text);

}  // namespace spinecycle
