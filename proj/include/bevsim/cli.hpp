// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bevsim::cli {

inline constexpr const char* kSeedEnv = "BEVSIM_SEED";
inline constexpr const char* kLockFile = "config.lock.json";

// Runs one command line; args excludes the program name. Returns the process
// exit code: 0 on success, 1 on a failed run or audit, and CLI11's code for
// usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bevsim::cli
