// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "bevsim/cli.hpp"

int main(int argc, char** argv) {
  return bevsim::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
