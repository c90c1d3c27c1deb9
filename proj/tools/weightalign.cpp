// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

#include "wa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return wa::run_cli(args);
}
