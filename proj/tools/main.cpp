// Copyright 2026 The mformer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "mformer/cli.hpp"

int main(int argc, char** argv) {
  try {
    const auto result = mformer::cli::run(std::vector<std::string>(argv + 1, argv + argc));
    std::fputs(result.report.c_str(), result.exit_code == mformer::cli::kExitUsage ? stderr : stdout);
    return result.exit_code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mformer: %s\n", e.what());
    return 1;
  }
}
