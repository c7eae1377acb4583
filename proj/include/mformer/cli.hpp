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

#pragma once

// Command-line front end. `run` never exits the process; tools/main.cpp
// prints the report and returns the exit code.
//
//   summarize <spec|builtin> [--res N] [--format text|records]
//   verify-costs [--variant NAME|all] [--tol 0.05]
//   ablate --base NAME [--tokens N] [--token-dim D] [--no-ffn] [--kernel K]
//          [--no-former] [--static-relu] [--tol 0.05]
//   gradcheck [--tiny] [--spec NAME] [--seed S] [--samples N] [--tol 1e-4]
//   train-toy [--spec NAME] [--steps N] [--seed S] [--classes C] [--out PATH]
//   export-attention --spec NAME --seed S [--out PATH]
//
// Files go to --out, else to $MFORMER_OUT_DIR when set.

#include <optional>
#include <string>
#include <vector>

namespace mformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

struct CommandResult {
  int exit_code = kExitOk;
  std::string report;
  std::optional<std::string> output_path;
};

/// `args` excludes the program name.
CommandResult run(const std::vector<std::string>& args);

}  // namespace mformer::cli
