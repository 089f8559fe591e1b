// Copyright 2026 The qfake Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command implementations behind tools/qf. Each command returns its report
// records; the caller prints them as JSON lines and adds wall-clock fields.

#ifndef QF_COMMANDS_H_
#define QF_COMMANDS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qf/error.h"

namespace qf {

struct CommandArgs {
  std::vector<std::filesystem::path> models;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
};

using Report = std::vector<nlohmann::json>;

// --config: toy spec JSON (optional). --preset overrides its preset.
// Writes <out>/model and <out>/data.
Report CmdGenToy(const CommandArgs& args);
// Attaches quantizers when the model has none, then calibrates.
Report CmdCalibrate(const CommandArgs& args);
// Calibrates first when the model is not calibrated.
Report CmdBrecq(const CommandArgs& args);
Report CmdQat(const CommandArgs& args);
// One model: outputs against the dataset targets. Two: against each other.
Report CmdEval(const CommandArgs& args);

// 0 success, 2 input error, 3 numerical failure.
int ExitCodeFor(ErrorCode code);

// FNV-1a 64 over the files of a directory (sorted by name) or a single file.
std::string HashPath(const std::filesystem::path& path);

// Peak is the range of the reference tensor. +inf at zero error.
double Psnr(double mse, double peak);

}  // namespace qf

#endif  // QF_COMMANDS_H_
