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

// On-disk model and dataset directories.
//
// Model directory:
//   manifest.json   {"format":"qfake-model","version":1,
//                    "input_shape":[...],
//                    "input_quant":{"spec":{...},"params":{...}} | null,
//                    "layers":[{"kind","params",
//                               "weight","bias"          (relative blob paths),
//                               "weight_quant":{"spec","params",
//                                               "adaround":{"v",...}|null},
//                               "act_quant":{"spec","params"}}, ...],
//                    "blocks":[[layer indices], ...],
//                    "block_info":[{"name","residual"}, ...]}
//   *.qtensor       one tensor container per weight, bias and logit tensor
//
// Blocks must list every layer exactly once, in order. Quantizer params are
// written as empty arrays while uncalibrated.
//
// Dataset directory:
//   index.json      {"count":N,"input_shape":[...],"target_shape":[...],
//                    "samples":[{"input":"input_0.qtensor",
//                                "target":"target_0.qtensor"}, ...]}
//   input_i / target_i tensor containers, each with a leading axis of 1.

#ifndef QF_MODEL_IO_H_
#define QF_MODEL_IO_H_

#include <filesystem>

#include "json.hpp"
#include "qf/netgraph.h"

namespace qf {

nlohmann::json ModelManifest(const Model& model);

// Writes the manifest and blobs. Existing files with the same names are
// overwritten.
void SaveModel(const Model& model, const std::filesystem::path& dir);
// Throws Io, CorruptContainer or InvalidSpec.
Model LoadModel(const std::filesystem::path& dir);

struct Dataset {
  Tensor inputs;   // [N, ...]
  Tensor targets;  // [N, ...]
};

void SaveDataset(const Dataset& data, const std::filesystem::path& dir);
// Throws Io, CorruptContainer, InvalidSpec or EmptyDataset.
Dataset LoadDataset(const std::filesystem::path& dir);

// Throws ArchitectureMismatch unless both models have the same input shape,
// block partition and layer geometry.
void RequireSameArchitecture(const Model& a, const Model& b);

}  // namespace qf

#endif  // QF_MODEL_IO_H_
