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

// Random-weight stand-in generators and their distillation datasets.
//
//   plain-mlp   [width] -> depth x (Linear + LeakyRelu) -> Linear -> [width]
//   styled-ish  [latent] -> depth x mapping (Linear + LeakyRelu)
//               -> Linear, Reshape [channels,4,4], LeakyRelu
//               -> synthesis (Upsample x2, Conv 3x3, LeakyRelu) until image
//               -> to_rgb Conv 1x1 -> [3,image,image]
//   resnet-ish  [3,image,image] -> stem Conv 3x3 + LeakyRelu
//               -> depth x residual (Conv, LeakyRelu, Conv)
//               -> head Conv 1x1 -> [3,image,image]
//
// Weights are N(0, gain^2 / fan_in) with the LeakyRelu gain; biases are
// N(0, 0.1^2). Inputs are standard normal, or Student-t when latent_dof > 0.
// Targets are the full-precision model outputs.

#ifndef QF_TOY_H_
#define QF_TOY_H_

#include <cstdint>
#include <string>

#include "json.hpp"
#include "qf/model_io.h"
#include "qf/netgraph.h"

namespace qf {

struct ToySpec {
  std::string preset = "styled-ish";
  std::size_t depth = 2;
  std::size_t width = 32;
  std::size_t channels = 8;
  std::size_t latent = 16;
  std::size_t image = 16;  // 4 * 2^k for styled-ish
  std::size_t samples = 256;
  int latent_dof = 0;
  double slope = 0.2;

  // Throws InvalidSpec.
  void Validate() const;
};

void to_json(nlohmann::json& j, const ToySpec& s);
void from_json(const nlohmann::json& j, ToySpec& s);

Model MakeToyModel(const ToySpec& spec, std::uint64_t seed);

struct ToyBundle {
  Model model;
  Dataset data;
};

// Model weights use `seed`; inputs use a stream derived from it.
ToyBundle MakeToy(const ToySpec& spec, std::uint64_t seed);

}  // namespace qf

#endif  // QF_TOY_H_
