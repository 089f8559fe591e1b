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

#include "qf/toy.h"

#include <cmath>

#include "qf/error.h"
#include "qf/rng.h"

namespace qf {
namespace {

[[noreturn]] void Bad(const std::string& why) {
  throw Error(ErrorCode::kInvalidSpec, "toy spec: " + why);
}

void InitParams(Layer& layer, double slope, Rng& rng) {
  if (!layer.has_weight()) return;
  const Shape ws = layer.WeightShape();
  const double fan_in = static_cast<double>(ShapeNumel(ws) / ws[0]);
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  layer.weight = rng.NormalTensor(ws, gain / std::sqrt(fan_in));
  layer.bias = rng.NormalTensor({ws[0]}, 0.1);
}

BlockGraph MakeBlock(std::string name, std::vector<Layer> layers, bool residual = false) {
  BlockGraph b;
  b.name = std::move(name);
  b.layers = std::move(layers);
  b.residual = residual;
  return b;
}

Model PlainMlp(const ToySpec& s) {
  Model m;
  m.input_shape = {s.width};
  for (std::size_t i = 0; i < s.depth; ++i) {
    m.blocks.push_back(MakeBlock("fc" + std::to_string(i),
                                 {Layer::Linear(s.width, s.width), Layer::LeakyRelu(s.slope)}));
  }
  m.blocks.push_back(MakeBlock("head", {Layer::Linear(s.width, s.width)}));
  return m;
}

Model StyledIsh(const ToySpec& s) {
  std::size_t stages = 0;
  for (std::size_t r = 4; r < s.image; r *= 2) ++stages;
  if (4u << stages != s.image) Bad("styled-ish image must be 4 * 2^k");
  Model m;
  m.input_shape = {s.latent};
  for (std::size_t i = 0; i < s.depth; ++i) {
    const std::size_t in = i == 0 ? s.latent : s.width;
    m.blocks.push_back(MakeBlock("map" + std::to_string(i),
                                 {Layer::Linear(in, s.width), Layer::LeakyRelu(s.slope)}));
  }
  const std::size_t c = s.channels;
  m.blocks.push_back(MakeBlock("const", {Layer::Linear(s.width, c * 16), Layer::Reshape({c, 4, 4}),
                                         Layer::LeakyRelu(s.slope)}));
  for (std::size_t i = 0; i < stages; ++i) {
    m.blocks.push_back(MakeBlock("synth" + std::to_string(i),
                                 {Layer::Upsample(2), Layer::Conv2d(c, c, 3, 1, 1),
                                  Layer::LeakyRelu(s.slope)}));
  }
  m.blocks.push_back(MakeBlock("to_rgb", {Layer::Conv2d(c, 3, 1, 1, 0)}));
  return m;
}

Model ResnetIsh(const ToySpec& s) {
  const std::size_t c = s.channels;
  Model m;
  m.input_shape = {3, s.image, s.image};
  m.blocks.push_back(MakeBlock("stem", {Layer::Conv2d(3, c, 3, 1, 1), Layer::LeakyRelu(s.slope)}));
  for (std::size_t i = 0; i < s.depth; ++i) {
    m.blocks.push_back(MakeBlock("res" + std::to_string(i),
                                 {Layer::Conv2d(c, c, 3, 1, 1), Layer::LeakyRelu(s.slope),
                                  Layer::Conv2d(c, c, 3, 1, 1)},
                                 true));
  }
  m.blocks.push_back(MakeBlock("head", {Layer::Conv2d(c, 3, 1, 1, 0)}));
  return m;
}

}  // namespace

void ToySpec::Validate() const {
  if (preset != "plain-mlp" && preset != "styled-ish" && preset != "resnet-ish") {
    Bad("unknown preset '" + preset + "'");
  }
  if (depth == 0) Bad("depth must be positive");
  if (width == 0 || channels == 0 || latent == 0 || image == 0) Bad("sizes must be positive");
  if (samples == 0) Bad("samples must be positive");
  if (latent_dof < 0) Bad("latent_dof must be >= 0");
  if (!(slope >= 0.0 && slope < 1.0)) Bad("slope must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ToySpec& s) {
  j = {{"preset", s.preset},   {"depth", s.depth},     {"width", s.width},
       {"channels", s.channels}, {"latent", s.latent}, {"image", s.image},
       {"samples", s.samples}, {"latent_dof", s.latent_dof}, {"slope", s.slope}};
}

void from_json(const nlohmann::json& j, ToySpec& s) {
  ToySpec d;
  s.preset = j.value("preset", d.preset);
  s.depth = j.value("depth", d.depth);
  s.width = j.value("width", d.width);
  s.channels = j.value("channels", d.channels);
  s.latent = j.value("latent", d.latent);
  s.image = j.value("image", d.image);
  s.samples = j.value("samples", d.samples);
  s.latent_dof = j.value("latent_dof", d.latent_dof);
  s.slope = j.value("slope", d.slope);
}

Model MakeToyModel(const ToySpec& spec, std::uint64_t seed) {
  spec.Validate();
  Model m = spec.preset == "plain-mlp"    ? PlainMlp(spec)
            : spec.preset == "styled-ish" ? StyledIsh(spec)
                                          : ResnetIsh(spec);
  Rng rng(seed);
  for (BlockGraph& b : m.blocks) {
    for (Layer& l : b.layers) InitParams(l, spec.slope, rng);
  }
  ValidateModel(m);
  return m;
}

ToyBundle MakeToy(const ToySpec& spec, std::uint64_t seed) {
  ToyBundle t;
  t.model = MakeToyModel(spec, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  Shape shape{spec.samples};
  shape.insert(shape.end(), t.model.input_shape.begin(), t.model.input_shape.end());
  Tensor x(shape);
  for (double& v : x.data()) v = spec.latent_dof > 0 ? rng.StudentT(spec.latent_dof) : rng.Normal();
  t.data.targets = ForwardFullPrecision(t.model, x);
  t.data.inputs = std::move(x);
  return t;
}

}  // namespace qf
