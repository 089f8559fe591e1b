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

#include "qf/model_io.h"

#include <string>

#include "qf/error.h"
#include "qf/tensor_io.h"

namespace qf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kFormat = "qfake-model";
constexpr int kVersion = 1;

[[noreturn]] void Bad(const std::string& why) {
  throw Error(ErrorCode::kInvalidSpec, "model manifest: " + why);
}

LayerKind KindFromName(const std::string& name) {
  for (LayerKind k : {LayerKind::kLinear, LayerKind::kConv2d, LayerKind::kLeakyRelu,
                      LayerKind::kUpsample, LayerKind::kReshape}) {
    if (LayerKindName(k) == name) return k;
  }
  Bad("unknown layer kind '" + name + "'");
}

json LayerParams(const Layer& l) {
  switch (l.kind) {
    case LayerKind::kLinear: return {{"in", l.in_features}, {"out", l.out_features}};
    case LayerKind::kConv2d:
      return {{"cin", l.in_channels}, {"cout", l.out_channels}, {"kernel", l.kernel},
              {"stride", l.stride}, {"padding", l.padding}};
    case LayerKind::kLeakyRelu: return {{"slope", l.slope}};
    case LayerKind::kUpsample: return {{"factor", l.factor}};
    case LayerKind::kReshape: return {{"target", l.target}};
  }
  return json::object();
}

Layer LayerFromParams(LayerKind kind, const json& p) {
  switch (kind) {
    case LayerKind::kLinear:
      return Layer::Linear(p.at("in").get<std::size_t>(), p.at("out").get<std::size_t>());
    case LayerKind::kConv2d:
      return Layer::Conv2d(p.at("cin").get<std::size_t>(), p.at("cout").get<std::size_t>(),
                           p.at("kernel").get<std::size_t>(), p.at("stride").get<std::size_t>(),
                           p.at("padding").get<std::size_t>());
    case LayerKind::kLeakyRelu: return Layer::LeakyRelu(p.at("slope").get<double>());
    case LayerKind::kUpsample: return Layer::Upsample(p.at("factor").get<std::size_t>());
    case LayerKind::kReshape: return Layer::Reshape(p.at("target").get<Shape>());
  }
  Bad("unreachable layer kind");
}

json QuantJson(const QuantizerSpec& spec, const QuantParams& params) {
  return {{"spec", spec}, {"params", params}};
}

QuantParams ParamsFromJson(const json& j) {
  QuantParams p = j.get<QuantParams>();
  return p;
}

std::string BlobName(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what + ".qtensor";
}

}  // namespace

json ModelManifest(const Model& model) {
  json layers = json::array();
  json blocks = json::array();
  json info = json::array();
  std::size_t index = 0;
  json input_quant = nullptr;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const BlockGraph& block = model.blocks[b];
    if (block.input_quant) input_quant = QuantJson(block.input_quant->spec, block.input_quant->params);
    json members = json::array();
    for (const Layer& l : block.layers) {
      json lj = {{"kind", std::string(LayerKindName(l.kind))}, {"params", LayerParams(l)}};
      lj["weight"] = l.weight ? json(BlobName(index, "weight")) : json(nullptr);
      lj["bias"] = l.bias ? json(BlobName(index, "bias")) : json(nullptr);
      if (l.weight_quant) {
        json wq = QuantJson(l.weight_quant->spec, l.weight_quant->params);
        if (l.weight_quant->adaround) {
          const AdaRoundState& a = *l.weight_quant->adaround;
          wq["adaround"] = {{"v", BlobName(index, "v")},     {"zeta", a.zeta},
                            {"gamma", a.gamma},              {"beta_start", a.beta_start},
                            {"beta_end", a.beta_end},        {"lambda", a.lambda_reg}};
        } else {
          wq["adaround"] = nullptr;
        }
        lj["weight_quant"] = wq;
      } else {
        lj["weight_quant"] = nullptr;
      }
      lj["act_quant"] =
          l.act_quant ? QuantJson(l.act_quant->spec, l.act_quant->params) : json(nullptr);
      layers.push_back(std::move(lj));
      members.push_back(index++);
    }
    blocks.push_back(std::move(members));
    info.push_back({{"name", block.name}, {"residual", block.residual}});
  }
  return {{"format", kFormat},         {"version", kVersion}, {"input_shape", model.input_shape},
          {"input_quant", input_quant}, {"layers", layers},    {"blocks", blocks},
          {"block_info", info}};
}

void SaveModel(const Model& model, const fs::path& dir) {
  ValidateModel(model);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::size_t index = 0;
  for (const BlockGraph& block : model.blocks) {
    for (const Layer& l : block.layers) {
      if (l.weight) SaveTensor(dir / BlobName(index, "weight"), *l.weight);
      if (l.bias) SaveTensor(dir / BlobName(index, "bias"), *l.bias);
      if (l.weight_quant && l.weight_quant->adaround) {
        SaveTensor(dir / BlobName(index, "v"), l.weight_quant->adaround->v);
      }
      ++index;
    }
  }
  WriteFileBytes(dir / "manifest.json", ModelManifest(model).dump(2) + "\n");
}

Model LoadModel(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "no model directory " + dir.string());
  const std::string text = ReadFileBytes(dir / "manifest.json");
  Model model;
  try {
    const json m = json::parse(text);
    if (m.at("format") != kFormat) Bad("unexpected format");
    if (m.at("version") != kVersion) Bad("unsupported version");
    model.input_shape = m.at("input_shape").get<Shape>();
    const json& layers = m.at("layers");
    const json& blocks = m.at("blocks");
    const json& info = m.at("block_info");
    if (!layers.is_array() || !blocks.is_array() || !info.is_array() ||
        blocks.size() != info.size()) {
      Bad("layers, blocks and block_info must be arrays of matching length");
    }
    std::size_t expected = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      BlockGraph block;
      block.name = info[b].at("name").get<std::string>();
      block.residual = info[b].at("residual").get<bool>();
      for (const json& idx : blocks[b]) {
        const std::size_t i = idx.get<std::size_t>();
        if (i != expected || i >= layers.size()) Bad("blocks must list layers in order");
        ++expected;
        const json& lj = layers[i];
        Layer l = LayerFromParams(KindFromName(lj.at("kind").get<std::string>()), lj.at("params"));
        if (l.has_weight()) {
          if (lj.at("weight").is_null()) Bad("layer " + std::to_string(i) + " lacks a weight");
          l.weight = LoadTensor(dir / lj.at("weight").get<std::string>());
          if (lj.at("bias").is_null()) {
            l.bias.reset();
          } else {
            l.bias = LoadTensor(dir / lj.at("bias").get<std::string>());
          }
        } else if (!lj.at("weight").is_null() || !lj.at("bias").is_null()) {
          Bad("layer " + std::to_string(i) + " cannot carry parameters");
        }
        if (!lj.at("weight_quant").is_null()) {
          const json& wq = lj.at("weight_quant");
          WeightQuantNode node{wq.at("spec").get<QuantizerSpec>(), ParamsFromJson(wq.at("params")),
                               {}};
          if (!wq.at("adaround").is_null()) {
            const json& a = wq.at("adaround");
            AdaRoundState st;
            st.v = LoadTensor(dir / a.at("v").get<std::string>());
            st.zeta = a.at("zeta").get<double>();
            st.gamma = a.at("gamma").get<double>();
            st.beta_start = a.at("beta_start").get<double>();
            st.beta_end = a.at("beta_end").get<double>();
            st.lambda_reg = a.at("lambda").get<double>();
            node.adaround = std::move(st);
          }
          l.weight_quant = std::move(node);
        }
        if (!lj.at("act_quant").is_null()) {
          const json& aq = lj.at("act_quant");
          l.act_quant = QuantNode{aq.at("spec").get<QuantizerSpec>(), ParamsFromJson(aq.at("params"))};
        }
        block.layers.push_back(std::move(l));
      }
      model.blocks.push_back(std::move(block));
    }
    if (expected != layers.size()) Bad("layers not assigned to any block");
    if (!m.at("input_quant").is_null()) {
      if (model.blocks.empty()) Bad("input quantizer without blocks");
      const json& iq = m.at("input_quant");
      model.blocks[0].input_quant =
          QuantNode{iq.at("spec").get<QuantizerSpec>(), ParamsFromJson(iq.at("params"))};
    }
  } catch (const json::exception& e) {
    Bad(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidParams) Bad(e.what());
    throw;
  }
  ValidateModel(model);
  auto check = [](const QuantizerSpec& spec, const QuantParams& p, const Shape& shape,
                  const std::string& where) {
    if (!p.initialized()) return;
    try {
      ValidateParams(spec, p, shape);
    } catch (const Error& e) {
      Bad(where + ": " + e.what());
    }
  };
  for (const BlockGraph& block : model.blocks) {
    for (std::size_t i = 0; i < block.layers.size(); ++i) {
      const Layer& l = block.layers[i];
      if (l.weight_quant) {
        check(l.weight_quant->spec, l.weight_quant->params, l.weight->shape(),
              block.name + ".layer" + std::to_string(i) + ".weight");
      }
    }
  }
  return model;
}

void SaveDataset(const Dataset& data, const fs::path& dir) {
  if (data.inputs.empty() || data.targets.empty() || data.inputs.dim(0) != data.targets.dim(0)) {
    throw Error(ErrorCode::kEmptyDataset, "dataset needs matching, nonempty inputs and targets");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const std::size_t n = data.inputs.dim(0);
  json samples = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string in = "input_" + std::to_string(i) + ".qtensor";
    const std::string out = "target_" + std::to_string(i) + ".qtensor";
    SaveTensor(dir / in, Row(data.inputs, i));
    SaveTensor(dir / out, Row(data.targets, i));
    samples.push_back({{"input", in}, {"target", out}});
  }
  const Shape in_shape(data.inputs.shape().begin() + 1, data.inputs.shape().end());
  const Shape out_shape(data.targets.shape().begin() + 1, data.targets.shape().end());
  const json index = {{"count", n},
                      {"input_shape", in_shape},
                      {"target_shape", out_shape},
                      {"samples", samples}};
  WriteFileBytes(dir / "index.json", index.dump(2) + "\n");
}

Dataset LoadDataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "no dataset directory " + dir.string());
  std::vector<Tensor> ins, outs;
  try {
    const json index = json::parse(ReadFileBytes(dir / "index.json"));
    const std::size_t n = index.at("count").get<std::size_t>();
    const json& samples = index.at("samples");
    if (n == 0) throw Error(ErrorCode::kEmptyDataset, "dataset " + dir.string() + " is empty");
    if (samples.size() != n) {
      throw Error(ErrorCode::kInvalidSpec, "dataset index count does not match samples");
    }
    Shape in_shape{1}, out_shape{1};
    for (std::size_t e : index.at("input_shape").get<Shape>()) in_shape.push_back(e);
    for (std::size_t e : index.at("target_shape").get<Shape>()) out_shape.push_back(e);
    for (const json& s : samples) {
      ins.push_back(LoadTensor(dir / s.at("input").get<std::string>()));
      outs.push_back(LoadTensor(dir / s.at("target").get<std::string>()));
      if (ins.back().shape() != in_shape || outs.back().shape() != out_shape) {
        throw Error(ErrorCode::kInvalidSpec, "dataset sample shape differs from index");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidSpec, std::string("dataset index: ") + e.what());
  }
  return Dataset{ConcatRows(ins), ConcatRows(outs)};
}

void RequireSameArchitecture(const Model& a, const Model& b) {
  auto fail = [](const std::string& why) {
    throw Error(ErrorCode::kArchitectureMismatch, why);
  };
  if (a.input_shape != b.input_shape) fail("input shapes differ");
  if (a.blocks.size() != b.blocks.size()) fail("block counts differ");
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    const BlockGraph &x = a.blocks[i], &y = b.blocks[i];
    if (x.layers.size() != y.layers.size() || x.residual != y.residual) {
      fail("block " + std::to_string(i) + " differs");
    }
    for (std::size_t k = 0; k < x.layers.size(); ++k) {
      if (LayerParams(x.layers[k]) != LayerParams(y.layers[k]) ||
          x.layers[k].kind != y.layers[k].kind ||
          x.layers[k].bias.has_value() != y.layers[k].bias.has_value()) {
        fail("block " + std::to_string(i) + " layer " + std::to_string(k) + " differs");
      }
    }
  }
}

}  // namespace qf
