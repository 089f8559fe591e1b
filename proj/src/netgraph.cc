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

#include "qf/netgraph.h"

#include <utility>

#include "qf/error.h"

namespace qf {

std::string_view LayerKindName(LayerKind kind) {
  switch (kind) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kReshape: return "reshape";
  }
  return "unknown";
}

Layer Layer::Linear(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::kLinear;
  l.in_features = in;
  l.out_features = out;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::Conv2d(std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::size_t padding) {
  Layer l;
  l.kind = LayerKind::kConv2d;
  l.in_channels = cin;
  l.out_channels = cout;
  l.kernel = k;
  l.stride = stride;
  l.padding = padding;
  l.weight = Tensor({cout, cin, k, k});
  l.bias = Tensor({cout});
  return l;
}

Layer Layer::LeakyRelu(double slope) {
  Layer l;
  l.kind = LayerKind::kLeakyRelu;
  l.slope = slope;
  return l;
}

Layer Layer::Upsample(std::size_t factor) {
  Layer l;
  l.kind = LayerKind::kUpsample;
  l.factor = factor;
  return l;
}

Layer Layer::Reshape(Shape target) {
  Layer l;
  l.kind = LayerKind::kReshape;
  l.target = std::move(target);
  return l;
}

Shape Layer::WeightShape() const {
  switch (kind) {
    case LayerKind::kLinear: return {out_features, in_features};
    case LayerKind::kConv2d: return {out_channels, in_channels, kernel, kernel};
    default: return {};
  }
}

Shape Layer::OutputShape(const Shape& in) const {
  auto mismatch = [&](const std::string& why) {
    return Error(ErrorCode::kShapeMismatch,
                 std::string(LayerKindName(kind)) + " layer: " + why +
                     " (input " + ShapeToString(in) + ")");
  };
  switch (kind) {
    case LayerKind::kLinear:
      if (in.size() != 1 || in[0] != in_features) throw mismatch("expects [in]");
      return {out_features};
    case LayerKind::kConv2d: {
      if (in.size() != 3 || in[0] != in_channels) throw mismatch("expects [C,H,W]");
      if (stride == 0) throw mismatch("zero stride");
      if (kernel > in[1] + 2 * padding || kernel > in[2] + 2 * padding) {
        throw mismatch("kernel larger than padded input");
      }
      return {out_channels, (in[1] + 2 * padding - kernel) / stride + 1,
              (in[2] + 2 * padding - kernel) / stride + 1};
    }
    case LayerKind::kLeakyRelu:
      return in;
    case LayerKind::kUpsample:
      if (in.size() != 3) throw mismatch("expects [C,H,W]");
      if (factor == 0) throw mismatch("zero factor");
      return {in[0], in[1] * factor, in[2] * factor};
    case LayerKind::kReshape:
      if (target.empty() || ShapeNumel(target) != ShapeNumel(in)) {
        throw mismatch("reshape to " + ShapeToString(target));
      }
      return target;
  }
  return in;
}

std::size_t Model::LayerCount() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.layers.size();
  return n;
}

Shape ValidateBlock(const BlockGraph& block, const Shape& sample_in) {
  if (block.layers.empty()) {
    throw Error(ErrorCode::kInvalidSpec, "block '" + block.name + "' has no layers");
  }
  Shape shape = sample_in;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const Layer& layer = block.layers[i];
    const std::string where = "block '" + block.name + "' layer " + std::to_string(i);
    if (layer.has_weight() != layer.weight.has_value()) {
      throw Error(ErrorCode::kInvalidSpec, where + ": weight presence mismatch");
    }
    if (layer.has_weight()) {
      if (layer.weight->shape() != layer.WeightShape()) {
        throw Error(ErrorCode::kShapeMismatch,
                    where + ": weight shape " + ShapeToString(layer.weight->shape()));
      }
      if (layer.bias && layer.bias->shape() != Shape{layer.WeightShape()[0]}) {
        throw Error(ErrorCode::kShapeMismatch, where + ": bias shape");
      }
    } else if (layer.bias || layer.weight_quant) {
      throw Error(ErrorCode::kInvalidSpec, where + ": parameters on a weightless layer");
    }
    if (layer.weight_quant) {
      const auto& wq = layer.weight_quant->spec;
      wq.Validate();
      if (wq.granularity == Granularity::kPerChannel && wq.axis != 0) {
        throw Error(ErrorCode::kInvalidSpec, where + ": per-channel axis must be 0");
      }
      if (layer.weight_quant->adaround &&
          layer.weight_quant->adaround->v.shape() != layer.weight->shape()) {
        throw Error(ErrorCode::kShapeMismatch, where + ": adaround logits shape");
      }
    }
    shape = layer.OutputShape(shape);
  }
  if (block.residual && shape != sample_in) {
    throw Error(ErrorCode::kShapeMismatch,
                "residual block '" + block.name + "' changes shape");
  }
  return shape;
}

Shape ValidateModel(const Model& model) {
  if (model.input_shape.empty()) {
    throw Error(ErrorCode::kInvalidSpec, "model input shape is empty");
  }
  Shape shape = model.input_shape;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    if (b > 0 && model.blocks[b].input_quant) {
      throw Error(ErrorCode::kInvalidSpec, "input quantizer only allowed on block 0");
    }
    shape = ValidateBlock(model.blocks[b], shape);
  }
  return shape;
}

bool HasQuantizers(const BlockGraph& block) {
  if (block.input_quant) return true;
  for (const auto& l : block.layers)
    if (l.weight_quant || l.act_quant) return true;
  return false;
}

bool HasQuantizers(const Model& model) {
  for (const auto& b : model.blocks)
    if (HasQuantizers(b)) return true;
  return false;
}

Model AttachQuantizers(Model model, const QuantizerSpec& weight_spec,
                       const QuantizerSpec& act_spec, AttachOptions options) {
  if (HasQuantizers(model)) {
    throw Error(ErrorCode::kAlreadyQuantized, "model already carries quantizers");
  }
  weight_spec.Validate();
  act_spec.Validate();
  if (act_spec.granularity != Granularity::kPerTensor) {
    throw Error(ErrorCode::kInvalidParams, "activations are quantized per tensor");
  }
  QuantizerSpec wspec = weight_spec;
  if (wspec.granularity == Granularity::kPerChannel) wspec.axis = 0;

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockGraph& block = model.blocks[b];
    const bool last_block = b + 1 == model.blocks.size();
    for (std::size_t i = 0; i < block.layers.size(); ++i) {
      Layer& layer = block.layers[i];
      if (layer.has_weight()) layer.weight_quant = WeightQuantNode{wspec, {}, {}};
      const bool block_output = i + 1 == block.layers.size();
      const bool wants_act = layer.kind == LayerKind::kLeakyRelu ||
                             (block_output && (!last_block || options.quantize_output));
      if (wants_act) layer.act_quant = QuantNode{act_spec, {}};
    }
  }
  if (options.quantize_input && !model.blocks.empty()) {
    model.blocks[0].input_quant = QuantNode{act_spec, {}};
  }
  return model;
}

Model StripQuantizers(Model model) {
  for (auto& block : model.blocks) {
    block.input_quant.reset();
    for (auto& layer : block.layers) {
      layer.weight_quant.reset();
      layer.act_quant.reset();
    }
  }
  return model;
}

namespace {

void RequireCalibrated(const QuantParams& params, const std::string& where) {
  if (!params.initialized()) {
    throw Error(ErrorCode::kInvalidParams, "uncalibrated quantizer at " + where);
  }
}

std::string LayerWhere(const BlockGraph& block, std::size_t i) {
  return block.name + ".layer" + std::to_string(i);
}

bool UsesAdaRound(const WeightQuantNode& wq) {
  return wq.spec.estimator == Estimator::kAdaRound && wq.adaround.has_value();
}

Tensor EffectiveWeight(const Layer& layer, const ForwardOptions& options,
                       const std::string& where) {
  if (!options.quantize || !layer.weight_quant) return *layer.weight;
  const WeightQuantNode& wq = *layer.weight_quant;
  RequireCalibrated(wq.params, where + ".weight");
  if (UsesAdaRound(wq)) {
    return QuantizeWeightAdaRound(*layer.weight, wq.spec, wq.params, *wq.adaround,
                                  options.hard_rounding);
  }
  return FakeQuant(*layer.weight, wq.spec, wq.params);
}

Tensor Nearest(const Tensor& x, std::size_t f) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, h * f, w * f});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h * f; ++y)
      for (std::size_t xx = 0; xx < w * f; ++xx)
        out[(p * h * f + y) * w * f + xx] = x[(p * h + y / f) * w + xx / f];
  return out;
}

Tensor NearestBackward(const Tensor& g, const Shape& in_shape, std::size_t f) {
  Tensor out(in_shape);
  const std::size_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h * f; ++y)
      for (std::size_t xx = 0; xx < w * f; ++xx)
        out[(p * h + y / f) * w + xx / f] += g[(p * h * f + y) * w * f + xx];
  return out;
}

Shape WithBatch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Shape SampleShape(const Tensor& x) {
  return Shape(x.shape().begin() + 1, x.shape().end());
}

Tensor ApplyLayer(const Layer& layer, const Tensor& x, const Tensor& weight) {
  const std::size_t batch = x.dim(0);
  const Shape out_shape = WithBatch(batch, layer.OutputShape(SampleShape(x)));
  switch (layer.kind) {
    case LayerKind::kLinear: {
      Tensor y = Matmul(x, Transpose2d(weight));
      if (layer.bias) {
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < layer.out_features; ++o)
            y[n * layer.out_features + o] += (*layer.bias)[o];
      }
      return y;
    }
    case LayerKind::kConv2d: {
      Tensor y = Conv2d(x, weight, {layer.stride, layer.padding});
      if (layer.bias) {
        const std::size_t plane = y.dim(2) * y.dim(3);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < layer.out_channels; ++c)
            for (std::size_t p = 0; p < plane; ++p)
              y[(n * layer.out_channels + c) * plane + p] += (*layer.bias)[c];
      }
      return y;
    }
    case LayerKind::kLeakyRelu:
      return LeakyRelu(x, layer.slope);
    case LayerKind::kUpsample:
      return Nearest(x, layer.factor);
    case LayerKind::kReshape:
      return x.Reshaped(out_shape);
  }
  return x;
}

Tensor ApplyQuant(const std::optional<QuantNode>& node, const Tensor& x,
                  const ForwardOptions& options, const std::string& where) {
  if (!options.quantize || !node) return x;
  RequireCalibrated(node->params, where);
  return FakeQuant(x, node->spec, node->params);
}

// Returns the gradient with respect to the quantizer input and fills the
// parameter gradients for LSQ nodes.
Tensor QuantBackward(const QuantizerSpec& spec, const QuantParams& params,
                     const Tensor& x, const Tensor& grad,
                     std::optional<QuantGrads>& param_grads) {
  if (spec.estimator == Estimator::kLsq) {
    LsqGrads g = BackwardLsq(grad, x, spec, params);
    param_grads = QuantGrads{std::move(g.grad_delta), std::move(g.grad_zero)};
    return std::move(g.grad_x);
  }
  return BackwardSte(grad, x, spec, params);
}

}  // namespace

BlockForward Forward(const BlockGraph& block, const Tensor& input,
                     const ForwardOptions& options, bool record) {
  if (input.rank() < 2) {
    throw Error(ErrorCode::kShapeMismatch, "block input needs a batch axis");
  }
  ValidateBlock(block, SampleShape(input));
  BlockTrace trace;
  trace.options = options;
  Tensor x = ApplyQuant(block.input_quant, input, options, block.name + ".input");
  if (record) {
    trace.raw_input = input;
    trace.input = x;
  }
  const Tensor block_input = x;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const Layer& layer = block.layers[i];
    const std::string where = LayerWhere(block, i);
    Tensor weight = layer.has_weight() ? EffectiveWeight(layer, options, where) : Tensor();
    Tensor y = ApplyLayer(layer, x, weight);
    if (block.residual && i + 1 == block.layers.size()) y = Add(y, block_input);
    Tensor out = ApplyQuant(layer.act_quant, y, options, where + ".act");
    if (record) {
      trace.layers.push_back(LayerTrace{std::move(x), std::move(weight), std::move(y)});
    }
    x = std::move(out);
  }
  x.CheckFinite("block forward");
  BlockForward result;
  if (record) {
    trace.output = x;
    result.trace = std::move(trace);
  }
  result.output = std::move(x);
  return result;
}

ModelForward Forward(const Model& model, const Tensor& input,
                     const ForwardOptions& options, bool record) {
  if (input.rank() < 2 || SampleShape(input) != model.input_shape) {
    throw Error(ErrorCode::kShapeMismatch,
                "model input " + ShapeToString(input.shape()) + " expected [N]+" +
                    ShapeToString(model.input_shape));
  }
  ModelForward result;
  Tensor x = input;
  for (const auto& block : model.blocks) {
    BlockForward bf = Forward(block, x, options, record);
    if (record) result.traces.push_back(std::move(*bf.trace));
    x = std::move(bf.output);
  }
  result.output = std::move(x);
  return result;
}

Tensor ForwardFullPrecision(const Model& model, const Tensor& input) {
  return Forward(model, input, ForwardOptions{.quantize = false}).output;
}

BlockGrads Backward(const BlockGraph& block, const BlockTrace& trace,
                    const Tensor& grad_out) {
  if (trace.layers.size() != block.layers.size() || trace.raw_input.empty()) {
    throw Error(ErrorCode::kMissingTrace,
                "no recorded forward pass for block '" + block.name + "'");
  }
  if (grad_out.shape() != trace.output.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "backward: gradient shape " +
                                               ShapeToString(grad_out.shape()));
  }
  const bool quantize = trace.options.quantize;
  BlockGrads grads;
  grads.layers.resize(block.layers.size());
  Tensor g = grad_out;
  std::optional<Tensor> residual_grad;

  for (std::size_t idx = block.layers.size(); idx-- > 0;) {
    const Layer& layer = block.layers[idx];
    const LayerTrace& lt = trace.layers[idx];
    LayerGrads& lg = grads.layers[idx];

    if (quantize && layer.act_quant) {
      g = QuantBackward(layer.act_quant->spec, layer.act_quant->params, lt.pre_quant,
                        g, lg.act_quant);
    }
    if (block.residual && idx + 1 == block.layers.size()) residual_grad = g;

    switch (layer.kind) {
      case LayerKind::kLinear: {
        Tensor grad_w = Matmul(Transpose2d(g), lt.input);
        if (layer.bias) {
          Tensor gb({layer.out_features});
          for (std::size_t n = 0; n < g.dim(0); ++n)
            for (std::size_t o = 0; o < layer.out_features; ++o)
              gb[o] += g[n * layer.out_features + o];
          lg.bias = std::move(gb);
        }
        g = Matmul(g, lt.weight);
        lg.weight = std::move(grad_w);
        break;
      }
      case LayerKind::kConv2d: {
        const Conv2dGeometry geom{layer.stride, layer.padding};
        Tensor grad_w = Conv2dBackwardWeight(g, lt.input, lt.weight.shape(), geom);
        if (layer.bias) {
          Tensor gb({layer.out_channels});
          const std::size_t plane = g.dim(2) * g.dim(3);
          for (std::size_t n = 0; n < g.dim(0); ++n)
            for (std::size_t c = 0; c < layer.out_channels; ++c)
              for (std::size_t p = 0; p < plane; ++p)
                gb[c] += g[(n * layer.out_channels + c) * plane + p];
          lg.bias = std::move(gb);
        }
        g = Conv2dBackwardInput(g, lt.weight, lt.input.shape(), geom);
        lg.weight = std::move(grad_w);
        break;
      }
      case LayerKind::kLeakyRelu: {
        Tensor gi(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
          gi[i] = lt.input[i] > 0.0 ? g[i] : layer.slope * g[i];
        g = std::move(gi);
        break;
      }
      case LayerKind::kUpsample:
        g = NearestBackward(g, lt.input.shape(), layer.factor);
        break;
      case LayerKind::kReshape:
        g = g.Reshaped(lt.input.shape());
        break;
    }

    // Map the gradient of the effective weight back onto the stored weight.
    if (layer.has_weight() && quantize && layer.weight_quant) {
      const WeightQuantNode& wq = *layer.weight_quant;
      if (UsesAdaRound(wq)) {
        lg.v = BackwardAdaRound(*lg.weight, *layer.weight, wq.spec, wq.params,
                                *wq.adaround);
        lg.weight.reset();
      } else {
        lg.weight = QuantBackward(wq.spec, wq.params, *layer.weight, *lg.weight,
                                  lg.weight_quant);
      }
    }
  }

  if (residual_grad) g = Add(g, *residual_grad);
  if (quantize && block.input_quant) {
    g = QuantBackward(block.input_quant->spec, block.input_quant->params,
                      trace.raw_input, g, grads.input_quant);
  }
  grads.input = std::move(g);
  return grads;
}

std::vector<BlockGrads> Backward(const Model& model,
                                 const std::vector<BlockTrace>& traces,
                                 const Tensor& grad_out) {
  if (traces.size() != model.blocks.size()) {
    throw Error(ErrorCode::kMissingTrace, "model trace does not cover every block");
  }
  std::vector<BlockGrads> grads(model.blocks.size());
  Tensor g = grad_out;
  for (std::size_t b = model.blocks.size(); b-- > 0;) {
    grads[b] = Backward(model.blocks[b], traces[b], g);
    g = grads[b].input;
  }
  return grads;
}

}  // namespace qf
