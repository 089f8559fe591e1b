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

// Layer graph with fake-quantization nodes.
//
// A Model is an ordered list of blocks and a block is an ordered list of
// layers. Every tensor flowing through the graph carries a leading batch
// axis. Quantization nodes sit in three places:
//
//   * weight_quant on Linear / Conv2d weights (per-channel groups run along
//     the output-channel axis 0),
//   * act_quant on a layer's output,
//   * input_quant on a block's input (used for the model input only).
//
// A residual block adds its (quantized) input to the output of its last
// layer before that layer's act_quant is applied.

#ifndef QF_NETGRAPH_H_
#define QF_NETGRAPH_H_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "qf/quant.h"
#include "qf/tensor.h"

namespace qf {

enum class LayerKind { kLinear, kConv2d, kLeakyRelu, kUpsample, kReshape };

std::string_view LayerKindName(LayerKind kind);

struct QuantNode {
  QuantizerSpec spec;
  QuantParams params;  // empty until calibrated
};

struct WeightQuantNode {
  QuantizerSpec spec;
  QuantParams params;
  std::optional<AdaRoundState> adaround;
};

struct Layer {
  LayerKind kind = LayerKind::kLinear;
  // Linear
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // Conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // LeakyRelu
  double slope = 0.2;
  // Upsample (nearest)
  std::size_t factor = 2;
  // Reshape: per-sample target shape
  Shape target;

  std::optional<Tensor> weight;
  std::optional<Tensor> bias;
  std::optional<WeightQuantNode> weight_quant;
  std::optional<QuantNode> act_quant;

  // Weight shape is [out, in]; bias [out].
  static Layer Linear(std::size_t in, std::size_t out);
  // Weight shape is [cout, cin, k, k]; bias [cout].
  static Layer Conv2d(std::size_t cin, std::size_t cout, std::size_t k,
                      std::size_t stride, std::size_t padding);
  static Layer LeakyRelu(double slope);
  static Layer Upsample(std::size_t factor);
  static Layer Reshape(Shape target);

  bool has_weight() const {
    return kind == LayerKind::kLinear || kind == LayerKind::kConv2d;
  }
  Shape WeightShape() const;
  // Per-sample output shape for a per-sample input shape.
  Shape OutputShape(const Shape& sample_in) const;
};

struct BlockGraph {
  std::string name;
  std::vector<Layer> layers;
  bool residual = false;
  std::optional<QuantNode> input_quant;
};

struct Model {
  Shape input_shape;  // per sample, without the batch axis
  std::vector<BlockGraph> blocks;

  std::size_t LayerCount() const;
};

// Checks weight presence, weight/bias shapes, and shape compatibility of
// every layer, block, and residual connection. Returns the per-sample output
// shape. Throws ShapeMismatch or InvalidSpec.
Shape ValidateModel(const Model& model);
Shape ValidateBlock(const BlockGraph& block, const Shape& sample_in);

bool HasQuantizers(const Model& model);
bool HasQuantizers(const BlockGraph& block);

struct AttachOptions {
  bool quantize_input = true;
  bool quantize_output = true;
};

// Adds weight quantizers to every Linear/Conv2d and activation quantizers
// after each nonlinearity and at every block output. Parameters stay empty
// until calibration. Throws AlreadyQuantized when any quantizer is present.
Model AttachQuantizers(Model model, const QuantizerSpec& weight_spec,
                       const QuantizerSpec& act_spec, AttachOptions options = {});

Model StripQuantizers(Model model);

struct ForwardOptions {
  bool quantize = true;
  // Evaluate AdaRound weights with binarized rounding.
  bool hard_rounding = false;
};

struct LayerTrace {
  Tensor input;       // what the layer consumed
  Tensor weight;      // effective (possibly quantized) weight
  Tensor pre_quant;   // layer output (plus residual) before act_quant
};

struct BlockTrace {
  Tensor raw_input;   // block input before input_quant
  Tensor input;       // block input after input_quant
  std::vector<LayerTrace> layers;
  Tensor output;
  ForwardOptions options;
};

struct BlockForward {
  Tensor output;
  std::optional<BlockTrace> trace;
};

BlockForward Forward(const BlockGraph& block, const Tensor& input,
                     const ForwardOptions& options = {}, bool record = false);

struct ModelForward {
  Tensor output;
  std::vector<BlockTrace> traces;  // filled when recording
};

ModelForward Forward(const Model& model, const Tensor& input,
                     const ForwardOptions& options = {}, bool record = false);

// Output of the model with every quantizer bypassed.
Tensor ForwardFullPrecision(const Model& model, const Tensor& input);

struct QuantGrads {
  std::vector<double> delta;
  std::vector<double> zero_point;
};

struct LayerGrads {
  std::optional<Tensor> weight;
  std::optional<Tensor> bias;
  std::optional<Tensor> v;
  std::optional<QuantGrads> weight_quant;
  std::optional<QuantGrads> act_quant;
};

struct BlockGrads {
  Tensor input;  // gradient with respect to the raw block input
  std::optional<QuantGrads> input_quant;
  std::vector<LayerGrads> layers;
};

// Reverse-mode gradients of a recorded forward pass. Quantizers are
// differentiated by their estimator: STE passes gradients to the input only,
// LSQ additionally yields step-size and zero-point gradients, and AdaRound
// weights yield gradients for the rounding logits (the weight itself gets
// none). Throws MissingTrace when the trace does not belong to the block.
BlockGrads Backward(const BlockGraph& block, const BlockTrace& trace,
                    const Tensor& grad_out);

std::vector<BlockGrads> Backward(const Model& model,
                                 const std::vector<BlockTrace>& traces,
                                 const Tensor& grad_out);

}  // namespace qf

#endif  // QF_NETGRAPH_H_
