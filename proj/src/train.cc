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

#include "qf/train.h"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "qf/error.h"

namespace qf {
namespace {

std::size_t UpdateQuant(const QuantizerSpec& spec, QuantParams& params,
                        const QuantGrads& grads, Adam& adam, const std::string& key,
                        double lr) {
  adam.Step(key + ".delta", params.delta, grads.delta, lr);
  std::size_t clamps = 0;
  for (double& d : params.delta) {
    if (!(d >= kMinDelta)) {
      d = kMinDelta;
      ++clamps;
    }
  }
  if (clamps) spdlog::warn("{}: clamped {} step size(s) to {}", key, clamps, kMinDelta);
  if (spec.mode == QuantMode::kAffine) {
    adam.Step(key + ".zero_point", params.zero_point, grads.zero_point, lr);
    for (double& z : params.zero_point) z = std::clamp(z, spec.t_min(), spec.t_max());
  }
  return clamps;
}

}  // namespace

std::size_t ApplyAdam(BlockGraph& block, const BlockGrads& grads, Adam& adam,
                      const std::string& prefix, const ParamSelection& select,
                      const LearningRates& lr) {
  std::size_t clamps = 0;
  if (select.act_quant && block.input_quant && grads.input_quant) {
    clamps += UpdateQuant(block.input_quant->spec, block.input_quant->params,
                          *grads.input_quant, adam, prefix + ".input", lr.quant);
  }
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    Layer& layer = block.layers[i];
    const LayerGrads& g = grads.layers.at(i);
    const std::string key = prefix + ".L" + std::to_string(i);
    if (select.weights && g.weight && layer.weight) {
      adam.Step(key + ".weight", layer.weight->data(), g.weight->data(), lr.weights);
    }
    if (select.biases && g.bias && layer.bias) {
      adam.Step(key + ".bias", layer.bias->data(), g.bias->data(), lr.weights);
    }
    if (select.adaround && g.v && layer.weight_quant && layer.weight_quant->adaround) {
      adam.Step(key + ".v", layer.weight_quant->adaround->v.data(), g.v->data(),
                lr.weights);
    }
    if (select.weight_quant && g.weight_quant && layer.weight_quant) {
      clamps += UpdateQuant(layer.weight_quant->spec, layer.weight_quant->params,
                            *g.weight_quant, adam, key + ".wq", lr.quant);
    }
    if (select.act_quant && g.act_quant && layer.act_quant) {
      clamps += UpdateQuant(layer.act_quant->spec, layer.act_quant->params,
                            *g.act_quant, adam, key + ".aq", lr.quant);
    }
  }
  return clamps;
}

Objective FrobeniusPerSample(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "objective: " + ShapeToString(prediction.shape()) + " vs " +
                    ShapeToString(target.shape()));
  }
  const double batch = static_cast<double>(prediction.dim(0));
  Objective obj{0.0, Tensor(prediction.shape())};
  for (std::size_t i = 0; i < prediction.numel(); ++i) {
    const double d = prediction[i] - target[i];
    obj.value += d * d;
    obj.grad[i] = 2.0 * d / batch;
  }
  obj.value /= batch;
  return obj;
}

BatchSampler::BatchSampler(std::size_t size, std::size_t batch, std::uint64_t seed)
    : size_(size), batch_(std::min(batch, size)), rng_(seed) {
  if (size == 0 || batch == 0) {
    throw Error(ErrorCode::kEmptyDataset, "batch sampler over empty data");
  }
  Reshuffle();
}

void BatchSampler::Reshuffle() {
  if (batch_ == size_) {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  } else {
    order_ = rng_.Permutation(size_);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::Next() {
  if (cursor_ + batch_ > size_) Reshuffle();
  std::vector<std::size_t> out(order_.begin() + cursor_,
                               order_.begin() + cursor_ + batch_);
  cursor_ += batch_;
  return out;
}

std::size_t BatchSampler::batches_per_epoch() const { return size_ / batch_; }

}  // namespace qf
