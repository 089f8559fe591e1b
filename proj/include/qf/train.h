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

// Shared plumbing for the PTQ and QAT optimization loops.

#ifndef QF_TRAIN_H_
#define QF_TRAIN_H_

#include <cstddef>
#include <string>
#include <vector>

#include "qf/adam.h"
#include "qf/netgraph.h"
#include "qf/rng.h"

namespace qf {

struct ParamSelection {
  bool weights = false;
  bool biases = false;
  bool weight_quant = false;  // LSQ step sizes / zero points of weights
  bool act_quant = false;     // LSQ step sizes / zero points of activations
  bool adaround = false;      // rounding logits
};

struct LearningRates {
  double weights = 0.0;  // weights, biases and rounding logits
  double quant = 0.0;
};

inline constexpr double kMinDelta = 1e-8;

// Applies one Adam step to every selected parameter of the block that has a
// gradient. Step sizes are clamped to >= kMinDelta and zero points to the
// integer range afterwards. Returns the number of step-size clamp events.
std::size_t ApplyAdam(BlockGraph& block, const BlockGrads& grads, Adam& adam,
                      const std::string& prefix, const ParamSelection& select,
                      const LearningRates& lr);

// Squared Frobenius error per sample: sum((a - b)^2) / batch, and its
// gradient with respect to a.
struct Objective {
  double value = 0.0;
  Tensor grad;
};
Objective FrobeniusPerSample(const Tensor& prediction, const Tensor& target);

// Mini-batch index schedule: reshuffles every epoch, seeded.
class BatchSampler {
 public:
  BatchSampler(std::size_t size, std::size_t batch, std::uint64_t seed);
  std::vector<std::size_t> Next();
  std::size_t batches_per_epoch() const;

 private:
  void Reshuffle();

  std::size_t size_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace qf

#endif  // QF_TRAIN_H_
