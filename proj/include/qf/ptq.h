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

// Post-training quantization: quantile calibration and block-wise
// reconstruction (STE and adaptive-rounding variants).

#ifndef QF_PTQ_H_
#define QF_PTQ_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qf/netgraph.h"
#include "qf/observer.h"

namespace qf {

enum class PtqVariant { kVanilla, kSte, kAdaRound };

struct PtqConfig {
  PtqVariant variant = PtqVariant::kSte;
  // Unset values resolve per variant: 2000 steps for STE, 20000 for
  // AdaRound; weight learning rate 1e-3 for STE, 1e-2 for AdaRound.
  std::optional<int> steps;
  int warmup_steps = 4000;
  std::size_t batch_size = 16;
  std::size_t sample_size = 896;
  std::optional<double> lr_weights;
  double lr_quant = 1e-5;
  // Activation calibration: [q_lo, q_hi] and moving-average momentum.
  std::array<double, 2> quantile_pair{0.0001, 0.9999};
  double momentum = 0.99;
  // Single-pass weight calibration quantiles.
  std::array<double, 2> weight_quantile_pair{0.0001, 0.9999};
  // Calibration samples, fed one at a time.
  std::size_t calibration_samples = 500;
  double lambda_reg = 0.01;
  // Hard-rounding objective is evaluated every eval_every steps and at the
  // last step for best-iterate selection.
  int eval_every = 50;
  std::uint64_t seed = 0;

  int ResolvedSteps() const;
  double ResolvedLrWeights() const;
  CalibrationConfig Calibration() const;
  // Throws InvalidConfig.
  void Validate() const;
};

void to_json(nlohmann::json& j, const PtqConfig& c);
void from_json(const nlohmann::json& j, PtqConfig& c);

// Calibrates every quantizer of a model with attached quantizers. Weights
// use one quantile observation per group; activations use moving-average
// quantiles of full-precision values, one input sample at a time. Throws
// NotObserved when inputs is empty.
Model VanillaPtq(Model model, const Tensor& inputs, const CalibrationConfig& calib);

struct BlockReport {
  std::string name;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int best_step = -1;  // -1 when the initial parameters were kept
  std::size_t delta_clamps = 0;
  // Mean |2h - 1| over all rounding logits of the last iterate (AdaRound).
  double final_binarization = 0.0;
  // (step, hard objective) at every evaluation.
  std::vector<std::pair<int, double>> curve;
};

// Minimizes the per-sample squared Frobenius error between the quantized
// block's output on `inputs` and `targets`, evaluated with hard rounding.
// The returned block is the best evaluated iterate, so its objective never
// exceeds the initial one. AdaRound logits are binarized at completion and
// the resulting grid weights are written back into the block. Estimators of
// the returned block are those of block_q.
// Throws InvalidConfig, DivergedLoss.
BlockGraph BrecqReconstructBlock(const BlockGraph& block_q, const Tensor& inputs,
                                 const Tensor& targets, const PtqConfig& config,
                                 BlockReport* report = nullptr);

// Hard-rounding objective of a block. Throws DivergedLoss when non-finite.
double BlockObjective(const BlockGraph& block, const Tensor& inputs, const Tensor& targets);

// Reconstructs blocks in order. Block i sees the full-precision model's
// input X_i and output Y_i, recorded once on the first sample_size inputs.
Model BrecqPipeline(const Model& model_q, const Tensor& inputs, const PtqConfig& config,
                    std::vector<BlockReport>* reports = nullptr);

}  // namespace qf

#endif  // QF_PTQ_H_
