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

// Uniform fake quantization.
//
// A quantizer maps x to
//
//   x_q = delta_g * (clamp(round(x / delta_g + z_g), t_min, t_max) - z_g)
//
// where g is the group (whole tensor, or one slice along the channel axis)
// that x belongs to. Symmetric quantizers use the signed range
// [-2^(n-1), 2^(n-1) - 1] and z = 0; affine quantizers use the unsigned range
// [0, 2^n - 1] with an integer zero point. Note that z is added before
// rounding, so a non-integer shadow zero point would shift the rounding
// boundaries; the forward pass therefore always uses round(z).
//
// Rounding is round-half-to-even throughout.

#ifndef QF_QUANT_H_
#define QF_QUANT_H_

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "qf/tensor.h"

namespace qf {

enum class QuantMode { kSymmetricSigned, kAffine };
enum class Granularity { kPerTensor, kPerChannel };
enum class RoundMode { kHalfToEven };
enum class Estimator { kSte, kLsq, kAdaRound };

struct QuantizerSpec {
  int bits = 8;
  QuantMode mode = QuantMode::kSymmetricSigned;
  Granularity granularity = Granularity::kPerTensor;
  std::size_t axis = 0;  // meaningful for kPerChannel only
  RoundMode round_mode = RoundMode::kHalfToEven;
  Estimator estimator = Estimator::kSte;

  double t_min() const;
  double t_max() const;
  // Throws InvalidParams when bits is outside [2, 8].
  void Validate() const;
  // Group count for a tensor of the given shape; validates the channel axis.
  std::size_t GroupCount(const Shape& shape) const;

  bool operator==(const QuantizerSpec&) const = default;
};

// Weight default: 8-bit symmetric signed, per tensor.
QuantizerSpec DefaultWeightSpec();
// Activation default: 8-bit affine, per tensor.
QuantizerSpec DefaultActivationSpec();

struct QuantParams {
  std::vector<double> delta;
  // Continuous shadow value; forward evaluation uses its rounded value.
  std::vector<double> zero_point;

  std::size_t groups() const { return delta.size(); }
  bool initialized() const { return !delta.empty(); }
  // Rounded zero point used by every forward evaluation.
  double ForwardZero(std::size_t g) const;

  bool operator==(const QuantParams&) const = default;
};

// Checks delta > 0, group count, and zero points for the given spec/shape.
void ValidateParams(const QuantizerSpec& spec, const QuantParams& params,
                    const Shape& shape);

// Maps a flat element index to its quantization group.
class GroupIndexer {
 public:
  GroupIndexer(const QuantizerSpec& spec, const Shape& shape);
  std::size_t operator()(std::size_t flat) const {
    return per_channel_ ? (flat / inner_) % channels_ : 0;
  }
  std::size_t groups() const { return per_channel_ ? channels_ : 1; }

 private:
  bool per_channel_ = false;
  std::size_t inner_ = 1;
  std::size_t channels_ = 1;
};

// Round half to even.
double RoundHalfEven(double x);

Tensor FakeQuant(const Tensor& x, const QuantizerSpec& spec,
                 const QuantParams& params);

// Clipped straight-through estimator: passes grad where
// t_min <= x/delta + z <= t_max, zero elsewhere.
Tensor BackwardSte(const Tensor& grad_out, const Tensor& x,
                   const QuantizerSpec& spec, const QuantParams& params);

struct LsqGrads {
  Tensor grad_x;
  std::vector<double> grad_delta;
  std::vector<double> grad_zero;
};

// Learned-step-size gradients. Per-group sums are scaled by
// 1 / sqrt(N_g * t_max).
LsqGrads BackwardLsq(const Tensor& grad_out, const Tensor& x,
                     const QuantizerSpec& spec, const QuantParams& params);

double LsqGradScale(std::size_t group_numel, const QuantizerSpec& spec);

// Adaptive rounding: per-weight rounding logits v relaxed through a
// rectified sigmoid h(v) = clamp(sigmoid(v) * (zeta - gamma) + gamma, 0, 1).
struct AdaRoundState {
  Tensor v;
  double zeta = 1.1;
  double gamma = -0.1;
  double beta_start = 20.0;
  double beta_end = 2.0;
  double lambda_reg = 0.01;

  double H(double logit) const;
  // dh/dv, zero where the rectified sigmoid is clamped.
  double DhDv(double logit) const;
};

// Initializes v so that the soft value reproduces w (h(v) equals the
// fractional part of w/delta + z).
AdaRoundState InitAdaRound(const Tensor& w, const QuantizerSpec& spec,
                           const QuantParams& params);

// delta * (clamp(floor(w/delta + z) + h(v), t_min, t_max) - z); with hard
// set, h is replaced by 1[h >= 0.5].
Tensor QuantizeWeightAdaRound(const Tensor& w, const QuantizerSpec& spec,
                              const QuantParams& params,
                              const AdaRoundState& state, bool hard);

// Gradient of the soft AdaRound output with respect to v.
Tensor BackwardAdaRound(const Tensor& grad_out, const Tensor& w,
                        const QuantizerSpec& spec, const QuantParams& params,
                        const AdaRoundState& state);

// beta for the given step: beta_start during warmup, then cosine annealed so
// that the final step (total_steps - 1) uses beta_end.
double AdaRoundBeta(const AdaRoundState& state, int step, int total_steps,
                    int warmup_steps);

struct RegularizerResult {
  double loss = 0.0;
  Tensor grad_v;
};

// lambda * sum(1 - |2h - 1|^beta) and its gradient with respect to v.
RegularizerResult AdaRoundRegularizer(const AdaRoundState& state, double beta);
// Zero during warmup, annealed beta afterwards.
RegularizerResult AdaRoundRegularizer(const AdaRoundState& state, int step,
                                      int total_steps, int warmup_steps);

// JSON: {"bits","mode","granularity","axis","round_mode","estimator"} and
// {"delta":[...],"zero_point":[...]}.
void to_json(nlohmann::json& j, const QuantizerSpec& spec);
void from_json(const nlohmann::json& j, QuantizerSpec& spec);
void to_json(nlohmann::json& j, const QuantParams& params);
void from_json(const nlohmann::json& j, QuantParams& params);

}  // namespace qf

#endif  // QF_QUANT_H_
