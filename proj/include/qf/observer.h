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

#ifndef QF_OBSERVER_H_
#define QF_OBSERVER_H_

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "qf/quant.h"
#include "qf/tensor.h"

namespace qf {

enum class ObserverKind { kMinMax, kQuantile };

// Running range statistics for static quantization. Each observation takes
// the q_lo/q_hi empirical quantiles of every group and folds them into an
// exponential moving average; the first observation initializes the running
// bounds directly.
struct ObserverState {
  ObserverKind kind = ObserverKind::kQuantile;
  double q_lo = 0.0001;
  double q_hi = 0.9999;
  double momentum = 0.99;
  // Groups follow the same rule as QuantizerSpec; only weights are observed
  // per channel.
  Granularity granularity = Granularity::kPerTensor;
  std::size_t axis = 0;

  std::vector<double> running_lo;
  std::vector<double> running_hi;
  std::size_t count = 0;

  static ObserverState MinMax(double momentum = 0.99);
  static ObserverState Quantile(double q_lo, double q_hi, double momentum = 0.99);

  // Throws QOutOfRange / InvalidParams for a bad configuration.
  void Validate() const;
};

// Linear interpolation between order statistics at position q * (N - 1).
double EmpiricalQuantile(std::span<const double> values, double q);
double EmpiricalQuantile(const Tensor& x, double q);

ObserverState Observe(ObserverState state, const Tensor& x);

// Turns running bounds into step sizes and zero points. For affine
// quantizers the range is first widened to contain zero so that real zero is
// exactly representable.
QuantParams Finalize(const ObserverState& state, const QuantizerSpec& spec);

// Single-pass weight calibration: one observation, then Finalize, with the
// observer groups taken from the spec.
QuantParams CalibrateWeight(const Tensor& w, const QuantizerSpec& spec,
                            double q_lo, double q_hi);

inline constexpr double kDegenerateRangeEps = 1e-8;

// Calibration config JSON: {"momentum", "q_lo", "q_hi", "weight_q_lo",
// "weight_q_hi", "num_batches"}. num_batches caps the number of single-sample
// activation observations.
struct CalibrationConfig {
  double momentum = 0.99;
  double q_lo = 0.0001;
  double q_hi = 0.9999;
  double weight_q_lo = 0.0001;
  double weight_q_hi = 0.9999;
  std::size_t num_batches = 500;
};

void to_json(nlohmann::json& j, const CalibrationConfig& c);
void from_json(const nlohmann::json& j, CalibrationConfig& c);

}  // namespace qf

#endif  // QF_OBSERVER_H_
