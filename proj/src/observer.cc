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

#include "qf/observer.h"

#include <algorithm>
#include <cmath>

#include "qf/error.h"

namespace qf {

ObserverState ObserverState::MinMax(double momentum) {
  ObserverState s;
  s.kind = ObserverKind::kMinMax;
  s.q_lo = 0.0;
  s.q_hi = 1.0;
  s.momentum = momentum;
  return s;
}

ObserverState ObserverState::Quantile(double q_lo, double q_hi, double momentum) {
  ObserverState s;
  s.kind = ObserverKind::kQuantile;
  s.q_lo = q_lo;
  s.q_hi = q_hi;
  s.momentum = momentum;
  return s;
}

void ObserverState::Validate() const {
  if (kind == ObserverKind::kQuantile &&
      !(q_lo >= 0.0 && q_lo < 0.5 && q_hi > 0.5 && q_hi <= 1.0)) {
    throw Error(ErrorCode::kQOutOfRange,
                "quantile pair must satisfy q_lo in [0, 0.5), q_hi in (0.5, 1]");
  }
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "momentum must be in (0, 1)");
  }
}

namespace {

// Interpolated order statistic; reorders `v`.
double SelectQuantile(std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  const double a = v[lo];
  if (frac == 0.0 || lo + 1 >= v.size()) return a;
  const double b = *std::min_element(v.begin() + lo + 1, v.end());
  return a + frac * (b - a);
}

void CheckQuantileArgs(std::size_t n, double q) {
  if (n == 0) throw Error(ErrorCode::kEmptyGroup, "quantile of empty data");
  if (!(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::kQOutOfRange, "quantile q must be in [0, 1]");
  }
}

}  // namespace

double EmpiricalQuantile(std::span<const double> values, double q) {
  CheckQuantileArgs(values.size(), q);
  std::vector<double> v(values.begin(), values.end());
  return SelectQuantile(v, q);
}

double EmpiricalQuantile(const Tensor& x, double q) {
  return EmpiricalQuantile(x.data(), q);
}

ObserverState Observe(ObserverState state, const Tensor& x) {
  state.Validate();
  QuantizerSpec grouping;
  grouping.granularity = state.granularity;
  grouping.axis = state.axis;
  const GroupIndexer group(grouping, x.shape());
  std::vector<std::vector<double>> buckets(group.groups());
  for (std::size_t i = 0; i < x.numel(); ++i) buckets[group(i)].push_back(x[i]);

  std::vector<double> batch_lo(buckets.size()), batch_hi(buckets.size());
  for (std::size_t g = 0; g < buckets.size(); ++g) {
    auto& b = buckets[g];
    if (b.empty()) {
      throw Error(ErrorCode::kEmptyGroup, "group " + std::to_string(g) + " is empty");
    }
    if (state.kind == ObserverKind::kMinMax) {
      const auto [mn, mx] = std::minmax_element(b.begin(), b.end());
      batch_lo[g] = *mn;
      batch_hi[g] = *mx;
    } else {
      CheckQuantileArgs(b.size(), state.q_hi);
      batch_lo[g] = SelectQuantile(b, state.q_lo);
      batch_hi[g] = SelectQuantile(b, state.q_hi);
    }
  }

  if (state.count == 0) {
    state.running_lo = std::move(batch_lo);
    state.running_hi = std::move(batch_hi);
  } else {
    if (state.running_lo.size() != batch_lo.size()) {
      throw Error(ErrorCode::kShapeMismatch, "observer group count changed");
    }
    const double m = state.momentum;
    for (std::size_t g = 0; g < batch_lo.size(); ++g) {
      state.running_lo[g] = m * state.running_lo[g] + (1.0 - m) * batch_lo[g];
      state.running_hi[g] = m * state.running_hi[g] + (1.0 - m) * batch_hi[g];
    }
  }
  ++state.count;
  return state;
}

QuantParams Finalize(const ObserverState& state, const QuantizerSpec& spec) {
  if (state.count == 0 || state.running_lo.empty()) {
    throw Error(ErrorCode::kNotObserved, "observer has seen no data");
  }
  spec.Validate();
  const double t_min = spec.t_min(), t_max = spec.t_max();
  QuantParams params;
  for (std::size_t g = 0; g < state.running_lo.size(); ++g) {
    double lo = state.running_lo[g];
    double hi = state.running_hi[g];
    double delta;
    if (hi == lo) {
      delta = std::max(std::fabs(hi), kDegenerateRangeEps) / t_max;
    } else if (spec.mode == QuantMode::kSymmetricSigned) {
      delta = std::max(std::fabs(lo), hi) / std::max(std::fabs(t_min), t_max);
    } else {
      lo = std::min(lo, 0.0);
      hi = std::max(hi, 0.0);
      delta = (hi - lo) / (t_max - t_min);
    }
    delta = std::max(delta, kDegenerateRangeEps / t_max);
    double z = 0.0;
    if (spec.mode == QuantMode::kAffine) {
      z = std::clamp(RoundHalfEven(-lo / delta), t_min, t_max);
    }
    params.delta.push_back(delta);
    params.zero_point.push_back(z);
  }
  return params;
}

QuantParams CalibrateWeight(const Tensor& w, const QuantizerSpec& spec,
                            double q_lo, double q_hi) {
  ObserverState state = (q_lo == 0.0 && q_hi == 1.0)
                            ? ObserverState::MinMax()
                            : ObserverState::Quantile(q_lo, q_hi);
  state.granularity = spec.granularity;
  state.axis = spec.axis;
  return Finalize(Observe(std::move(state), w), spec);
}

void to_json(nlohmann::json& j, const CalibrationConfig& c) {
  j = nlohmann::json{{"momentum", c.momentum},
                     {"q_lo", c.q_lo},
                     {"q_hi", c.q_hi},
                     {"weight_q_lo", c.weight_q_lo},
                     {"weight_q_hi", c.weight_q_hi},
                     {"num_batches", c.num_batches}};
}

void from_json(const nlohmann::json& j, CalibrationConfig& c) {
  c.momentum = j.value("momentum", c.momentum);
  c.q_lo = j.value("q_lo", c.q_lo);
  c.q_hi = j.value("q_hi", c.q_hi);
  c.weight_q_lo = j.value("weight_q_lo", c.weight_q_lo);
  c.weight_q_hi = j.value("weight_q_hi", c.weight_q_hi);
  c.num_batches = j.value("num_batches", c.num_batches);
}

}  // namespace qf
