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

#include "qf/adam.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qf/error.h"

namespace qf {

void Adam::Step(const std::string& key, std::span<double> param,
                std::span<const double> grad, double lr) {
  if (param.size() != grad.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "adam: parameter '" + key + "' has " + std::to_string(param.size()) +
                    " elements, gradient " + std::to_string(grad.size()));
  }
  AdamMoments& s = state_[key];
  if (s.m.empty()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
  } else if (s.m.size() != param.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam: parameter '" + key + "' resized");
  }
  ++s.step;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * grad[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

const AdamMoments* Adam::Find(const std::string& key) const {
  auto it = state_.find(key);
  return it == state_.end() ? nullptr : &it->second;
}

double CosineLr(double lr, std::int64_t step, std::int64_t total) {
  if (total <= 0) return lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace qf
