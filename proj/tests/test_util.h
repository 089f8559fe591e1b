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

// Test-only oracles. Nothing here calls into the code paths being checked.

#ifndef QF_TESTS_TEST_UTIL_H_
#define QF_TESTS_TEST_UTIL_H_

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "qf/error.h"
#include "qf/quant.h"

namespace qf::test {

inline ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected qf::Error";
  return ErrorCode::kIo;
}

inline double CentralDiff(const std::function<double(double)>& f, double x,
                          double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double NearestEven(double x) {
  const double r = std::nearbyint(x);  // default FE_TONEAREST
  return r;
}

// True when q is exactly delta * (k - z) for an integer k in [t_min, t_max].
inline bool OnGrid(double q, const QuantizerSpec& spec, double delta, double z) {
  const double zr = NearestEven(z);
  const double m = NearestEven(q / delta);
  const double k = m + zr;
  return k >= spec.t_min() && k <= spec.t_max() && delta * m == q;
}

// delta * clamp(x / delta + z, t_min, t_max) - delta * z: fake quantization
// with rounding removed.
inline double ClampSurrogate(double x, const QuantizerSpec& spec, double delta,
                             double z) {
  return delta * std::clamp(x / delta + z, spec.t_min(), spec.t_max()) - delta * z;
}

// Fake quantization whose rounding residual is frozen at the base point
// (delta0, z0); differentiable in (delta, z).
inline double LsqSurrogate(double x, const QuantizerSpec& spec, double delta0,
                           double z0, double delta, double z) {
  const double s0 = x / delta0 + z0;
  const double residual = NearestEven(s0) - s0;
  return delta * (std::clamp(x / delta + z + residual, spec.t_min(), spec.t_max()) - z);
}

}  // namespace qf::test

#endif  // QF_TESTS_TEST_UTIL_H_
