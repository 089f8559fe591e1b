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

#include "qf/rng.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "qf/error.h"

namespace qf {

double Rng::Uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::Normal() {
  // 1 - U keeps the log argument in (0, 1].
  const double u1 = 1.0 - Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::StudentT(int dof) {
  if (dof <= 0) throw Error(ErrorCode::kInvalidParams, "student-t dof <= 0");
  const double z = Normal();
  double chi2 = 0.0;
  for (int i = 0; i < dof; ++i) {
    const double n = Normal();
    chi2 += n * n;
  }
  return z / std::sqrt(chi2 / dof);
}

std::size_t Rng::Index(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidParams, "Index(0)");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

Tensor Rng::UniformTensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = Uniform(lo, hi);
  return t;
}

Tensor Rng::NormalTensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * Normal();
  return t;
}

std::vector<std::size_t> Rng::Permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[Index(i)]);
  return p;
}

}  // namespace qf
