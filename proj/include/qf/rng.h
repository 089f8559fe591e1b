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

#ifndef QF_RNG_H_
#define QF_RNG_H_

#include <cstdint>
#include <random>
#include <vector>

#include "qf/tensor.h"

namespace qf {

// Seeded generator with a platform-independent sample stream.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are implementation-defined, so the
// real-valued draws are derived here: Uniform() takes the top 53 bits of one
// engine output, Normal() is the Box-Muller transform of two uniforms (no
// cached second value), StudentT() is a normal divided by the root mean
// square of `dof` further normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t NextU64() { return engine_(); }
  // [0, 1)
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();
  double StudentT(int dof);
  // Uniform integer in [0, n). n must be positive.
  std::size_t Index(std::size_t n);

  Tensor UniformTensor(Shape shape, double lo, double hi);
  Tensor NormalTensor(Shape shape, double stddev = 1.0);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> Permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace qf

#endif  // QF_RNG_H_
