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

#ifndef QF_ADAM_H_
#define QF_ADAM_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace qf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// Bias-corrected Adam over named parameters. Moments are created on the
// first update of a key and must keep the same length afterwards.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }

  void Step(const std::string& key, std::span<double> param,
            std::span<const double> grad, double lr);

  const AdamMoments* Find(const std::string& key) const;

 private:
  AdamConfig config_;
  std::map<std::string, AdamMoments> state_;
};

// lr * 0.5 * (1 + cos(pi * step / total)); returns lr when total <= 0.
double CosineLr(double lr, std::int64_t step, std::int64_t total);

}  // namespace qf

#endif  // QF_ADAM_H_
