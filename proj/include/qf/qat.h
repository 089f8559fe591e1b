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

// Quantization-aware training with moving-average or learned quantizer
// parameters, and the pluggable loss it minimizes:
//
//   loss = w_adv * L_adv + beta * L_rec
//
// L_rec is a reconstruction distance between quantized and full-precision
// outputs; L_adv is an LSGAN generator loss on scores of a fixed
// discriminator and is off unless a discriminator is supplied.

#ifndef QF_QAT_H_
#define QF_QAT_H_

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qf/netgraph.h"

namespace qf {

enum class QatStrategy {
  kMovingAverage,  // quantile observation until freeze_epoch, then frozen
  kLsq,            // learned step sizes and zero points
  kHybrid,         // moving average before switch_epoch, LSQ afterwards
  kFixed,          // parameters frozen from PTQ; weights only
};

struct QatConfig {
  QatStrategy strategy = QatStrategy::kLsq;
  int epochs = 200;
  int freeze_epoch = 50;
  int switch_epoch = 50;
  std::size_t batch_size = 8;
  double lr_weights = 1e-5;
  double lr_quant = 1e-6;
  double beta1 = 0.5;
  double beta2 = 0.999;
  bool cosine = true;
  // Moving-average observation settings.
  double momentum = 0.99;
  std::array<double, 2> quantile_pair{0.0001, 0.9999};
  std::array<double, 2> weight_quantile_pair{0.0001, 0.9999};
  // Trailing fraction of the dataset held out for model selection.
  double holdout_fraction = 0.125;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void Validate() const;
};

void to_json(nlohmann::json& j, const QatConfig& c);
void from_json(const nlohmann::json& j, QatConfig& c);

// A differentiable distance between a prediction and its target.
class ReconstructionDistance {
 public:
  virtual ~ReconstructionDistance() = default;
  // Returns the distance and, when grad is non-null, writes its gradient
  // with respect to prediction.
  virtual double Evaluate(const Tensor& prediction, const Tensor& target,
                          Tensor* grad) const = 0;
};

// Mean over all elements of the squared difference.
class MseDistance : public ReconstructionDistance {
 public:
  double Evaluate(const Tensor& prediction, const Tensor& target, Tensor* grad) const override;
};

// Content and style distances on the features of a fixed extractor model:
//   w_content * mean((F_p - F_t)^2) + w_style * mean((G_p - G_t)^2)
// where F are extractor outputs and G their per-sample Gram matrices
// F F^T / P over the [C, P] view of each sample's features.
class FeatureDistance : public ReconstructionDistance {
 public:
  FeatureDistance(Model extractor, double w_content = 3.0, double w_style = 3e4);
  double Evaluate(const Tensor& prediction, const Tensor& target, Tensor* grad) const override;

 private:
  Model extractor_;
  double w_content_;
  double w_style_;
};

// Scores outputs; the generator is trained against it but never updates it.
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  virtual Tensor Scores(const Tensor& x) const = 0;
  // Gradient of <grad_scores, Scores(x)> with respect to x.
  virtual Tensor Backward(const Tensor& x, const Tensor& grad_scores) const = 0;
};

// Discriminator given by a full-precision model.
class ModelDiscriminator : public Discriminator {
 public:
  explicit ModelDiscriminator(Model model) : model_(std::move(model)) {}
  Tensor Scores(const Tensor& x) const override;
  Tensor Backward(const Tensor& x, const Tensor& grad_scores) const override;

 private:
  Model model_;
};

enum class LsganVariant {
  kDefault,   // mean((s_q - 1)^2)
  kMatching,  // mean((s_q - s_fp)^2)
};

// Throws ShapeMismatch. Writes d loss / d scores_q into grad when non-null.
double LsganGeneratorLoss(const Tensor& scores_q, const Tensor& scores_fp,
                          LsganVariant variant = LsganVariant::kDefault, Tensor* grad = nullptr);

struct LossSpec {
  double beta = 1.0;
  std::shared_ptr<const ReconstructionDistance> distance = std::make_shared<MseDistance>();
  std::shared_ptr<const Discriminator> discriminator;
  LsganVariant lsgan = LsganVariant::kDefault;
  double w_adv = 0.01;

  // Throws InvalidConfig when no term is enabled.
  void Validate() const;
  // Total loss and its gradient with respect to prediction.
  double Evaluate(const Tensor& prediction, const Tensor& target, Tensor* grad) const;
};

struct QatEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double heldout = 0.0;
  double best_heldout = 0.0;
  std::string mode;  // "ma", "ma-frozen", "lsq" or "fixed"
  // Every step size followed by every zero point at the end of the epoch.
  std::vector<double> quant_params;
};

std::vector<double> FlattenQuantParams(const Model& model);

struct QatReport {
  double initial_heldout = 0.0;
  double best_heldout = 0.0;
  int best_epoch = 0;  // 0 means the initial model
  std::size_t delta_clamps = 0;
  std::vector<QatEpoch> epochs;
};

// Trains model_q (calibrated by PTQ) toward the full-precision targets and
// returns the iterate with the lowest held-out reconstruction distance,
// the initial model included. Estimators of the returned model are those of
// model_q. Throws EmptyDataset, InvalidConfig, DivergedLoss.
Model QatTrain(const Model& model_q, const Tensor& inputs, const Tensor& targets,
               const QatConfig& config, const LossSpec& loss = {}, QatReport* report = nullptr);

// QAT with quantizer parameters frozen at their PTQ values.
Model FixedParamsBaseline(const Model& model_q, const Tensor& inputs, const Tensor& targets,
                          QatConfig config, const LossSpec& loss = {},
                          QatReport* report = nullptr);

}  // namespace qf

#endif  // QF_QAT_H_
