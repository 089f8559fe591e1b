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

#include "qf/qat.h"

#include <cmath>
#include <numeric>
#include <optional>

#include <spdlog/spdlog.h>

#include "qf/adam.h"
#include "qf/error.h"
#include "qf/observer.h"
#include "qf/train.h"

namespace qf {

void QatConfig::Validate() const {
  auto fail = [](const std::string& why) {
    throw Error(ErrorCode::kInvalidConfig, "qat config: " + why);
  };
  if (epochs < 0) fail("epochs must be >= 0");
  const bool ma = strategy == QatStrategy::kMovingAverage || strategy == QatStrategy::kHybrid;
  if (ma && (freeze_epoch < 0 || freeze_epoch > epochs)) fail("freeze_epoch must lie in [0, epochs]");
  if (strategy == QatStrategy::kHybrid && (switch_epoch < 0 || switch_epoch > epochs)) {
    fail("switch_epoch must lie in [0, epochs]");
  }
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr_weights > 0) || !(lr_quant > 0)) fail("learning rates must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) fail("adam betas must lie in (0, 1)");
  if (!(momentum > 0 && momentum < 1)) fail("momentum must lie in (0, 1)");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) fail("holdout_fraction must lie in [0, 1)");
  ObserverState::Quantile(quantile_pair[0], quantile_pair[1], momentum).Validate();
  ObserverState::Quantile(weight_quantile_pair[0], weight_quantile_pair[1]).Validate();
}

namespace {

constexpr std::array<const char*, 4> kStrategyNames{"ma", "lsq", "hybrid", "fixed"};

}  // namespace

void to_json(nlohmann::json& j, const QatConfig& c) {
  j = nlohmann::json{{"strategy", kStrategyNames[static_cast<int>(c.strategy)]},
                     {"epochs", c.epochs},
                     {"freeze_epoch", c.freeze_epoch},
                     {"switch_epoch", c.switch_epoch},
                     {"batch_size", c.batch_size},
                     {"lr_weights", c.lr_weights},
                     {"lr_quant", c.lr_quant},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"cosine", c.cosine},
                     {"momentum", c.momentum},
                     {"quantile_pair", {c.quantile_pair[0], c.quantile_pair[1]}},
                     {"weight_quantile_pair",
                      {c.weight_quantile_pair[0], c.weight_quantile_pair[1]}},
                     {"holdout_fraction", c.holdout_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, QatConfig& c) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "qat config must be an object");
    if (j.contains("strategy")) {
      const std::string s = j.at("strategy").get<std::string>();
      bool found = false;
      for (std::size_t i = 0; i < kStrategyNames.size(); ++i) {
        if (s == kStrategyNames[i]) {
          c.strategy = static_cast<QatStrategy>(i);
          found = true;
        }
      }
      if (!found) throw Error(ErrorCode::kInvalidConfig, "unknown qat strategy '" + s + "'");
    }
    c.epochs = j.value("epochs", c.epochs);
    c.freeze_epoch = j.value("freeze_epoch", c.freeze_epoch);
    c.switch_epoch = j.value("switch_epoch", c.switch_epoch);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_weights = j.value("lr_weights", c.lr_weights);
    c.lr_quant = j.value("lr_quant", c.lr_quant);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.cosine = j.value("cosine", c.cosine);
    c.momentum = j.value("momentum", c.momentum);
    if (j.contains("quantile_pair")) {
      c.quantile_pair = j.at("quantile_pair").get<std::array<double, 2>>();
    }
    if (j.contains("weight_quantile_pair")) {
      c.weight_quantile_pair = j.at("weight_quantile_pair").get<std::array<double, 2>>();
    }
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("qat config: ") + e.what());
  }
}

double MseDistance::Evaluate(const Tensor& prediction, const Tensor& target,
                             Tensor* grad) const {
  if (prediction.shape() != target.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "mse distance: shapes differ");
  }
  const double n = static_cast<double>(prediction.numel());
  double acc = 0.0;
  if (grad) *grad = Tensor(prediction.shape());
  for (std::size_t i = 0; i < prediction.numel(); ++i) {
    const double d = prediction[i] - target[i];
    acc += d * d;
    if (grad) (*grad)[i] = 2.0 * d / n;
  }
  return acc / n;
}

FeatureDistance::FeatureDistance(Model extractor, double w_content, double w_style)
    : extractor_(std::move(extractor)), w_content_(w_content), w_style_(w_style) {
  ValidateModel(extractor_);
  if (!(w_content_ >= 0) || !(w_style_ >= 0)) {
    throw Error(ErrorCode::kInvalidConfig, "feature distance weights must be >= 0");
  }
}

double FeatureDistance::Evaluate(const Tensor& prediction, const Tensor& target,
                                 Tensor* grad) const {
  const ForwardOptions fp{.quantize = false};
  const ModelForward fp_pred = Forward(extractor_, prediction, fp, grad != nullptr);
  const Tensor ft = Forward(extractor_, target, fp).output;
  const Tensor& fq = fp_pred.output;
  const std::size_t n = fq.dim(0);
  const std::size_t c = fq.rank() > 1 ? fq.dim(1) : 1;
  const std::size_t p = fq.numel() / (n * c);

  Tensor gf(fq.shape());
  double content = 0.0;
  for (std::size_t i = 0; i < fq.numel(); ++i) {
    const double d = fq[i] - ft[i];
    content += d * d;
    gf[i] = w_content_ * 2.0 * d / fq.numel();
  }
  content /= fq.numel();

  double style = 0.0;
  const double gram_count = static_cast<double>(n * c * c);
  std::vector<double> gq(c * c), gt(c * c);
  for (std::size_t s = 0; s < n; ++s) {
    const double* a = fq.data().data() + s * c * p;
    const double* b = ft.data().data() + s * c * p;
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double x = 0.0, y = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
          x += a[i * p + k] * a[j * p + k];
          y += b[i * p + k] * b[j * p + k];
        }
        gq[i * c + j] = x / p;
        gt[i * c + j] = y / p;
        style += (gq[i * c + j] - gt[i * c + j]) * (gq[i * c + j] - gt[i * c + j]);
      }
    }
    // dL/dF_ik = sum_j (dL/dG_ij + dL/dG_ji) F_jk / P with dL/dG = 2 (Gq - Gt) / count.
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t k = 0; k < p; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dg = 2.0 * (gq[i * c + j] - gt[i * c + j]) / gram_count +
                            2.0 * (gq[j * c + i] - gt[j * c + i]) / gram_count;
          acc += dg * a[j * p + k];
        }
        gf[s * c * p + i * p + k] += w_style_ * acc / p;
      }
    }
  }
  style /= gram_count;
  if (grad) *grad = Backward(extractor_, fp_pred.traces, gf).front().input;
  return w_content_ * content + w_style_ * style;
}

Tensor ModelDiscriminator::Scores(const Tensor& x) const {
  return Forward(model_, x, {.quantize = false}).output;
}

Tensor ModelDiscriminator::Backward(const Tensor& x, const Tensor& grad_scores) const {
  const ModelForward f = Forward(model_, x, {.quantize = false}, true);
  return qf::Backward(model_, f.traces, grad_scores).front().input;
}

double LsganGeneratorLoss(const Tensor& scores_q, const Tensor& scores_fp, LsganVariant variant,
                          Tensor* grad) {
  if (scores_q.shape() != scores_fp.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "lsgan: score shapes differ");
  }
  const double n = static_cast<double>(scores_q.numel());
  double acc = 0.0;
  if (grad) *grad = Tensor(scores_q.shape());
  for (std::size_t i = 0; i < scores_q.numel(); ++i) {
    const double target = variant == LsganVariant::kDefault ? 1.0 : scores_fp[i];
    const double d = scores_q[i] - target;
    acc += d * d;
    if (grad) (*grad)[i] = 2.0 * d / n;
  }
  return acc / n;
}

void LossSpec::Validate() const {
  if (!(beta >= 0) || !(w_adv >= 0)) {
    throw Error(ErrorCode::kInvalidConfig, "loss weights must be >= 0");
  }
  if (beta > 0 && !distance) {
    throw Error(ErrorCode::kInvalidConfig, "reconstruction term needs a distance");
  }
  const bool rec = beta > 0;
  const bool adv = discriminator && w_adv > 0;
  if (!rec && !adv) throw Error(ErrorCode::kInvalidConfig, "no loss term enabled");
}

double LossSpec::Evaluate(const Tensor& prediction, const Tensor& target, Tensor* grad) const {
  double total = 0.0;
  if (grad) *grad = Tensor(prediction.shape());
  if (beta > 0) {
    Tensor g;
    total += beta * distance->Evaluate(prediction, target, grad ? &g : nullptr);
    if (grad) *grad = Add(*grad, Mul(g, beta));
  }
  if (discriminator && w_adv > 0) {
    const Tensor sq = discriminator->Scores(prediction);
    const Tensor sfp = discriminator->Scores(target);
    Tensor gs;
    total += w_adv * LsganGeneratorLoss(sq, sfp, lsgan, grad ? &gs : nullptr);
    if (grad) *grad = Add(*grad, Mul(discriminator->Backward(prediction, gs), w_adv));
  }
  return total;
}

namespace {

enum class Mode { kMa, kMaFrozen, kLsq, kFixed };

const char* ModeName(Mode m) {
  switch (m) {
    case Mode::kMa: return "ma";
    case Mode::kMaFrozen: return "ma-frozen";
    case Mode::kLsq: return "lsq";
    case Mode::kFixed: return "fixed";
  }
  return "";
}

Mode ModeAt(const QatConfig& c, int epoch) {
  const Mode ma = epoch < c.freeze_epoch ? Mode::kMa : Mode::kMaFrozen;
  switch (c.strategy) {
    case QatStrategy::kMovingAverage: return ma;
    case QatStrategy::kLsq: return Mode::kLsq;
    case QatStrategy::kHybrid: return epoch < c.switch_epoch ? ma : Mode::kLsq;
    case QatStrategy::kFixed: return Mode::kFixed;
  }
  return Mode::kFixed;
}

template <typename F>
void ForEachQuantSpec(Model& model, F&& f) {
  for (auto& block : model.blocks) {
    if (block.input_quant) f(block.input_quant->spec);
    for (auto& layer : block.layers) {
      if (layer.weight_quant) f(layer.weight_quant->spec);
      if (layer.act_quant) f(layer.act_quant->spec);
    }
  }
}

void SetEstimators(Model& model, Estimator est) {
  ForEachQuantSpec(model, [&](QuantizerSpec& s) { s.estimator = est; });
}

void RestoreEstimators(Model& model, const Model& original) {
  std::vector<Estimator> ests;
  Model copy = original;
  ForEachQuantSpec(copy, [&](QuantizerSpec& s) { ests.push_back(s.estimator); });
  std::size_t i = 0;
  ForEachQuantSpec(model, [&](QuantizerSpec& s) { s.estimator = ests[i++]; });
}

void RequireCalibrated(const Model& model) {
  for (const auto& block : model.blocks) {
    auto check = [&](const QuantParams& p) {
      if (!p.initialized()) {
        throw Error(ErrorCode::kInvalidConfig,
                    "qat needs a calibrated model (block '" + block.name + "')");
      }
    };
    if (block.input_quant) check(block.input_quant->params);
    for (const auto& l : block.layers) {
      if (l.weight_quant) check(l.weight_quant->params);
      if (l.act_quant) check(l.act_quant->params);
    }
  }
}

// Observer seeded with the range currently covered by a quantizer.
ObserverState SeededObserver(const QuantNode& node, const QatConfig& c) {
  ObserverState s = ObserverState::Quantile(c.quantile_pair[0], c.quantile_pair[1], c.momentum);
  const double d = node.params.delta[0];
  const double z = node.params.ForwardZero(0);
  s.running_lo = {d * (node.spec.t_min() - z)};
  s.running_hi = {d * (node.spec.t_max() - z)};
  s.count = 1;
  return s;
}

struct MovingAverageState {
  std::vector<std::optional<ObserverState>> input;
  std::vector<std::vector<std::optional<ObserverState>>> act;
};

MovingAverageState SeedObservers(const Model& model, const QatConfig& c) {
  MovingAverageState st;
  for (const auto& block : model.blocks) {
    st.input.push_back(block.input_quant ? std::optional(SeededObserver(*block.input_quant, c))
                                         : std::nullopt);
    st.act.emplace_back();
    for (const auto& l : block.layers) {
      st.act.back().push_back(l.act_quant ? std::optional(SeededObserver(*l.act_quant, c))
                                          : std::nullopt);
    }
  }
  return st;
}

// Folds one recorded forward pass into the observers and refreshes every
// quantizer's parameters.
void RefreshMovingAverage(Model& model, MovingAverageState& st,
                          const std::vector<BlockTrace>& traces, const QatConfig& c) {
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockGraph& block = model.blocks[b];
    if (st.input[b]) {
      st.input[b] = Observe(*st.input[b], traces[b].raw_input);
      block.input_quant->params = Finalize(*st.input[b], block.input_quant->spec);
    }
    for (std::size_t i = 0; i < block.layers.size(); ++i) {
      Layer& l = block.layers[i];
      if (st.act[b][i]) {
        st.act[b][i] = Observe(*st.act[b][i], traces[b].layers[i].pre_quant);
        l.act_quant->params = Finalize(*st.act[b][i], l.act_quant->spec);
      }
      if (l.weight_quant) {
        l.weight_quant->params = CalibrateWeight(*l.weight, l.weight_quant->spec,
                                                 c.weight_quantile_pair[0],
                                                 c.weight_quantile_pair[1]);
      }
    }
  }
}

}  // namespace

std::vector<double> FlattenQuantParams(const Model& model) {
  std::vector<double> deltas, zeros;
  auto add = [&](const QuantParams& p) {
    deltas.insert(deltas.end(), p.delta.begin(), p.delta.end());
    zeros.insert(zeros.end(), p.zero_point.begin(), p.zero_point.end());
  };
  for (const auto& block : model.blocks) {
    if (block.input_quant) add(block.input_quant->params);
    for (const auto& l : block.layers) {
      if (l.weight_quant) add(l.weight_quant->params);
      if (l.act_quant) add(l.act_quant->params);
    }
  }
  deltas.insert(deltas.end(), zeros.begin(), zeros.end());
  return deltas;
}

Model QatTrain(const Model& model_q, const Tensor& inputs, const Tensor& targets,
               const QatConfig& config, const LossSpec& loss, QatReport* report) {
  config.Validate();
  loss.Validate();
  if (inputs.empty() || inputs.dim(0) == 0) {
    throw Error(ErrorCode::kEmptyDataset, "qat dataset is empty");
  }
  if (targets.empty() || targets.dim(0) != inputs.dim(0)) {
    throw Error(ErrorCode::kInvalidConfig, "qat inputs and targets differ in sample count");
  }
  RequireCalibrated(model_q);

  const std::size_t total = inputs.dim(0);
  const std::size_t holdout =
      total >= 2 ? std::max<std::size_t>(1, static_cast<std::size_t>(total * config.holdout_fraction))
                 : 0;
  const std::size_t ntrain = total - (config.holdout_fraction > 0 ? holdout : 0);
  std::vector<std::size_t> train_rows(ntrain), held_rows;
  std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});
  for (std::size_t i = ntrain; i < total; ++i) held_rows.push_back(i);
  if (held_rows.empty()) held_rows = train_rows;
  const Tensor xtr = TakeRows(inputs, train_rows), ytr = TakeRows(targets, train_rows);
  const Tensor xho = TakeRows(inputs, held_rows), yho = TakeRows(targets, held_rows);

  const MseDistance mse;
  const ReconstructionDistance& metric = loss.distance ? *loss.distance : mse;
  auto heldout = [&](const Model& m) {
    double v = NAN;
    try {
      v = metric.Evaluate(Forward(m, xho).output, yho, nullptr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
    }
    if (!std::isfinite(v)) throw Error(ErrorCode::kDivergedLoss, "held-out distance diverged");
    return v;
  };

  QatReport local;
  QatReport& rep = report ? *report : local;
  rep = QatReport{};
  rep.initial_heldout = rep.best_heldout = heldout(model_q);

  Model model = model_q;
  Model best = model_q;
  Adam adam(AdamConfig{config.beta1, config.beta2, 1e-8});
  BatchSampler sampler(ntrain, config.batch_size, config.seed);
  const std::int64_t total_steps =
      static_cast<std::int64_t>(config.epochs) * sampler.batches_per_epoch();
  std::int64_t step = 0;
  std::optional<MovingAverageState> ma;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Mode mode = ModeAt(config, epoch);
    SetEstimators(model, mode == Mode::kLsq ? Estimator::kLsq : Estimator::kSte);
    if (mode == Mode::kMa && !ma) ma = SeedObservers(model, config);
    ParamSelection select;
    select.weights = select.biases = true;
    select.weight_quant = select.act_quant = mode == Mode::kLsq;

    double loss_sum = 0.0;
    const std::size_t batches = sampler.batches_per_epoch();
    for (std::size_t k = 0; k < batches; ++k, ++step) {
      const std::vector<std::size_t> idx = sampler.Next();
      const Tensor xb = TakeRows(xtr, idx), yb = TakeRows(ytr, idx);
      const double scale = config.cosine ? CosineLr(1.0, step, total_steps) : 1.0;
      const LearningRates lr{config.lr_weights * scale, config.lr_quant * scale};
      try {
        const ModelForward f = Forward(model, xb, {}, true);
        Tensor grad;
        const double value = loss.Evaluate(f.output, yb, &grad);
        if (!std::isfinite(value)) throw Error(ErrorCode::kNonFinite, "loss");
        loss_sum += value;
        const std::vector<BlockGrads> grads = Backward(model, f.traces, grad);
        for (std::size_t b = 0; b < model.blocks.size(); ++b) {
          rep.delta_clamps += ApplyAdam(model.blocks[b], grads[b], adam, "b" + std::to_string(b),
                                        select, lr);
        }
        if (mode == Mode::kMa) RefreshMovingAverage(model, *ma, f.traces, config);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kDivergedLoss,
                    "qat diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    QatEpoch rec;
    rec.epoch = epoch + 1;
    rec.mode = ModeName(mode);
    rec.train_loss = batches ? loss_sum / batches : 0.0;
    rec.heldout = heldout(model);
    rec.quant_params = FlattenQuantParams(model);
    if (rec.heldout < rep.best_heldout) {
      rep.best_heldout = rec.heldout;
      rep.best_epoch = epoch + 1;
      best = model;
    }
    rec.best_heldout = rep.best_heldout;
    spdlog::debug("qat epoch {} [{}] train {:.6g} heldout {:.6g}", rec.epoch, rec.mode,
                  rec.train_loss, rec.heldout);
    rep.epochs.push_back(rec);
  }
  RestoreEstimators(best, model_q);
  return best;
}

Model FixedParamsBaseline(const Model& model_q, const Tensor& inputs, const Tensor& targets,
                          QatConfig config, const LossSpec& loss, QatReport* report) {
  config.strategy = QatStrategy::kFixed;
  return QatTrain(model_q, inputs, targets, config, loss, report);
}

}  // namespace qf
