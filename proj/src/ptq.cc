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

#include "qf/ptq.h"

#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "qf/adam.h"
#include "qf/error.h"
#include "qf/train.h"

namespace qf {

int PtqConfig::ResolvedSteps() const {
  if (steps) return *steps;
  return variant == PtqVariant::kAdaRound ? 20000 : 2000;
}

double PtqConfig::ResolvedLrWeights() const {
  if (lr_weights) return *lr_weights;
  return variant == PtqVariant::kAdaRound ? 1e-2 : 1e-3;
}

CalibrationConfig PtqConfig::Calibration() const {
  CalibrationConfig c;
  c.momentum = momentum;
  c.q_lo = quantile_pair[0];
  c.q_hi = quantile_pair[1];
  c.weight_q_lo = weight_quantile_pair[0];
  c.weight_q_hi = weight_quantile_pair[1];
  c.num_batches = calibration_samples;
  return c;
}

void PtqConfig::Validate() const {
  auto fail = [](const std::string& why) {
    throw Error(ErrorCode::kInvalidConfig, "ptq config: " + why);
  };
  const int n = ResolvedSteps();
  if (n < 0) fail("steps must be >= 0");
  if (variant == PtqVariant::kAdaRound && n > 0 && !(warmup_steps >= 0 && warmup_steps < n)) {
    fail("warmup_steps must lie in [0, steps)");
  }
  if (batch_size == 0) fail("batch_size must be positive");
  if (sample_size < batch_size) fail("sample_size must be >= batch_size");
  if (!(ResolvedLrWeights() > 0) || !(lr_quant > 0)) fail("learning rates must be positive");
  if (!(lambda_reg >= 0)) fail("lambda must be >= 0");
  if (eval_every <= 0) fail("eval_every must be positive");
  if (!(momentum > 0 && momentum < 1)) fail("momentum must lie in (0, 1)");
  if (calibration_samples == 0) fail("calibration_samples must be positive");
  ObserverState::Quantile(quantile_pair[0], quantile_pair[1], momentum).Validate();
  ObserverState::Quantile(weight_quantile_pair[0], weight_quantile_pair[1]).Validate();
}

void to_json(nlohmann::json& j, const PtqConfig& c) {
  static const char* kNames[] = {"vanilla", "ste", "adaround"};
  j = nlohmann::json{{"variant", kNames[static_cast<int>(c.variant)]},
                     {"steps", c.ResolvedSteps()},
                     {"warmup_steps", c.warmup_steps},
                     {"batch_size", c.batch_size},
                     {"sample_size", c.sample_size},
                     {"lr_weights", c.ResolvedLrWeights()},
                     {"lr_quant", c.lr_quant},
                     {"quantile_pair", {c.quantile_pair[0], c.quantile_pair[1]}},
                     {"momentum", c.momentum},
                     {"weight_quantile_pair",
                      {c.weight_quantile_pair[0], c.weight_quantile_pair[1]}},
                     {"calibration_samples", c.calibration_samples},
                     {"lambda", c.lambda_reg},
                     {"eval_every", c.eval_every},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PtqConfig& c) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "ptq config must be an object");
    if (j.contains("variant")) {
      const std::string v = j.at("variant").get<std::string>();
      if (v == "vanilla") c.variant = PtqVariant::kVanilla;
      else if (v == "ste") c.variant = PtqVariant::kSte;
      else if (v == "adaround") c.variant = PtqVariant::kAdaRound;
      else throw Error(ErrorCode::kInvalidConfig, "unknown ptq variant '" + v + "'");
    }
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.sample_size = j.value("sample_size", c.sample_size);
    if (j.contains("lr_weights")) c.lr_weights = j.at("lr_weights").get<double>();
    c.lr_quant = j.value("lr_quant", c.lr_quant);
    if (j.contains("quantile_pair")) {
      c.quantile_pair = j.at("quantile_pair").get<std::array<double, 2>>();
    }
    c.momentum = j.value("momentum", c.momentum);
    if (j.contains("weight_quantile_pair")) {
      c.weight_quantile_pair = j.at("weight_quantile_pair").get<std::array<double, 2>>();
    }
    c.calibration_samples = j.value("calibration_samples", c.calibration_samples);
    c.lambda_reg = j.value("lambda", c.lambda_reg);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("ptq config: ") + e.what());
  }
}

Model VanillaPtq(Model model, const Tensor& inputs, const CalibrationConfig& calib) {
  if (inputs.empty()) {
    throw Error(ErrorCode::kNotObserved, "calibration stream is empty");
  }
  for (auto& block : model.blocks) {
    for (auto& layer : block.layers) {
      if (!layer.weight_quant) continue;
      layer.weight_quant->params = CalibrateWeight(*layer.weight, layer.weight_quant->spec,
                                                   calib.weight_q_lo, calib.weight_q_hi);
    }
  }

  const ObserverState fresh =
      ObserverState::Quantile(calib.q_lo, calib.q_hi, calib.momentum);
  std::vector<std::optional<ObserverState>> input_obs(model.blocks.size());
  std::vector<std::vector<std::optional<ObserverState>>> act_obs(model.blocks.size());
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    if (model.blocks[b].input_quant) input_obs[b] = fresh;
    for (const auto& layer : model.blocks[b].layers) {
      act_obs[b].push_back(layer.act_quant ? std::optional(fresh) : std::nullopt);
    }
  }

  const std::size_t n = std::min(inputs.dim(0), calib.num_batches);
  for (std::size_t s = 0; s < n; ++s) {
    const ModelForward f = Forward(model, Row(inputs, s), {.quantize = false}, true);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      if (input_obs[b]) input_obs[b] = Observe(*input_obs[b], f.traces[b].raw_input);
      for (std::size_t i = 0; i < act_obs[b].size(); ++i) {
        if (act_obs[b][i]) act_obs[b][i] = Observe(*act_obs[b][i], f.traces[b].layers[i].pre_quant);
      }
    }
  }

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockGraph& block = model.blocks[b];
    if (input_obs[b]) {
      block.input_quant->params = Finalize(*input_obs[b], block.input_quant->spec);
    }
    for (std::size_t i = 0; i < block.layers.size(); ++i) {
      if (act_obs[b][i]) {
        block.layers[i].act_quant->params =
            Finalize(*act_obs[b][i], block.layers[i].act_quant->spec);
      }
    }
  }
  return model;
}

double BlockObjective(const BlockGraph& block, const Tensor& inputs, const Tensor& targets) {
  double value = NAN;
  try {
    const Tensor out =
        Forward(block, inputs, {.quantize = true, .hard_rounding = true}).output;
    value = FrobeniusPerSample(out, targets).value;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFinite) throw;
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kDivergedLoss, "block '" + block.name + "' objective is not finite");
  }
  return value;
}

namespace {

// Training copy of a block: quantizer estimators switched to the variant's
// estimators.
BlockGraph PrepareForTraining(BlockGraph block, const PtqConfig& config) {
  auto to_lsq = [](QuantizerSpec& spec) { spec.estimator = Estimator::kLsq; };
  if (block.input_quant) to_lsq(block.input_quant->spec);
  for (auto& layer : block.layers) {
    if (layer.act_quant) to_lsq(layer.act_quant->spec);
    if (!layer.weight_quant) continue;
    WeightQuantNode& wq = *layer.weight_quant;
    if (config.variant == PtqVariant::kAdaRound) {
      wq.spec.estimator = Estimator::kAdaRound;
      wq.adaround = InitAdaRound(*layer.weight, wq.spec, wq.params);
      wq.adaround->lambda_reg = config.lambda_reg;
    } else {
      to_lsq(wq.spec);
    }
  }
  return block;
}

// Writes binarized AdaRound weights back and restores the original
// estimators.
BlockGraph Finish(BlockGraph trained, const BlockGraph& original) {
  if (trained.input_quant) trained.input_quant->spec = original.input_quant->spec;
  for (std::size_t i = 0; i < trained.layers.size(); ++i) {
    Layer& layer = trained.layers[i];
    const Layer& orig = original.layers[i];
    if (layer.act_quant) layer.act_quant->spec = orig.act_quant->spec;
    if (!layer.weight_quant) continue;
    WeightQuantNode& wq = *layer.weight_quant;
    if (wq.adaround) {
      layer.weight = QuantizeWeightAdaRound(*layer.weight, wq.spec, wq.params, *wq.adaround,
                                            /*hard=*/true);
      wq.adaround.reset();
    }
    wq.spec = orig.weight_quant->spec;
    wq.adaround = orig.weight_quant->adaround;
  }
  return trained;
}

void RequireCalibrated(const BlockGraph& block) {
  auto check = [&](const QuantParams& p, const std::string& where) {
    if (!p.initialized()) {
      throw Error(ErrorCode::kInvalidConfig,
                  "block reconstruction needs calibrated quantizers (" + where + ")");
    }
  };
  if (block.input_quant) check(block.input_quant->params, block.name + ".input");
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const Layer& l = block.layers[i];
    const std::string where = block.name + ".layer" + std::to_string(i);
    if (l.weight_quant) check(l.weight_quant->params, where + ".weight");
    if (l.act_quant) check(l.act_quant->params, where + ".act");
  }
}

}  // namespace

BlockGraph BrecqReconstructBlock(const BlockGraph& block_q, const Tensor& inputs,
                                 const Tensor& targets, const PtqConfig& config,
                                 BlockReport* report) {
  config.Validate();
  if (config.variant == PtqVariant::kVanilla) {
    throw Error(ErrorCode::kInvalidConfig, "block reconstruction needs variant ste or adaround");
  }
  if (inputs.empty() || inputs.dim(0) != targets.dim(0)) {
    throw Error(ErrorCode::kInvalidConfig, "inputs and targets must have equal sample counts");
  }
  RequireCalibrated(block_q);
  const int steps = config.ResolvedSteps();

  std::vector<std::size_t> rows(std::min(inputs.dim(0), config.sample_size));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const Tensor x = TakeRows(inputs, rows);
  const Tensor y = TakeRows(targets, rows);

  BlockReport local;
  BlockReport& rep = report ? *report : local;
  rep = BlockReport{};
  rep.name = block_q.name;
  rep.objective_before = BlockObjective(block_q, x, y);
  rep.objective_after = rep.objective_before;
  rep.curve.emplace_back(0, rep.objective_before);
  if (steps == 0) return block_q;

  BlockGraph block = PrepareForTraining(block_q, config);
  BlockGraph best = block_q;
  double best_value = rep.objective_before;
  bool best_is_prepared = false;
  const bool ar = config.variant == PtqVariant::kAdaRound;
  if (ar) {
    // The initial logits reproduce nearest rounding; keeping them as the
    // starting best lets the result carry grid weights.
    const double init = BlockObjective(block, x, y);
    if (init <= best_value) {
      best = block;
      best_value = init;
      best_is_prepared = true;
    }
  }
  ParamSelection select;
  select.act_quant = true;
  if (ar) {
    select.adaround = true;
  } else {
    select.weights = select.biases = select.weight_quant = true;
  }
  const LearningRates lr{config.ResolvedLrWeights(), config.lr_quant};
  Adam adam(AdamConfig{0.9, 0.999, 1e-8});
  BatchSampler sampler(x.dim(0), config.batch_size, config.seed);

  for (int t = 0; t < steps; ++t) {
    const std::vector<std::size_t> idx = sampler.Next();
    const Tensor xb = TakeRows(x, idx);
    const Tensor yb = TakeRows(y, idx);
    double loss = 0.0;
    try {
      const BlockForward f = Forward(block, xb, {}, true);
      const Objective obj = FrobeniusPerSample(f.output, yb);
      BlockGrads grads = Backward(block, *f.trace, obj.grad);
      loss = obj.value;
      if (ar) {
        for (std::size_t i = 0; i < block.layers.size(); ++i) {
          const Layer& l = block.layers[i];
          if (!l.weight_quant || !l.weight_quant->adaround) continue;
          const RegularizerResult reg =
              AdaRoundRegularizer(*l.weight_quant->adaround, t, steps, config.warmup_steps);
          loss += reg.loss;
          grads.layers[i].v = Add(*grads.layers[i].v, reg.grad_v);
        }
      }
      if (!std::isfinite(loss)) throw Error(ErrorCode::kNonFinite, "loss");
      rep.delta_clamps += ApplyAdam(block, grads, adam, block.name, select, lr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw Error(ErrorCode::kDivergedLoss,
                  "block '" + block.name + "' diverged at step " + std::to_string(t) + ": " +
                      e.what());
    }
    if ((t + 1) % config.eval_every == 0 || t + 1 == steps) {
      const double value = BlockObjective(block, x, y);
      rep.curve.emplace_back(t + 1, value);
      spdlog::debug("{} step {} objective {:.6g} (train loss {:.6g})", block.name, t + 1, value,
                    loss);
      if (value < best_value) {
        best_value = value;
        best = block;
        best_is_prepared = true;
        rep.best_step = t + 1;
      }
    }
  }
  if (ar) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& l : block.layers) {
      if (!l.weight_quant || !l.weight_quant->adaround) continue;
      const AdaRoundState& st = *l.weight_quant->adaround;
      for (double v : st.v.values()) acc += std::fabs(2.0 * st.H(v) - 1.0);
      count += st.v.numel();
    }
    rep.final_binarization = count ? acc / count : 0.0;
  }
  if (!best_is_prepared) return block_q;
  BlockGraph out = Finish(std::move(best), block_q);
  rep.objective_after = BlockObjective(out, x, y);
  return out;
}

Model BrecqPipeline(const Model& model_q, const Tensor& inputs, const PtqConfig& config,
                    std::vector<BlockReport>* reports) {
  config.Validate();
  if (reports) reports->clear();
  if (model_q.blocks.empty()) return model_q;
  if (inputs.empty()) throw Error(ErrorCode::kEmptyDataset, "no reconstruction inputs");
  std::vector<std::size_t> rows(std::min(inputs.dim(0), config.sample_size));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const ModelForward fp =
      Forward(model_q, TakeRows(inputs, rows), {.quantize = false}, true);
  Model out = model_q;
  for (std::size_t b = 0; b < out.blocks.size(); ++b) {
    PtqConfig block_config = config;
    block_config.seed = config.seed + b;
    BlockReport rep;
    out.blocks[b] = BrecqReconstructBlock(model_q.blocks[b], fp.traces[b].raw_input,
                                          fp.traces[b].output, block_config, &rep);
    spdlog::info("{}: objective {:.6g} -> {:.6g}", rep.name, rep.objective_before,
                 rep.objective_after);
    if (reports) reports->push_back(std::move(rep));
  }
  return out;
}

}  // namespace qf
