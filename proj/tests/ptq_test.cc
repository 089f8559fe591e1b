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

#include <gtest/gtest.h>

#include <cmath>

#include "qf/error.h"
#include "qf/ptq.h"
#include "qf/rng.h"
#include "test_util.h"

namespace qf {
namespace {

void Randomize(BlockGraph& block, Rng& rng, double scale = 0.5) {
  for (Layer& l : block.layers) {
    if (l.weight) l.weight = rng.UniformTensor(l.weight->shape(), -scale, scale);
    if (l.bias) l.bias = rng.UniformTensor(l.bias->shape(), -scale, scale);
  }
}

QuantizerSpec WeightSpec(int bits) {
  QuantizerSpec s = DefaultWeightSpec();
  s.bits = bits;
  return s;
}

// Block output MSE of a single Linear(k, m) layer for a given integer weight
// grid; the test-side enumeration oracle uses it directly.
double LinearObjective(const std::vector<double>& w, const Tensor& bias, const Tensor& x,
                       const Tensor& y, std::size_t in, std::size_t out) {
  double acc = 0;
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias[o];
      for (std::size_t k = 0; k < in; ++k) s += w[o * in + k] * x[n * in + k];
      const double d = s - y[n * out + o];
      acc += d * d;
    }
  }
  return acc / x.dim(0);
}

TEST(PtqConfigTest, JsonAndDefaults) {
  PtqConfig c = nlohmann::json::parse(R"({"variant":"adaround","quantile_pair":[0.01,0.99]})")
                    .get<PtqConfig>();
  EXPECT_EQ(c.variant, PtqVariant::kAdaRound);
  EXPECT_EQ(c.ResolvedSteps(), 20000);
  EXPECT_EQ(c.warmup_steps, 4000);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.sample_size, 896u);
  EXPECT_EQ(c.quantile_pair[1], 0.99);
  EXPECT_EQ(c.Calibration().q_lo, 0.01);
  c.variant = PtqVariant::kSte;
  c.steps.reset();
  EXPECT_EQ(c.ResolvedSteps(), 2000);
  const PtqConfig back = nlohmann::json(c).get<PtqConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  EXPECT_EQ(test::CodeOf([] { nlohmann::json::parse(R"({"variant":"x"})").get<PtqConfig>(); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(test::CodeOf([] { nlohmann::json::parse(R"({"steps":"x"})").get<PtqConfig>(); }),
            ErrorCode::kInvalidConfig);
  PtqConfig bad;
  bad.variant = PtqVariant::kAdaRound;
  bad.steps = 100;
  bad.warmup_steps = 100;
  EXPECT_EQ(test::CodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidConfig);
  bad = PtqConfig{};
  bad.sample_size = 4;
  EXPECT_EQ(test::CodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidConfig);
}

Model MlpModel(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  Model m{{in},
          {BlockGraph{"b0", {Layer::Linear(in, hidden), Layer::LeakyRelu(0.2)}},
           BlockGraph{"b1", {Layer::Linear(hidden, out)}}}};
  for (auto& b : m.blocks) Randomize(b, rng);
  return m;
}

TEST(VanillaPtqTest, FullRangePairMatchesMinMaxObserver) {
  Rng rng(1);
  const Model fp = MlpModel(rng, 4, 6, 3);
  const Tensor inputs = rng.NormalTensor({40, 4});
  CalibrationConfig calib;
  calib.q_lo = 0.0;
  calib.q_hi = 1.0;
  const Model q = VanillaPtq(AttachQuantizers(fp, DefaultWeightSpec(), DefaultActivationSpec()),
                             inputs, calib);
  // Reference: min-max observers fed one full-precision sample at a time.
  ObserverState in_obs = ObserverState::MinMax(), act_obs = ObserverState::MinMax();
  for (std::size_t s = 0; s < 40; ++s) {
    const ModelForward f = Forward(fp, Row(inputs, s), {}, true);
    in_obs = Observe(in_obs, Row(inputs, s));
    act_obs = Observe(act_obs, f.traces[0].layers[1].pre_quant);
  }
  EXPECT_EQ(q.blocks[0].input_quant->params, Finalize(in_obs, DefaultActivationSpec()));
  EXPECT_EQ(q.blocks[0].layers[1].act_quant->params, Finalize(act_obs, DefaultActivationSpec()));
  EXPECT_EQ(q.blocks[1].layers[0].weight_quant->params,
            CalibrateWeight(*fp.blocks[1].layers[0].weight, DefaultWeightSpec(), 0.0001, 0.9999));
  EXPECT_EQ(test::CodeOf([&] {
              VanillaPtq(AttachQuantizers(fp, DefaultWeightSpec(), DefaultActivationSpec()),
                         Tensor(), calib);
            }),
            ErrorCode::kNotObserved);
}

TEST(VanillaPtqTest, QuantilesBeatMinMaxOnHeavyTails) {
  // Each sample carries 1024 Student-t(3) values through a leaky relu into
  // a 4-bit activation quantizer.
  Rng rng(2);
  const Model fp{{1024}, {BlockGraph{"b0", {Layer::LeakyRelu(0.2)}}}};
  Tensor inputs({200, 1024});
  for (double& v : inputs.data()) v = rng.StudentT(3);
  QuantizerSpec act = DefaultActivationSpec();
  act.bits = 4;
  const Model attached = AttachQuantizers(fp, DefaultWeightSpec(), act);
  CalibrationConfig mm, qt;
  mm.q_lo = 0.0;
  mm.q_hi = 1.0;
  qt.q_lo = 0.01;
  qt.q_hi = 0.99;
  const Tensor ref = ForwardFullPrecision(fp, inputs);
  const double mse_mm = MeanSquaredError(Forward(VanillaPtq(attached, inputs, mm), inputs).output, ref);
  const double mse_qt = MeanSquaredError(Forward(VanillaPtq(attached, inputs, qt), inputs).output, ref);
  EXPECT_LT(mse_qt, mse_mm) << mse_qt << " " << mse_mm;
}

TEST(BrecqTest, ExactBlockStaysPut) {
  BlockGraph b{"lin", {Layer::Linear(2, 2)}};
  b.layers[0].weight = Tensor({2, 2}, {0.25, -0.5, 0.75, 1.0});
  b.layers[0].bias = Tensor::FromList({0.5, -0.25});
  b.layers[0].weight_quant = WeightQuantNode{DefaultWeightSpec(), {{0.25}, {0}}, {}};
  b.layers[0].act_quant = QuantNode{DefaultActivationSpec(), {{0.25}, {128}}};
  Rng rng(3);
  Tensor x({32, 2});
  for (double& v : x.data()) v = std::round(rng.Uniform(-4, 4));
  const Tensor y = Forward(b, x, {.quantize = false}).output;
  for (PtqVariant variant : {PtqVariant::kSte, PtqVariant::kAdaRound}) {
    PtqConfig c;
    c.variant = variant;
    c.steps = 200;
    c.warmup_steps = 50;
    BlockReport rep;
    const BlockGraph out = BrecqReconstructBlock(b, x, y, c, &rep);
    EXPECT_EQ(rep.objective_before, 0.0);
    EXPECT_EQ(rep.objective_after, 0.0);
    EXPECT_EQ(*out.layers[0].weight, *b.layers[0].weight);
    EXPECT_EQ(out.layers[0].act_quant->params, b.layers[0].act_quant->params);
  }
}

TEST(BrecqTest, ZeroStepsIsIdentity) {
  Rng rng(4);
  const Model fp = MlpModel(rng, 3, 4, 2);
  const Tensor x = rng.NormalTensor({20, 3});
  const Model q = VanillaPtq(AttachQuantizers(fp, DefaultWeightSpec(), DefaultActivationSpec()),
                             x, {});
  PtqConfig c;
  c.steps = 0;
  c.sample_size = 20;
  const Model out = BrecqPipeline(q, x, c);
  EXPECT_EQ(nlohmann::json(out.blocks[0].layers[0].weight_quant->params),
            nlohmann::json(q.blocks[0].layers[0].weight_quant->params));
  EXPECT_EQ(*out.blocks[1].layers[0].weight, *q.blocks[1].layers[0].weight);
  EXPECT_EQ(Forward(out, x).output, Forward(q, x).output);
}

TEST(BrecqTest, Errors) {
  Rng rng(5);
  BlockGraph b{"lin", {Layer::Linear(2, 2)}};
  Randomize(b, rng);
  b.layers[0].weight_quant = WeightQuantNode{DefaultWeightSpec(), {}, {}};
  const Tensor x = rng.NormalTensor({20, 2});
  PtqConfig c;
  c.sample_size = 20;
  EXPECT_EQ(test::CodeOf([&] { BrecqReconstructBlock(b, x, x, c); }),
            ErrorCode::kInvalidConfig);
  b.layers[0].weight_quant->params = CalibrateWeight(*b.layers[0].weight, DefaultWeightSpec(), 0, 1);
  const Tensor huge = Mul(x, 1e200);
  EXPECT_EQ(test::CodeOf([&] { BrecqReconstructBlock(b, huge, huge, c); }),
            ErrorCode::kDivergedLoss);
  c.variant = PtqVariant::kVanilla;
  EXPECT_EQ(test::CodeOf([&] { BrecqReconstructBlock(b, x, x, c); }),
            ErrorCode::kInvalidConfig);
}

struct RoundingInstance {
  BlockGraph block;
  Tensor x, y;
  double optimum = 0, nearest = 0;
};

// A single Linear(in, out) layer with 3-bit symmetric weights and no
// activation quantizer, plus the exhaustive floor/ceil optimum.
RoundingInstance MakeRoundingInstance(std::uint64_t seed, std::size_t in, std::size_t out) {
  Rng rng(seed);
  RoundingInstance r;
  r.block = BlockGraph{"lin", {Layer::Linear(in, out)}};
  Randomize(r.block, rng, 1.0);
  Layer& l = r.block.layers[0];
  const QuantizerSpec spec = WeightSpec(3);
  l.weight_quant = WeightQuantNode{spec, CalibrateWeight(*l.weight, spec, 0, 1), {}};
  r.x = rng.NormalTensor({64, in});
  r.y = Forward(r.block, r.x, {.quantize = false}).output;
  const double d = l.weight_quant->params.delta[0];
  const std::size_t k = in * out;
  r.optimum = INFINITY;
  for (std::size_t mask = 0; mask < (1u << k); ++mask) {
    std::vector<double> w(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double f = std::floor((*l.weight)[i] / d) + ((mask >> i) & 1);
      w[i] = d * std::clamp(f, spec.t_min(), spec.t_max());
    }
    r.optimum = std::min(r.optimum, LinearObjective(w, *l.bias, r.x, r.y, in, out));
  }
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = d * std::clamp(test::NearestEven((*l.weight)[i] / d), spec.t_min(), spec.t_max());
  }
  r.nearest = LinearObjective(w, *l.bias, r.x, r.y, in, out);
  return r;
}

PtqConfig ArConfig() {
  PtqConfig c;
  c.variant = PtqVariant::kAdaRound;
  c.steps = 2000;
  c.warmup_steps = 200;
  c.eval_every = 10;
  c.sample_size = 64;
  return c;
}

TEST(BrecqTest, AdaRoundFindsExhaustiveOptimum) {
  int hits = 0;
  for (int seed = 0; seed < 10; ++seed) {
    const RoundingInstance r = MakeRoundingInstance(700 + seed, 4, 1);
    BlockReport rep;
    const BlockGraph out = BrecqReconstructBlock(r.block, r.x, r.y, ArConfig(), &rep);
    EXPECT_NEAR(rep.objective_before, r.nearest, 1e-9);
    EXPECT_LE(rep.objective_after, r.nearest + 1e-12);
    EXPECT_GE(rep.objective_after, r.optimum - 1e-9);
    hits += rep.objective_after <= r.optimum + 1e-9;
    // Weights are baked onto the grid.
    const Layer& l = out.layers[0];
    for (double w : l.weight->values()) {
      EXPECT_TRUE(test::OnGrid(w, l.weight_quant->spec, l.weight_quant->params.delta[0], 0));
    }
    EXPECT_FALSE(l.weight_quant->adaround.has_value());
  }
  EXPECT_GE(hits, 8);
}

TEST(BrecqTest, LargeLambdaBinarizes) {
  const RoundingInstance r = MakeRoundingInstance(42, 3, 2);
  PtqConfig c = ArConfig();
  c.lambda_reg = 10.0;
  BlockReport rep;
  BrecqReconstructBlock(r.block, r.x, r.y, c, &rep);
  EXPECT_GT(rep.final_binarization, 0.95);
}

BlockGraph ConvBlock(Rng& rng, int bits) {
  BlockGraph b{"conv", {Layer::Conv2d(2, 4, 3, 1, 1), Layer::LeakyRelu(0.2),
                        Layer::Conv2d(4, 2, 3, 1, 1)}};
  Randomize(b, rng);
  return b;
}

// Calibrated quantized conv block plus full-precision inputs and targets.
struct ConvSetup {
  BlockGraph block;
  Tensor x, y;
};

ConvSetup MakeConvSetup(std::uint64_t seed, int bits) {
  Rng rng(seed);
  Model fp{{2, 6, 6}, {ConvBlock(rng, bits)}};
  ConvSetup s;
  s.x = rng.NormalTensor({512, 2, 6, 6});
  s.y = ForwardFullPrecision(fp, s.x);
  AttachOptions opts{false, true};
  const Model q = VanillaPtq(AttachQuantizers(fp, WeightSpec(bits), DefaultActivationSpec(), opts),
                             s.x, {});
  s.block = q.blocks[0];
  return s;
}

TEST(BrecqTest, SteBeatsNearestRoundingBaseline) {
  const ConvSetup s = MakeConvSetup(8, 4);
  PtqConfig c;
  c.steps = 2000;
  c.sample_size = 512;
  BlockReport rep;
  BrecqReconstructBlock(s.block, s.x, s.y, c, &rep);
  EXPECT_LE(rep.objective_after, 0.7 * rep.objective_before)
      << rep.objective_before << " -> " << rep.objective_after;
}

TEST(BrecqTest, MoreBitsReachLowerObjective) {
  PtqConfig c;
  c.steps = 500;
  c.sample_size = 512;
  BlockReport r4, r8;
  const ConvSetup s4 = MakeConvSetup(9, 4), s8 = MakeConvSetup(9, 8);
  BrecqReconstructBlock(s4.block, s4.x, s4.y, c, &r4);
  BrecqReconstructBlock(s8.block, s8.x, s8.y, c, &r8);
  EXPECT_LE(r8.objective_after, r4.objective_after);
}

TEST(BrecqTest, Deterministic) {
  const ConvSetup s = MakeConvSetup(10, 4);
  PtqConfig c;
  c.steps = 100;
  c.sample_size = 512;
  const BlockGraph a = BrecqReconstructBlock(s.block, s.x, s.y, c);
  const BlockGraph b = BrecqReconstructBlock(s.block, s.x, s.y, c);
  for (std::size_t i : {0u, 2u}) {
    EXPECT_EQ(a.layers[i].weight_quant->params, b.layers[i].weight_quant->params);
    EXPECT_EQ(*a.layers[i].weight, *b.layers[i].weight);
  }
  EXPECT_EQ(a.layers[2].act_quant->params, b.layers[2].act_quant->params);
}

TEST(BrecqPipelineTest, CompositionAndImprovement) {
  Rng rng(12);
  Model fp{{4}, {}};
  EXPECT_TRUE(BrecqPipeline(fp, Tensor({1, 4}), PtqConfig{}).blocks.empty());

  fp = MlpModel(rng, 4, 8, 4);
  fp.blocks.push_back(BlockGraph{"b2", {Layer::Linear(4, 4), Layer::LeakyRelu(0.2)}, true});
  Randomize(fp.blocks[2], rng);
  const Tensor x = rng.NormalTensor({256, 4});
  const Model q = VanillaPtq(AttachQuantizers(fp, WeightSpec(4), DefaultActivationSpec()), x, {});
  PtqConfig c;
  c.steps = 300;
  c.sample_size = 256;
  std::vector<BlockReport> reps;
  const Model out = BrecqPipeline(q, x, c, &reps);
  ASSERT_EQ(reps.size(), 3u);
  const Tensor ref = ForwardFullPrecision(fp, x);
  EXPECT_LT(MeanSquaredError(Forward(out, x).output, ref),
            MeanSquaredError(Forward(q, x).output, ref));

  // One block: the pipeline equals a direct block call on the model input.
  Model single{{4}, {fp.blocks[0]}};
  const Model qs = VanillaPtq(AttachQuantizers(single, WeightSpec(4), DefaultActivationSpec()),
                              x, {});
  const Model piped = BrecqPipeline(qs, x, c);
  const BlockGraph direct =
      BrecqReconstructBlock(qs.blocks[0], x, ForwardFullPrecision(single, x), c);
  EXPECT_EQ(*piped.blocks[0].layers[0].weight, *direct.layers[0].weight);
  EXPECT_EQ(piped.blocks[0].input_quant->params, direct.input_quant->params);
}

}  // namespace
}  // namespace qf
