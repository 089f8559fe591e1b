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
#include "qf/quant.h"
#include "qf/rng.h"
#include "test_util.h"

namespace qf {
namespace {

QuantizerSpec Sym(int bits, Estimator est = Estimator::kSte) {
  QuantizerSpec s;
  s.bits = bits;
  s.estimator = est;
  return s;
}

QuantizerSpec Aff(int bits, Estimator est = Estimator::kSte) {
  QuantizerSpec s = Sym(bits, est);
  s.mode = QuantMode::kAffine;
  return s;
}

QuantParams P(double delta, double z = 0.0) { return QuantParams{{delta}, {z}}; }

double FQ(double x, const QuantizerSpec& spec, const QuantParams& p) {
  return FakeQuant(Tensor::FromList({x}), spec, p)[0];
}

TEST(QuantSpecTest, Ranges) {
  EXPECT_EQ(Sym(8).t_min(), -128);
  EXPECT_EQ(Sym(8).t_max(), 127);
  EXPECT_EQ(Sym(4).t_min(), -8);
  EXPECT_EQ(Sym(4).t_max(), 7);
  EXPECT_EQ(Aff(8).t_min(), 0);
  EXPECT_EQ(Aff(8).t_max(), 255);
  EXPECT_EQ(Aff(2).t_max(), 3);
  EXPECT_EQ(test::CodeOf([] { Sym(9).Validate(); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(test::CodeOf([] { Sym(1).Validate(); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(DefaultWeightSpec().mode, QuantMode::kSymmetricSigned);
  EXPECT_EQ(DefaultActivationSpec().mode, QuantMode::kAffine);
}

TEST(RoundTest, HalfToEven) {
  EXPECT_EQ(RoundHalfEven(2.5), 2.0);
  EXPECT_EQ(RoundHalfEven(3.5), 4.0);
  EXPECT_EQ(RoundHalfEven(-2.5), -2.0);
  EXPECT_EQ(RoundHalfEven(-3.5), -4.0);
  EXPECT_EQ(RoundHalfEven(2.6), 3.0);
  EXPECT_EQ(RoundHalfEven(-0.4), 0.0);
  EXPECT_EQ(RoundHalfEven(127.5), 128.0);
}

TEST(FakeQuantTest, Examples) {
  EXPECT_DOUBLE_EQ(FQ(0.26, Sym(8), P(0.1)), 0.3);
  EXPECT_DOUBLE_EQ(FQ(-20.0, Sym(8), P(0.1)), -12.8);
  EXPECT_DOUBLE_EQ(FQ(-0.53, Aff(8), P(0.1, 10)), -0.5);
  EXPECT_DOUBLE_EQ(FQ(-2.0, Aff(8), P(0.1, 10)), -1.0);
}

TEST(FakeQuantTest, ZeroPointIsRoundedForForward) {
  // Shadow zero point 9.7 behaves exactly like 10.
  EXPECT_EQ(FQ(-0.53, Aff(8), P(0.1, 9.7)), FQ(-0.53, Aff(8), P(0.1, 10)));
}

TEST(FakeQuantTest, Errors) {
  EXPECT_EQ(test::CodeOf([] { FQ(1.0, Sym(8), P(0.0)); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(test::CodeOf([] { FQ(1.0, Sym(8), P(-1.0)); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(test::CodeOf([] { FQ(1.0, Sym(8), P(0.1, 3)); }), ErrorCode::kInvalidParams);
  EXPECT_EQ(test::CodeOf([] {
              FakeQuant(Tensor({2}), Sym(8), QuantParams{{0.1, 0.1}, {0, 0}});
            }),
            ErrorCode::kInvalidParams);
  QuantizerSpec pc = Sym(8);
  pc.granularity = Granularity::kPerChannel;
  pc.axis = 3;
  EXPECT_EQ(test::CodeOf([&] { FakeQuant(Tensor({2, 2}), pc, P(0.1)); }),
            ErrorCode::kInvalidParams);
  EXPECT_EQ(test::CodeOf([] { FQ(NAN, Sym(8), P(0.1)); }), ErrorCode::kNonFinite);
}

TEST(FakeQuantTest, PerChannelGroupsFollowAxis) {
  QuantizerSpec pc = Sym(4);
  pc.granularity = Granularity::kPerChannel;
  pc.axis = 0;
  Tensor w({2, 3}, {0.11, 0.22, 0.33, 0.11, 0.22, 0.33});
  Tensor q = FakeQuant(w, pc, QuantParams{{0.1, 0.2}, {0, 0}});
  EXPECT_DOUBLE_EQ(q[0], 0.1);
  EXPECT_DOUBLE_EQ(q[2], 0.3);
  EXPECT_DOUBLE_EQ(q[3], 0.2);
  EXPECT_DOUBLE_EQ(q[5], 0.4);
}

// Property checks over random inputs, both modes and granularities.
class GridPropertyTest : public ::testing::TestWithParam<std::tuple<int, bool, bool>> {};

TEST_P(GridPropertyTest, MembershipIdempotenceMonotonicity) {
  const auto [bits, affine, per_channel] = GetParam();
  QuantizerSpec spec = affine ? Aff(bits) : Sym(bits);
  Rng rng(1000 + bits * 4 + affine * 2 + per_channel);
  const std::size_t channels = per_channel ? 4 : 1;
  if (per_channel) {
    spec.granularity = Granularity::kPerChannel;
    spec.axis = 1;
  }
  QuantParams params;
  for (std::size_t c = 0; c < channels; ++c) {
    params.delta.push_back(rng.Uniform(0.01, 0.5));
    params.zero_point.push_back(affine ? std::floor(rng.Uniform(0, spec.t_max())) : 0.0);
  }
  Tensor x({500, channels});
  for (double& v : x.data()) v = rng.Uniform(-40, 40);
  Tensor q = FakeQuant(x, spec, params);
  Tensor qq = FakeQuant(q, spec, params);
  const GroupIndexer group(spec, x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t g = group(i);
    EXPECT_TRUE(test::OnGrid(q[i], spec, params.delta[g], params.zero_point[g]))
        << "x=" << x[i] << " q=" << q[i];
    EXPECT_EQ(qq[i], q[i]);
    if (!affine) {
      EXPECT_GE(q[i], params.delta[g] * spec.t_min());
      EXPECT_LE(q[i], params.delta[g] * spec.t_max());
    }
  }
  // Monotonicity within each group: sort by x, outputs must not decrease.
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < 500; ++r) pts.emplace_back(x[r * channels + c], q[r * channels + c]);
    std::sort(pts.begin(), pts.end());
    for (std::size_t k = 1; k < pts.size(); ++k) EXPECT_LE(pts[k - 1].second, pts[k].second);
  }
}

INSTANTIATE_TEST_SUITE_P(AllModes, GridPropertyTest,
                         ::testing::Combine(::testing::Values(2, 4, 8), ::testing::Bool(),
                                            ::testing::Bool()));

TEST(SteTest, Examples) {
  Tensor x = Tensor::FromList({0.5, 20.0, -20.0});
  Tensor g = BackwardSte(Tensor::FromList({1, 1, 1}), x, Sym(8), P(0.1));
  EXPECT_EQ(g.values(), (std::vector<double>{1, 0, 0}));
}

TEST(SteTest, MatchesClampSurrogateFiniteDifferences) {
  Rng rng(21);
  for (bool affine : {false, true}) {
    QuantizerSpec spec = affine ? Aff(4) : Sym(4);
    QuantParams p = P(0.25, affine ? 5 : 0);
    Tensor x = rng.UniformTensor({200}, -4, 4);
    Tensor go = rng.UniformTensor({200}, -1, 1);
    Tensor g = BackwardSte(go, x, spec, p);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double s = x[i] / 0.25 + p.zero_point[0];
      if (std::fabs(s - spec.t_min()) < 0.05 || std::fabs(s - spec.t_max()) < 0.05) continue;
      const double fd = test::CentralDiff(
          [&](double xx) { return go[i] * test::ClampSurrogate(xx, spec, 0.25, p.zero_point[0]); },
          x[i]);
      EXPECT_NEAR(g[i], fd, 1e-6);
    }
  }
}

TEST(LsqTest, Examples) {
  const double g127 = 1.0 / std::sqrt(127.0);
  {
    LsqGrads g = BackwardLsq(Tensor::FromList({1}), Tensor::FromList({0.4}),
                             Sym(8, Estimator::kLsq), P(1.0));
    EXPECT_NEAR(g.grad_delta[0], -0.4 * g127, 1e-15);
    EXPECT_EQ(g.grad_x[0], 1.0);
  }
  {
    LsqGrads g = BackwardLsq(Tensor::FromList({1}), Tensor::FromList({500}),
                             Sym(8, Estimator::kLsq), P(1.0));
    EXPECT_NEAR(g.grad_delta[0], 127.0 * g127, 1e-12);
    EXPECT_EQ(g.grad_x[0], 0.0);
  }
  {
    Tensor x = Tensor::FromList({0.3, -0.6, 1.2, 0.0});
    LsqGrads g = BackwardLsq(Tensor::FromList({1, 1, 1, 1}), x, Sym(8, Estimator::kLsq),
                             P(0.3));
    EXPECT_NEAR(g.grad_delta[0], 0.0, 1e-12);
  }
}

TEST(LsqTest, GradXEqualsSte) {
  Rng rng(8);
  Tensor x = rng.UniformTensor({300}, -3, 3);
  Tensor go = rng.UniformTensor({300}, -1, 1);
  for (const auto& spec : {Sym(4, Estimator::kLsq), Aff(4, Estimator::kLsq)}) {
    QuantParams p = P(0.2, spec.mode == QuantMode::kAffine ? 7 : 0);
    EXPECT_EQ(BackwardLsq(go, x, spec, p).grad_x, BackwardSte(go, x, spec, p));
  }
}

TEST(LsqTest, MatchesSurrogateFiniteDifferences) {
  // Points with |s - round(s)| <= 0.05 or within half a step of the clamp
  // limits are skipped.
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const bool affine = seed % 2;
    QuantizerSpec spec = affine ? Aff(4, Estimator::kLsq) : Sym(4, Estimator::kLsq);
    const double delta = rng.Uniform(0.1, 0.4);
    const double z = affine ? std::floor(rng.Uniform(2, 12)) : 0.0;
    Tensor x = rng.UniformTensor({40}, -4, 4);
    Tensor go = rng.UniformTensor({40}, -1, 1);
    // Keep only well-conditioned points.
    std::vector<double> keep_x, keep_g;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double s = x[i] / delta + z;
      if (std::fabs(s - RoundHalfEven(s)) <= 0.05) continue;
      // The surrogate kinks where round(s) touches the clamp limits.
      if (std::fabs(s - spec.t_min()) <= 0.5 || std::fabs(s - spec.t_max()) <= 0.5) continue;
      keep_x.push_back(x[i]);
      keep_g.push_back(go[i]);
    }
    Tensor xs({keep_x.size()}, keep_x), gs({keep_g.size()}, keep_g);
    LsqGrads g = BackwardLsq(gs, xs, spec, P(delta, z));
    const double scale = LsqGradScale(xs.numel(), spec);
    auto total = [&](double d, double zz) {
      double acc = 0;
      for (std::size_t i = 0; i < xs.numel(); ++i)
        acc += gs[i] * test::LsqSurrogate(xs[i], spec, delta, z, d, zz);
      return acc;
    };
    const double fd_delta =
        scale * test::CentralDiff([&](double d) { return total(d, z); }, delta, 1e-7);
    EXPECT_NEAR(g.grad_delta[0], fd_delta, 1e-4 * std::max(1.0, std::fabs(fd_delta)));
    if (affine) {
      const double fd_zero =
          scale * test::CentralDiff([&](double zz) { return total(delta, zz); }, z, 1e-7);
      EXPECT_NEAR(g.grad_zero[0], fd_zero, 1e-4 * std::max(1.0, std::fabs(fd_zero)));
    } else {
      EXPECT_EQ(g.grad_zero[0], 0.0);
    }
  }
}

TEST(LsqTest, PerChannelScaleUsesGroupSize) {
  QuantizerSpec spec = Sym(8, Estimator::kLsq);
  spec.granularity = Granularity::kPerChannel;
  spec.axis = 0;
  Tensor x({2, 4}, {0.4, 0.4, 0.4, 0.4, 1000, 0, 0, 0});
  LsqGrads g = BackwardLsq(Tensor({2, 4}, 1.0), x, spec, QuantParams{{1, 1}, {0, 0}});
  const double scale = 1.0 / std::sqrt(4.0 * 127.0);
  EXPECT_NEAR(g.grad_delta[0], 4 * -0.4 * scale, 1e-12);
  EXPECT_NEAR(g.grad_delta[1], 127.0 * scale, 1e-12);
}

TEST(AdaRoundTest, SoftValues) {
  QuantizerSpec spec = Sym(4, Estimator::kAdaRound);
  Tensor w = Tensor::FromList({0.33, -0.17});
  AdaRoundState st;
  st.v = Tensor({2}, 0.0);
  Tensor soft = QuantizeWeightAdaRound(w, spec, P(0.1), st, false);
  EXPECT_NEAR(soft[0], 0.1 * (3 + 0.5), 1e-15);
  EXPECT_NEAR(soft[1], 0.1 * (-2 + 0.5), 1e-15);
  st.v = Tensor::FromList({10, -10});
  Tensor q = QuantizeWeightAdaRound(w, spec, P(0.1), st, false);
  EXPECT_NEAR(q[0], 0.4, 1e-15);
  EXPECT_NEAR(q[1], -0.2, 1e-15);
}

TEST(AdaRoundTest, InitReproducesWeightsAndHardIsNearest) {
  Rng rng(4);
  QuantizerSpec spec = Sym(4, Estimator::kAdaRound);
  Tensor w = rng.UniformTensor({50}, -0.7, 0.7);
  QuantParams p = P(0.1);
  AdaRoundState st = InitAdaRound(w, spec, p);
  Tensor soft = QuantizeWeightAdaRound(w, spec, p, st, false);
  Tensor hard = QuantizeWeightAdaRound(w, spec, p, st, true);
  Tensor nearest = FakeQuant(w, spec, p);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    EXPECT_NEAR(soft[i], w[i], 1e-12);
    EXPECT_DOUBLE_EQ(hard[i], nearest[i]);
    EXPECT_TRUE(test::OnGrid(hard[i], spec, 0.1, 0));
    // Soft values stay within half a step of some grid point.
    const double k = RoundHalfEven(soft[i] / 0.1);
    EXPECT_LE(std::fabs(soft[i] - 0.1 * k), 0.05 + 1e-12);
  }
}

TEST(AdaRoundTest, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  QuantizerSpec spec = Sym(4, Estimator::kAdaRound);
  Tensor w = rng.UniformTensor({30}, -0.6, 0.6);
  QuantParams p = P(0.1);
  AdaRoundState st;
  st.v = rng.UniformTensor({30}, -4, 4);
  st.v[0] = 8.0;  // clamped at h = 1: zero gradient
  Tensor go = rng.UniformTensor({30}, -1, 1);
  Tensor gv = BackwardAdaRound(go, w, spec, p, st);
  EXPECT_EQ(gv[0], 0.0);
  for (std::size_t i = 1; i < w.numel(); ++i) {
    const double fd = test::CentralDiff(
        [&](double vi) {
          AdaRoundState s2 = st;
          s2.v[i] = vi;
          return go[i] * QuantizeWeightAdaRound(w, spec, p, s2, false)[i];
        },
        st.v[i]);
    EXPECT_NEAR(gv[i], fd, 1e-6 * std::max(1.0, std::fabs(fd)));
  }
}

TEST(AdaRoundTest, RegularizerExamples) {
  AdaRoundState st;
  st.lambda_reg = 1.0;
  st.v = Tensor({5}, 0.0);
  EXPECT_EQ(AdaRoundRegularizer(st, 0, 20000, 4000).loss, 0.0);
  EXPECT_NEAR(AdaRoundRegularizer(st, 2.0).loss, 5.0, 1e-12);
  // The last step runs at beta_end.
  EXPECT_EQ(AdaRoundBeta(st, 19999, 20000, 4000), 2.0);
  EXPECT_EQ(AdaRoundBeta(st, 4000, 20000, 4000), 20.0);
  EXPECT_NEAR(AdaRoundRegularizer(st, 19999, 20000, 4000).loss, 5.0, 1e-12);
  st.v = Tensor::FromList({12, -12, 30});
  EXPECT_EQ(AdaRoundRegularizer(st, 7.0).loss, 0.0);
  EXPECT_EQ(test::CodeOf([&] { AdaRoundRegularizer(st, 20000, 20000, 4000); }),
            ErrorCode::kInvalidParams);
}

TEST(AdaRoundTest, RegularizerGradient) {
  Rng rng(6);
  AdaRoundState st;
  st.lambda_reg = 0.3;
  st.v = rng.UniformTensor({25}, -3, 3);
  for (double beta : {2.0, 7.5, 20.0}) {
    RegularizerResult r = AdaRoundRegularizer(st, beta);
    for (std::size_t i = 0; i < st.v.numel(); ++i) {
      const double fd = test::CentralDiff(
          [&](double vi) {
            AdaRoundState s2 = st;
            s2.v[i] = vi;
            return AdaRoundRegularizer(s2, beta).loss;
          },
          st.v[i]);
      EXPECT_NEAR(r.grad_v[i], fd, 1e-5 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(QuantJsonTest, RoundTrip) {
  QuantizerSpec spec = Aff(4, Estimator::kLsq);
  spec.granularity = Granularity::kPerChannel;
  spec.axis = 1;
  nlohmann::json j = spec;
  EXPECT_EQ(j["mode"], "affine");
  EXPECT_EQ(j["estimator"], "lsq");
  EXPECT_EQ(j["granularity"], "per_channel");
  EXPECT_EQ(j.get<QuantizerSpec>(), spec);
  QuantParams p{{0.5, 0.25}, {3, 7}};
  nlohmann::json jp = p;
  EXPECT_EQ(jp.get<QuantParams>(), p);
  EXPECT_EQ(test::CodeOf([] { nlohmann::json{{"bits", 8}, {"mode", "weird"}}.get<QuantizerSpec>(); }),
            ErrorCode::kInvalidParams);
}

}  // namespace
}  // namespace qf
