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

#include "qf/quant.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qf/error.h"

namespace qf {

double QuantizerSpec::t_min() const {
  return mode == QuantMode::kSymmetricSigned ? -std::ldexp(1.0, bits - 1) : 0.0;
}

double QuantizerSpec::t_max() const {
  return mode == QuantMode::kSymmetricSigned ? std::ldexp(1.0, bits - 1) - 1.0
                                             : std::ldexp(1.0, bits) - 1.0;
}

void QuantizerSpec::Validate() const {
  if (bits < 2 || bits > 8) {
    throw Error(ErrorCode::kInvalidParams,
                "bits must be in [2, 8], got " + std::to_string(bits));
  }
}

std::size_t QuantizerSpec::GroupCount(const Shape& shape) const {
  if (granularity == Granularity::kPerTensor) return 1;
  if (axis >= shape.size()) {
    throw Error(ErrorCode::kInvalidParams,
                "per-channel axis " + std::to_string(axis) +
                    " invalid for shape " + ShapeToString(shape));
  }
  return shape[axis];
}

QuantizerSpec DefaultWeightSpec() { return QuantizerSpec{}; }

QuantizerSpec DefaultActivationSpec() {
  QuantizerSpec spec;
  spec.mode = QuantMode::kAffine;
  return spec;
}

double QuantParams::ForwardZero(std::size_t g) const {
  return RoundHalfEven(zero_point[g]);
}

void ValidateParams(const QuantizerSpec& spec, const QuantParams& params,
                    const Shape& shape) {
  spec.Validate();
  const std::size_t groups = spec.GroupCount(shape);
  if (params.delta.size() != groups || params.zero_point.size() != groups) {
    throw Error(ErrorCode::kInvalidParams,
                "expected " + std::to_string(groups) + " groups, params hold " +
                    std::to_string(params.delta.size()) + " deltas and " +
                    std::to_string(params.zero_point.size()) + " zero points");
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (!(params.delta[g] > 0.0) || !std::isfinite(params.delta[g])) {
      throw Error(ErrorCode::kInvalidParams,
                  "delta must be positive, group " + std::to_string(g));
    }
    if (!std::isfinite(params.zero_point[g])) {
      throw Error(ErrorCode::kInvalidParams, "non-finite zero point");
    }
    if (spec.mode == QuantMode::kSymmetricSigned && params.zero_point[g] != 0.0) {
      throw Error(ErrorCode::kInvalidParams,
                  "symmetric quantizer with nonzero zero point");
    }
  }
}

GroupIndexer::GroupIndexer(const QuantizerSpec& spec, const Shape& shape) {
  if (spec.granularity == Granularity::kPerChannel) {
    per_channel_ = true;
    channels_ = spec.GroupCount(shape);
    for (std::size_t a = spec.axis + 1; a < shape.size(); ++a) inner_ *= shape[a];
  }
}

double RoundHalfEven(double x) {
  const double f = std::floor(x);
  const double diff = x - f;
  if (diff < 0.5) return f;
  if (diff > 0.5) return f + 1.0;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

namespace {

void CheckInput(const Tensor& x) { x.CheckFinite("fake_quant input"); }

void CheckSameShape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "gradient shape " + ShapeToString(a.shape()) +
                    " does not match input " + ShapeToString(b.shape()));
  }
}

}  // namespace

Tensor FakeQuant(const Tensor& x, const QuantizerSpec& spec,
                 const QuantParams& params) {
  ValidateParams(spec, params, x.shape());
  CheckInput(x);
  const GroupIndexer group(spec, x.shape());
  const double lo = spec.t_min(), hi = spec.t_max();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t g = group(i);
    const double delta = params.delta[g];
    const double z = params.ForwardZero(g);
    const double k = std::clamp(RoundHalfEven(x[i] / delta + z), lo, hi);
    out[i] = delta * (k - z);
  }
  return out;
}

Tensor BackwardSte(const Tensor& grad_out, const Tensor& x,
                   const QuantizerSpec& spec, const QuantParams& params) {
  ValidateParams(spec, params, x.shape());
  CheckSameShape(grad_out, x);
  const GroupIndexer group(spec, x.shape());
  const double lo = spec.t_min(), hi = spec.t_max();
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t g = group(i);
    const double s = x[i] / params.delta[g] + params.ForwardZero(g);
    grad[i] = (s >= lo && s <= hi) ? grad_out[i] : 0.0;
  }
  return grad;
}

double LsqGradScale(std::size_t group_numel, const QuantizerSpec& spec) {
  return 1.0 / std::sqrt(static_cast<double>(group_numel) * spec.t_max());
}

LsqGrads BackwardLsq(const Tensor& grad_out, const Tensor& x,
                     const QuantizerSpec& spec, const QuantParams& params) {
  ValidateParams(spec, params, x.shape());
  CheckSameShape(grad_out, x);
  const GroupIndexer group(spec, x.shape());
  const std::size_t groups = group.groups();
  const double lo = spec.t_min(), hi = spec.t_max();
  LsqGrads out{Tensor(x.shape()), std::vector<double>(groups, 0.0),
               std::vector<double>(groups, 0.0)};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t g = group(i);
    const double delta = params.delta[g];
    const double z = params.ForwardZero(g);
    const double s = x[i] / delta + z;
    const double go = grad_out[i];
    if (s < lo) {
      out.grad_delta[g] += go * (lo - z);
      out.grad_zero[g] += go * -delta;
    } else if (s > hi) {
      out.grad_delta[g] += go * (hi - z);
      out.grad_zero[g] += go * -delta;
    } else {
      out.grad_x[i] = go;
      out.grad_delta[g] += go * (RoundHalfEven(s) - s);
    }
  }
  const double group_numel = static_cast<double>(x.numel() / groups);
  const double scale = 1.0 / std::sqrt(group_numel * hi);
  for (std::size_t g = 0; g < groups; ++g) {
    out.grad_delta[g] *= scale;
    out.grad_zero[g] *= scale;
    if (spec.mode == QuantMode::kSymmetricSigned) out.grad_zero[g] = 0.0;
  }
  return out;
}

double AdaRoundState::H(double logit) const {
  const double sig = 1.0 / (1.0 + std::exp(-logit));
  return std::clamp(sig * (zeta - gamma) + gamma, 0.0, 1.0);
}

double AdaRoundState::DhDv(double logit) const {
  const double sig = 1.0 / (1.0 + std::exp(-logit));
  const double raw = sig * (zeta - gamma) + gamma;
  if (raw <= 0.0 || raw >= 1.0) return 0.0;
  return sig * (1.0 - sig) * (zeta - gamma);
}

AdaRoundState InitAdaRound(const Tensor& w, const QuantizerSpec& spec,
                           const QuantParams& params) {
  ValidateParams(spec, params, w.shape());
  AdaRoundState state;
  state.v = Tensor(w.shape());
  const GroupIndexer group(spec, w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const std::size_t g = group(i);
    const double scaled = w[i] / params.delta[g] + params.ForwardZero(g);
    const double rest = scaled - std::floor(scaled);
    // Inverse of the rectified sigmoid; rest is in [0, 1), strictly inside
    // (gamma, zeta), so the logit is finite.
    state.v[i] = -std::log((state.zeta - state.gamma) / (rest - state.gamma) - 1.0);
  }
  return state;
}

namespace {

void CheckAdaRound(const Tensor& w, const AdaRoundState& state) {
  if (state.v.shape() != w.shape()) {
    throw Error(ErrorCode::kInvalidParams,
                "adaround logits shape " + ShapeToString(state.v.shape()) +
                    " does not match weight " + ShapeToString(w.shape()));
  }
}

}  // namespace

Tensor QuantizeWeightAdaRound(const Tensor& w, const QuantizerSpec& spec,
                              const QuantParams& params,
                              const AdaRoundState& state, bool hard) {
  ValidateParams(spec, params, w.shape());
  CheckAdaRound(w, state);
  const GroupIndexer group(spec, w.shape());
  const double lo = spec.t_min(), hi = spec.t_max();
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const std::size_t g = group(i);
    const double delta = params.delta[g];
    const double z = params.ForwardZero(g);
    double h = state.H(state.v[i]);
    if (hard) h = h >= 0.5 ? 1.0 : 0.0;
    const double k = std::clamp(std::floor(w[i] / delta + z) + h, lo, hi);
    out[i] = delta * (k - z);
  }
  return out;
}

Tensor BackwardAdaRound(const Tensor& grad_out, const Tensor& w,
                        const QuantizerSpec& spec, const QuantParams& params,
                        const AdaRoundState& state) {
  ValidateParams(spec, params, w.shape());
  CheckAdaRound(w, state);
  CheckSameShape(grad_out, w);
  const GroupIndexer group(spec, w.shape());
  const double lo = spec.t_min(), hi = spec.t_max();
  Tensor grad_v(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const std::size_t g = group(i);
    const double delta = params.delta[g];
    const double k = std::floor(w[i] / delta + params.ForwardZero(g)) +
                     state.H(state.v[i]);
    if (k < lo || k > hi) continue;
    grad_v[i] = grad_out[i] * delta * state.DhDv(state.v[i]);
  }
  return grad_v;
}

double AdaRoundBeta(const AdaRoundState& state, int step, int total_steps,
                    int warmup_steps) {
  if (step < warmup_steps) return state.beta_start;
  const int span = std::max(1, total_steps - warmup_steps - 1);
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return state.beta_end + 0.5 * (state.beta_start - state.beta_end) *
                              (1.0 + std::cos(std::numbers::pi * t));
}

RegularizerResult AdaRoundRegularizer(const AdaRoundState& state, double beta) {
  if (state.lambda_reg < 0.0 || !(beta > 0.0)) {
    throw Error(ErrorCode::kInvalidParams, "regularizer needs lambda >= 0, beta > 0");
  }
  RegularizerResult r{0.0, Tensor(state.v.shape())};
  for (std::size_t i = 0; i < state.v.numel(); ++i) {
    const double h = state.H(state.v[i]);
    const double a = 2.0 * h - 1.0;
    const double mag = std::fabs(a);
    r.loss += 1.0 - std::pow(mag, beta);
    const double sign = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
    const double dloss_dh = -beta * std::pow(mag, beta - 1.0) * sign * 2.0;
    r.grad_v[i] = state.lambda_reg * dloss_dh * state.DhDv(state.v[i]);
  }
  r.loss *= state.lambda_reg;
  return r;
}

RegularizerResult AdaRoundRegularizer(const AdaRoundState& state, int step,
                                      int total_steps, int warmup_steps) {
  if (step < 0 || step >= total_steps || warmup_steps < 0) {
    throw Error(ErrorCode::kInvalidParams,
                "regularizer step " + std::to_string(step) + " outside [0, " +
                    std::to_string(total_steps) + ")");
  }
  if (step < warmup_steps) return {0.0, Tensor(state.v.shape())};
  return AdaRoundRegularizer(state, AdaRoundBeta(state, step, total_steps, warmup_steps));
}

namespace {

const char* ModeName(QuantMode m) {
  return m == QuantMode::kSymmetricSigned ? "symmetric_signed" : "affine";
}

const char* EstimatorName(Estimator e) {
  switch (e) {
    case Estimator::kSte: return "ste";
    case Estimator::kLsq: return "lsq";
    case Estimator::kAdaRound: return "adaround";
  }
  return "ste";
}

[[noreturn]] void BadField(const std::string& what) {
  throw Error(ErrorCode::kInvalidParams, "quantizer json: " + what);
}

}  // namespace

void to_json(nlohmann::json& j, const QuantizerSpec& spec) {
  j = nlohmann::json{
      {"bits", spec.bits},
      {"mode", ModeName(spec.mode)},
      {"granularity", spec.granularity == Granularity::kPerTensor ? "per_tensor"
                                                                  : "per_channel"},
      {"axis", spec.axis},
      {"round_mode", "half_to_even"},
      {"estimator", EstimatorName(spec.estimator)},
  };
}

void from_json(const nlohmann::json& j, QuantizerSpec& spec) {
  try {
    spec.bits = j.at("bits").get<int>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "symmetric_signed") {
      spec.mode = QuantMode::kSymmetricSigned;
    } else if (mode == "affine") {
      spec.mode = QuantMode::kAffine;
    } else {
      BadField("mode " + mode);
    }
    const auto gran = j.value("granularity", std::string("per_tensor"));
    if (gran == "per_tensor") {
      spec.granularity = Granularity::kPerTensor;
    } else if (gran == "per_channel") {
      spec.granularity = Granularity::kPerChannel;
    } else {
      BadField("granularity " + gran);
    }
    spec.axis = j.value("axis", std::size_t{0});
    if (j.value("round_mode", std::string("half_to_even")) != "half_to_even") {
      BadField("round_mode");
    }
    const auto est = j.value("estimator", std::string("ste"));
    if (est == "ste") {
      spec.estimator = Estimator::kSte;
    } else if (est == "lsq") {
      spec.estimator = Estimator::kLsq;
    } else if (est == "adaround") {
      spec.estimator = Estimator::kAdaRound;
    } else {
      BadField("estimator " + est);
    }
  } catch (const nlohmann::json::exception& e) {
    BadField(e.what());
  }
  spec.Validate();
}

void to_json(nlohmann::json& j, const QuantParams& params) {
  j = nlohmann::json{{"delta", params.delta}, {"zero_point", params.zero_point}};
}

void from_json(const nlohmann::json& j, QuantParams& params) {
  try {
    params.delta = j.at("delta").get<std::vector<double>>();
    params.zero_point = j.at("zero_point").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    BadField(e.what());
  }
}

}  // namespace qf
