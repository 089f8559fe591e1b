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

#include "qf/commands.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>

#include <spdlog/spdlog.h>

#include "qf/model_io.h"
#include "qf/observer.h"
#include "qf/ptq.h"
#include "qf/qat.h"
#include "qf/tensor_io.h"
#include "qf/toy.h"

namespace qf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path& Need(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw Error(ErrorCode::kInvalidConfig, std::string("missing ") + flag);
  return *p;
}

const fs::path& OneModel(const CommandArgs& args) {
  if (args.models.size() != 1) throw Error(ErrorCode::kInvalidConfig, "expected one --model");
  return args.models[0];
}

json ReadConfig(const std::optional<fs::path>& path) {
  if (!path) return json::object();
  try {
    json j = json::parse(ReadFileBytes(*path));
    if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path->string() + ": " + e.what());
  }
}

template <typename T>
T Parse(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string(what) + ": " + e.what());
  }
}

json InputHashes(const CommandArgs& args) {
  json h = json::object();
  for (const fs::path& m : args.models) h[m.string()] = HashPath(m);
  if (args.data) h[args.data->string()] = HashPath(*args.data);
  if (args.config) h[args.config->string()] = HashPath(*args.config);
  return h;
}

json Header(const char* command, const CommandArgs& args, const json& config,
            std::uint64_t seed) {
  return {{"command", command}, {"config", config}, {"seed", seed},
          {"inputs", InputHashes(args)}};
}

json NumberOrString(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

bool IsCalibrated(const Model& m) {
  if (!HasQuantizers(m)) return false;
  for (const BlockGraph& b : m.blocks) {
    if (b.input_quant && !b.input_quant->params.initialized()) return false;
    for (const Layer& l : b.layers) {
      if (l.weight_quant && !l.weight_quant->params.initialized()) return false;
      if (l.act_quant && !l.act_quant->params.initialized()) return false;
    }
  }
  return true;
}

json QuantizerTable(const Model& m) {
  json out = json::array();
  auto add = [&](const std::string& name, const QuantizerSpec& spec, const QuantParams& p) {
    out.push_back({{"quantizer", name}, {"spec", spec}, {"delta", p.delta},
                   {"zero_point", p.zero_point}});
  };
  for (const BlockGraph& b : m.blocks) {
    if (b.input_quant) add(b.name + ".input", b.input_quant->spec, b.input_quant->params);
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
      const Layer& l = b.layers[i];
      const std::string base = b.name + ".layer" + std::to_string(i);
      if (l.weight_quant) add(base + ".weight", l.weight_quant->spec, l.weight_quant->params);
      if (l.act_quant) add(base + ".act", l.act_quant->spec, l.act_quant->params);
    }
  }
  return out;
}

struct Attach {
  QuantizerSpec weight = DefaultWeightSpec();
  QuantizerSpec act = DefaultActivationSpec();
  AttachOptions options;
};

Attach ParseAttach(const json& j) {
  Attach a;
  if (j.contains("weight_spec")) a.weight = Parse<QuantizerSpec>(j.at("weight_spec"), "weight_spec");
  if (j.contains("act_spec")) a.act = Parse<QuantizerSpec>(j.at("act_spec"), "act_spec");
  a.options.quantize_input = Parse<bool>(j.value("quantize_input", json(true)), "quantize_input");
  a.options.quantize_output = Parse<bool>(j.value("quantize_output", json(true)), "quantize_output");
  return a;
}

json AttachJson(const Attach& a) {
  return {{"weight_spec", a.weight}, {"act_spec", a.act},
          {"quantize_input", a.options.quantize_input},
          {"quantize_output", a.options.quantize_output}};
}

// Quantizers attached when absent, then calibrated when any parameter is empty.
Model EnsureCalibrated(Model m, const Tensor& inputs, const Attach& attach,
                       const CalibrationConfig& calib, bool* calibrated) {
  *calibrated = false;
  if (!HasQuantizers(m)) m = AttachQuantizers(std::move(m), attach.weight, attach.act, attach.options);
  if (IsCalibrated(m)) return m;
  spdlog::info("calibrating on {} samples", std::min<std::size_t>(calib.num_batches, inputs.dim(0)));
  *calibrated = true;
  return VanillaPtq(std::move(m), inputs, calib);
}

struct OutputMetrics {
  std::vector<double> per_sample;
  double mse = 0.0;
  double psnr = 0.0;
  double max_abs = 0.0;
};

OutputMetrics Compare(const Tensor& out, const Tensor& ref) {
  if (out.shape() != ref.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "output " + ShapeToString(out.shape()) +
                                               " vs reference " + ShapeToString(ref.shape()));
  }
  OutputMetrics m;
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    m.per_sample.push_back(MeanSquaredError(Row(out, i), Row(ref, i)));
  }
  m.mse = MeanSquaredError(out, ref);
  m.max_abs = MaxAbsDiff(out, ref);
  const auto [lo, hi] = std::minmax_element(ref.values().begin(), ref.values().end());
  m.psnr = Psnr(m.mse, *hi - *lo);
  return m;
}

json MetricsJson(const OutputMetrics& m, bool per_sample) {
  json j = {{"mse", m.mse}, {"psnr", NumberOrString(m.psnr)}, {"max_abs", m.max_abs}};
  if (per_sample) j["per_sample_mse"] = m.per_sample;
  return j;
}

CalibrationConfig CalibrationFrom(const std::array<double, 2>& q, const std::array<double, 2>& wq,
                                  double momentum, std::size_t samples) {
  CalibrationConfig c;
  c.q_lo = q[0];
  c.q_hi = q[1];
  c.weight_q_lo = wq[0];
  c.weight_q_hi = wq[1];
  c.momentum = momentum;
  c.num_batches = samples;
  return c;
}

std::uint64_t Fnv1a(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string HashPath(const fs::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      h = Fnv1a(h, f.filename().string());
      h = Fnv1a(h, ReadFileBytes(f));
    }
  } else {
    h = Fnv1a(h, ReadFileBytes(path));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

double Psnr(double mse, double peak) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFinite:
    case ErrorCode::kDivergedLoss:
    case ErrorCode::kNotObserved:
    case ErrorCode::kEmptyGroup:
    case ErrorCode::kMissingTrace:
      return 3;
    default:
      return 2;
  }
}

Report CmdGenToy(const CommandArgs& args) {
  const fs::path& out = Need(args.out, "--out");
  ToySpec spec = Parse<ToySpec>(ReadConfig(args.config), "toy spec");
  if (args.preset) spec.preset = *args.preset;
  const std::uint64_t seed = args.seed.value_or(0);
  spec.Validate();
  ToyBundle t = MakeToy(spec, seed);
  SaveModel(t.model, out / "model");
  SaveDataset(t.data, out / "data");
  spdlog::info("wrote {} toy with {} blocks to {}", spec.preset, t.model.blocks.size(), out.string());
  std::size_t params = 0;
  for (const BlockGraph& b : t.model.blocks) {
    for (const Layer& l : b.layers) {
      if (l.weight) params += l.weight->numel();
      if (l.bias) params += l.bias->numel();
    }
  }
  json r = Header("gen-toy", args, spec, seed);
  r["metrics"] = {{"blocks", t.model.blocks.size()},
                  {"parameters", params},
                  {"samples", spec.samples},
                  {"input_shape", t.model.input_shape},
                  {"output_shape", ValidateModel(t.model)}};
  return {r};
}

Report CmdCalibrate(const CommandArgs& args) {
  const fs::path& out = Need(args.out, "--out");
  const json cj = ReadConfig(args.config);
  PtqConfig ptq = Parse<PtqConfig>(cj, "calibration config");
  if (args.seed) ptq.seed = *args.seed;
  ptq.Validate();
  const Attach attach = ParseAttach(cj);
  Model m = LoadModel(OneModel(args));
  const Dataset data = LoadDataset(Need(args.data, "--data"));
  if (!HasQuantizers(m)) m = AttachQuantizers(std::move(m), attach.weight, attach.act, attach.options);
  m = VanillaPtq(std::move(m), data.inputs, ptq.Calibration());
  SaveModel(m, out);
  const OutputMetrics e2e = Compare(Forward(m, data.inputs).output, ForwardFullPrecision(m, data.inputs));
  json config = AttachJson(attach);
  config["quantile_pair"] = ptq.quantile_pair;
  config["weight_quantile_pair"] = ptq.weight_quantile_pair;
  config["momentum"] = ptq.momentum;
  config["calibration_samples"] = ptq.calibration_samples;
  json r = Header("calibrate", args, config, ptq.seed);
  r["metrics"] = {{"quantizers", QuantizerTable(m)}, {"end_to_end", MetricsJson(e2e, false)}};
  return {r};
}

Report CmdBrecq(const CommandArgs& args) {
  const fs::path& out = Need(args.out, "--out");
  const json cj = ReadConfig(args.config);
  PtqConfig ptq = Parse<PtqConfig>(cj, "brecq config");
  if (args.seed) ptq.seed = *args.seed;
  if (ptq.variant == PtqVariant::kVanilla) {
    throw Error(ErrorCode::kInvalidConfig, "brecq needs variant ste or adaround");
  }
  ptq.Validate();
  const Attach attach = ParseAttach(cj);
  Model m = LoadModel(OneModel(args));
  const Dataset data = LoadDataset(Need(args.data, "--data"));
  bool calibrated = false;
  m = EnsureCalibrated(std::move(m), data.inputs, attach, ptq.Calibration(), &calibrated);
  const Tensor reference = ForwardFullPrecision(m, data.inputs);
  const OutputMetrics before = Compare(Forward(m, data.inputs).output, reference);
  std::vector<BlockReport> blocks;
  m = BrecqPipeline(m, data.inputs, ptq, &blocks);
  SaveModel(m, out);
  const OutputMetrics after = Compare(Forward(m, data.inputs).output, reference);

  json config = json(ptq);
  config.update(AttachJson(attach));
  Report report;
  for (const BlockReport& b : blocks) {
    json curve = json::array();
    for (const auto& [step, obj] : b.curve) curve.push_back({step, obj});
    report.push_back({{"command", "brecq"},
                      {"stage", "block"},
                      {"block", b.name},
                      {"objective_before", b.objective_before},
                      {"objective_after", b.objective_after},
                      {"best_step", b.best_step},
                      {"delta_clamps", b.delta_clamps},
                      {"final_binarization", b.final_binarization},
                      {"curve", curve}});
  }
  json r = Header("brecq", args, config, ptq.seed);
  r["stage"] = "summary";
  r["metrics"] = {{"calibrated_first", calibrated},
                  {"end_to_end_before", MetricsJson(before, false)},
                  {"end_to_end", MetricsJson(after, true)}};
  report.push_back(r);
  return report;
}

Report CmdQat(const CommandArgs& args) {
  const fs::path& out = Need(args.out, "--out");
  const json cj = ReadConfig(args.config);
  QatConfig qat = Parse<QatConfig>(cj, "qat config");
  if (args.seed) qat.seed = *args.seed;
  qat.Validate();
  const Attach attach = ParseAttach(cj);
  const std::size_t calib_samples =
      Parse<std::size_t>(cj.value("calibration_samples", json(500)), "calibration_samples");

  LossSpec loss;
  json loss_json = {{"beta", loss.beta}, {"w_adv", loss.w_adv}, {"lsgan", "default"},
                    {"discriminator", nullptr}};
  if (cj.contains("loss")) {
    const json& lj = cj.at("loss");
    if (!lj.is_object()) throw Error(ErrorCode::kInvalidConfig, "loss must be an object");
    loss.beta = Parse<double>(lj.value("beta", json(loss.beta)), "loss.beta");
    loss.w_adv = Parse<double>(lj.value("w_adv", json(loss.w_adv)), "loss.w_adv");
    const std::string v = Parse<std::string>(lj.value("lsgan", json("default")), "loss.lsgan");
    if (v == "default") {
      loss.lsgan = LsganVariant::kDefault;
    } else if (v == "matching") {
      loss.lsgan = LsganVariant::kMatching;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown lsgan variant '" + v + "'");
    }
    if (lj.contains("discriminator") && !lj.at("discriminator").is_null()) {
      const std::string path = Parse<std::string>(lj.at("discriminator"), "loss.discriminator");
      loss.discriminator = std::make_shared<ModelDiscriminator>(LoadModel(path));
    }
    loss_json = {{"beta", loss.beta}, {"w_adv", loss.w_adv}, {"lsgan", v},
                 {"discriminator", lj.value("discriminator", json(nullptr))}};
  }
  loss.Validate();

  Model m = LoadModel(OneModel(args));
  const Dataset data = LoadDataset(Need(args.data, "--data"));
  bool calibrated = false;
  m = EnsureCalibrated(std::move(m), data.inputs, attach,
                       CalibrationFrom(qat.quantile_pair, qat.weight_quantile_pair, qat.momentum,
                                       calib_samples),
                       &calibrated);
  const OutputMetrics before = Compare(Forward(m, data.inputs).output, data.targets);
  QatReport qr;
  m = QatTrain(m, data.inputs, data.targets, qat, loss, &qr);
  SaveModel(m, out);
  const OutputMetrics after = Compare(Forward(m, data.inputs).output, data.targets);

  Report report;
  for (const QatEpoch& e : qr.epochs) {
    report.push_back({{"command", "qat"},
                      {"stage", "epoch"},
                      {"epoch", e.epoch},
                      {"mode", e.mode},
                      {"train_loss", e.train_loss},
                      {"heldout", e.heldout},
                      {"best_heldout", e.best_heldout}});
  }
  json config = json(qat);
  config.update(AttachJson(attach));
  config["calibration_samples"] = calib_samples;
  config["loss"] = loss_json;
  json r = Header("qat", args, config, qat.seed);
  r["stage"] = "summary";
  r["metrics"] = {{"calibrated_first", calibrated},
                  {"initial_heldout", qr.initial_heldout},
                  {"best_heldout", qr.best_heldout},
                  {"best_epoch", qr.best_epoch},
                  {"delta_clamps", qr.delta_clamps},
                  {"end_to_end_before", MetricsJson(before, false)},
                  {"end_to_end", MetricsJson(after, true)}};
  report.push_back(r);
  return report;
}

Report CmdEval(const CommandArgs& args) {
  if (args.models.empty() || args.models.size() > 2) {
    throw Error(ErrorCode::kInvalidConfig, "eval takes one or two --model");
  }
  const Dataset data = LoadDataset(Need(args.data, "--data"));
  const Model a = LoadModel(args.models[0]);
  Tensor reference;
  if (args.models.size() == 2) {
    const Model b = LoadModel(args.models[1]);
    RequireSameArchitecture(a, b);
    reference = Forward(b, data.inputs).output;
  } else {
    reference = data.targets;
  }
  const OutputMetrics m = Compare(Forward(a, data.inputs).output, reference);
  json r = Header("eval", args, json::object(), args.seed.value_or(0));
  r["metrics"] = MetricsJson(m, true);
  r["metrics"]["reference"] = args.models.size() == 2 ? "model" : "targets";
  return {r};
}

}  // namespace qf
