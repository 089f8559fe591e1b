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

// qf: fake-quantization pipelines for toy generators.
//
//   qf gen-toy   --out DIR [--preset P] [--config SPEC.json] [--seed N]
//   qf calibrate --model DIR --data DIR --out DIR [--config C.json]
//   qf brecq     --model DIR --data DIR --out DIR [--config C.json] [--seed N]
//   qf qat       --model DIR --data DIR --out DIR [--config C.json] [--seed N]
//   qf eval      --model A [--model B] --data DIR
//
// Reports go to stdout as JSON lines, logs to stderr (QF_LOG=debug|info|warn|error|off).

#include <chrono>
#include <cstdlib>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "qf/commands.h"

namespace {

void SetupLogging() {
  auto logger = spdlog::stderr_color_mt("qf");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("QF_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace

int main(int argc, char** argv) {
  SetupLogging();
  CLI::App app{"Fake-quantization pipelines for toy generators"};
  app.require_subcommand(1);

  qf::CommandArgs args;
  std::vector<std::string> models;
  std::string data, config, out, preset;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool need_model, bool need_out) {
    auto* m = sub->add_option("--model", models, "model directory (repeatable)");
    if (need_model) m->required();
    sub->add_option("--data", data, "dataset directory");
    sub->add_option("--config", config, "JSON config");
    auto* o = sub->add_option("--out", out, "output directory");
    if (need_out) o->required();
    sub->add_option("--seed", seed, "seed (overrides config)");
  };
  CLI::App* gen = app.add_subcommand("gen-toy", "write a random toy model and dataset");
  add_common(gen, false, true);
  gen->add_option("--preset", preset, "plain-mlp, styled-ish or resnet-ish");
  CLI::App* calibrate = app.add_subcommand("calibrate", "moving-average range calibration");
  add_common(calibrate, true, true);
  CLI::App* brecq = app.add_subcommand("brecq", "block reconstruction");
  add_common(brecq, true, true);
  CLI::App* qat = app.add_subcommand("qat", "quantization-aware distillation");
  add_common(qat, true, true);
  CLI::App* eval = app.add_subcommand("eval", "output MSE / PSNR / max-abs");
  add_common(eval, true, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (const auto& m : models) args.models.emplace_back(m);
  CLI::App* sub = app.get_subcommands().front();
  if (!data.empty()) args.data = data;
  if (!config.empty()) args.config = config;
  if (!out.empty()) args.out = out;
  if (sub->count("--seed") > 0) args.seed = seed;
  if (!preset.empty()) args.preset = preset;

  const auto start = std::chrono::steady_clock::now();
  try {
    qf::Report report;
    if (sub == gen) report = qf::CmdGenToy(args);
    else if (sub == calibrate) report = qf::CmdCalibrate(args);
    else if (sub == brecq) report = qf::CmdBrecq(args);
    else if (sub == qat) report = qf::CmdQat(args);
    else report = qf::CmdEval(args);
    const auto ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start).count();
    if (!report.empty()) report.back()["wall_ms"] = ms;
    for (const auto& r : report) std::cout << r.dump() << "\n";
    return 0;
  } catch (const qf::Error& e) {
    spdlog::error("{}", e.what());
    std::cout << nlohmann::json{{"command", sub->get_name()}, {"error", e.what()},
                                {"code", std::string(qf::ErrorCodeName(e.code()))}}
                     .dump()
              << "\n";
    return qf::ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
