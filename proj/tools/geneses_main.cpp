// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "geneses/error.hpp"
#include "geneses/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace gp = geneses::pipeline;
using geneses::Errc;

int exit_code(Errc code) {
  switch (code) {
    case Errc::config:
      return 2;
    case Errc::data:
    case Errc::io:
    case Errc::format:
      return 3;
    case Errc::checkpoint_missing:
    case Errc::checkpoint_corrupt:
    case Errc::checkpoint_version:
      return 4;
    default:
      return 1;
  }
}

// --config takes a JSON file or a preset name (micro, desk, full).
nlohmann::json read_document(const std::string& config) {
  if (!fs::exists(config) && (config == "micro" || config == "desk" || config == "full"))
    return {{"name", config}};
  std::ifstream in(config);
  geneses::require(in.good(), Errc::config, "cannot read config " + config);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    geneses::fail(Errc::config, config + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geneses: latent flow matching for degraded two-speaker separation"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "config file or preset name")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--override", overrides, "key.path=value, repeatable");
    sub->add_flag("--quiet", quiet, "no progress lines on stderr");
  };

  auto* gen = app.add_subcommand("gen-data", "synthesise the train and test mixtures");
  auto* vae = app.add_subcommand("train-vae", "train the latent codec on clean tracks");
  auto* pre = app.add_subcommand("pretrain-cond", "masked-frame pretraining of the conditioner trunk");
  auto* flow = app.add_subcommand("train-flow", "train the flow predictor (resumes from flow.ckpt)");
  auto* infer = app.add_subcommand("infer", "separate a WAV file or a whole split");
  auto* eval = app.add_subcommand("eval", "score separated tracks against a split");
  for (auto* s : {gen, vae, pre, flow, infer, eval}) common(s);

  int stop_after = 0;
  flow->add_option("--stop-after", stop_after, "checkpoint and stop once this many steps are done");
  std::string input = "test";
  std::string out;
  infer->add_option("--input", input, "WAV file, or train/test")->capture_default_str();
  infer->add_option("--out", out, "output directory (default <work_dir>/infer/<input>)");
  std::string split = "test";
  std::string estimates;
  eval->add_option("--split", split, "train or test")->capture_default_str();
  eval->add_option("--estimates", estimates, "directory of <id>.spk{1,2}.wav (default <work_dir>/infer/<split>)");
  eval->add_option("--out", out, "report directory (default <work_dir>/eval/<split>)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto doc = read_document(config);
    for (const auto& o : overrides) gp::apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    const auto cfg = gp::config_from_json(doc);
    const gp::Log log = quiet ? gp::Log{} : gp::Log{[](const std::string& s) { std::cerr << s << std::endl; }};

    nlohmann::json summary;
    if (gen->parsed()) {
      summary = gp::cmd_gen_data(cfg, log);
    } else if (vae->parsed()) {
      summary = gp::cmd_train_vae(cfg, log);
    } else if (pre->parsed()) {
      summary = gp::cmd_pretrain_cond(cfg, log);
    } else if (flow->parsed()) {
      summary = gp::cmd_train_flow(cfg, log, stop_after);
    } else if (infer->parsed()) {
      const fs::path dir = out.empty() ? cfg.root() / "infer" / fs::path(input).stem() : fs::path(out);
      summary = gp::cmd_infer(cfg, input, dir, log);
    } else {
      const fs::path est = estimates.empty() ? cfg.root() / "infer" / split : fs::path(estimates);
      const fs::path dir = out.empty() ? cfg.root() / "eval" / split : fs::path(out);
      summary = gp::cmd_eval(cfg, split, est, dir, log);
    }
    summary["seed"] = cfg.seed;
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const geneses::Error& e) {
    std::cerr << "error [" << geneses::errc_name(e.code()) << "]: " << e.what() << std::endl;
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
