// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/checkpoint.hpp"
#include "geneses/codec.hpp"
#include "geneses/conditioner.hpp"
#include "geneses/degrade.hpp"
#include "geneses/flow.hpp"
#include "geneses/metrics.hpp"
#include "geneses/mmdit.hpp"

namespace geneses::pipeline {

using audio::AudioBuffer;

struct DataSection {
  std::size_t train = 500;
  std::size_t test = 50;
  degrade::Regime regime = degrade::Regime::noise_only;
  double duration = 0.5;
  double min_fraction = 0.8;
  std::optional<degrade::ChainConfig> chain;
  degrade::SyntheticSpeechConfig speech;
  /// Optional `<root>/<speaker>/*.wav` corpus replacing the synthetic voices.
  std::string speech_root;
};

struct FlowSection {
  int steps = 2000;
  int batch = 8;
  double lr = 3e-3;
  double weight_decay = 0.0;
  int checkpoint_every = 500;  // 0: only at the end
  int log_every = 100;
  double step_size = 0.01;  // Euler sampler
};

/// The whole experiment as one document. Every section maps to a module
/// config; unknown keys anywhere are rejected with their dotted path.
struct ExperimentConfig {
  std::string name = "micro";
  std::string precision = "float32";
  std::string work_dir = "runs/micro";
  std::uint64_t seed = 0;
  DataSection data;
  codec::VaeConfig vae;
  codec::VaeTrainConfig vae_train;
  cond::ConditionerConfig conditioner;
  cond::PretrainConfig pretrain;
  MmDitConfig mmdit;
  FlowSection flow;
  metrics::SpectralConfig metrics;

  /// Acceptance-suite scale: 0.5 s clips, 250 Hz latents, 2k flow steps.
  static ExperimentConfig micro();
  /// Module desk defaults (50 Hz latents, log-mel conditioner).
  static ExperimentConfig desk();
  /// Full-size hyperparameters (150k steps, batch 16, lr 1e-5); not runnable on a desk.
  static ExperimentConfig full();
  static ExperimentConfig preset(const std::string& name);

  std::filesystem::path root() const { return work_dir; }
  std::filesystem::path data_dir() const { return root() / "data"; }
  std::filesystem::path vae_checkpoint() const { return root() / "vae.ckpt"; }
  std::filesystem::path cond_checkpoint() const { return root() / "cond.ckpt"; }
  std::filesystem::path flow_checkpoint() const { return root() / "flow.ckpt"; }

  /// Cross-section checks (frame rates, dims, sample rates). Config error
  /// with a field path on failure.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Starts from the preset named by "name" (default micro) and applies the
/// document on top; unknown keys are config errors naming their path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible, otherwise taken as a string. Unknown paths are config errors.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// ---- data ------------------------------------------------------------------

std::unique_ptr<degrade::SpeechSource> make_source(const ExperimentConfig& cfg);
degrade::DatasetConfig dataset_config(const ExperimentConfig& cfg, const std::string& split);

/// One stored mixture, zero-padded to the split's fixed length.
struct Example {
  std::string id;
  AudioBuffer clean_a;
  AudioBuffer clean_b;
  AudioBuffer degraded;
  std::size_t length = 0;  // original length before padding
};

std::vector<Example> load_split(const ExperimentConfig& cfg, const std::string& split);

// ---- models ----------------------------------------------------------------

/// Conditioner with adapters attached and trunk frozen per config, plus the
/// predictor. Built deterministically from the config seed.
struct FlowModel {
  cond::Conditioner conditioner;
  MmDit<float> dit;

  nn::ParameterList<float> parameters() const;
};

codec::Vae make_vae(const ExperimentConfig& cfg);
cond::Conditioner make_conditioner(const ExperimentConfig& cfg);
FlowModel make_flow_model(const ExperimentConfig& cfg, const cond::Conditioner& pretrained);

/// Flow training inputs: standardised stacked latents [1, F, 2d] of the clean
/// tracks and frontend features [1, F', feat] of the degraded mixture.
struct FlowData {
  std::vector<Tensor<float>> targets;
  std::vector<Tensor<float>> features;
};

FlowData prepare_flow_data(const codec::Vae& vae, const cond::Conditioner& conditioner,
                           const std::vector<Example>& examples);

/// Stepwise trainer; step k draws its batch and noise from seed-derived
/// streams keyed by k, so a resumed run replays the same sequence.
class FlowTrainer {
 public:
  FlowTrainer(const ExperimentConfig& cfg, FlowModel& model, const FlowData& data);

  flow::StepReport step();
  std::int64_t steps_done() const { return optimizer_.step_count(); }

  ckpt::Checkpoint checkpoint(const nlohmann::json& meta) const;
  void resume(const ckpt::Checkpoint& c);

 private:
  const ExperimentConfig& cfg_;
  FlowModel& model_;
  const FlowData& data_;
  nn::AdamW<float> optimizer_;
  flow::TrainStepContext<float> ctx_;
  Rng root_;
};

/// degraded -> condition -> Euler from N(0, I) -> split tracks -> decode.
std::pair<AudioBuffer, AudioBuffer> separate(const codec::Vae& vae, const FlowModel& model, const AudioBuffer& degraded,
                                             double step_size, Rng noise);

// ---- commands ----------------------------------------------------------------

using Log = std::function<void(const std::string&)>;

/// Each command returns a machine-readable run summary.
nlohmann::json cmd_gen_data(const ExperimentConfig& cfg, const Log& log = {});
nlohmann::json cmd_train_vae(const ExperimentConfig& cfg, const Log& log = {});
nlohmann::json cmd_pretrain_cond(const ExperimentConfig& cfg, const Log& log = {});
/// Resumes from flow.ckpt when present. `stop_after` > 0 stops (and
/// checkpoints) once that many steps are done, for split runs.
nlohmann::json cmd_train_flow(const ExperimentConfig& cfg, const Log& log = {}, int stop_after = 0);
/// Separates one WAV (`input` a file) or a whole split (`input` "train" or
/// "test") into `<out>/<id>.spk1.wav` and `<out>/<id>.spk2.wav`.
nlohmann::json cmd_infer(const ExperimentConfig& cfg, const std::string& input, const std::filesystem::path& out,
                         const Log& log = {});
/// Scores `<estimates>/<id>.spk{1,2}.wav` against a split and writes the
/// report files into `out`.
nlohmann::json cmd_eval(const ExperimentConfig& cfg, const std::string& split, const std::filesystem::path& estimates,
                        const std::filesystem::path& out, const Log& log = {});

}  // namespace geneses::pipeline
