// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/audio.hpp"
#include "geneses/nn.hpp"

namespace geneses::cond {

using audio::AudioBuffer;

/// log_mel: log mel power per frame. waveform: the raw samples of a window
/// centred on each frame, which keeps phase.
enum class Frontend { log_mel, waveform };

const char* frontend_name(Frontend f);
Frontend frontend_from_name(const std::string& name);

struct ConditionerConfig {
  Frontend frontend = Frontend::log_mel;
  int sample_rate = 16000;
  int n_mels = 64;
  int window = 512;  // STFT size (log_mel) or frame length (waveform)
  int hop = 320;
  int trunk_depth = 2;
  int trunk_dim = 128;
  int n_heads = 4;
  int mlp_ratio = 2;
  int cond_dim = 64;
  nn::LoraConfig lora;
  bool trunk_frozen = true;
  bool pretrain = true;  // false: keep the random trunk (ablation)

  static ConditionerConfig desk() { return {}; }
  /// 1024-dim output, 50 Hz at 16 kHz.
  static ConditionerConfig full();
  /// Waveform frontend at 250 Hz for the end-to-end toy runs.
  static ConditionerConfig micro();

  std::int64_t feature_dim() const;
  /// ceil(samples / hop).
  std::int64_t frames(std::size_t samples) const;
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ConditionerConfig& c);
void from_json(const nlohmann::json& j, ConditionerConfig& c);

template <typename T>
struct TrunkBlock {
  nn::RmsNorm<T> norm_attn;
  nn::RmsNorm<T> norm_mlp;
  nn::LoraLinear<T> query;
  nn::LoraLinear<T> key;
  nn::LoraLinear<T> value;
  nn::LoraLinear<T> proj;
  nn::LoraLinear<T> fc1;
  nn::LoraLinear<T> fc2;
};

/// Frontend -> transformer trunk (LoRA-capable linears) -> output linear.
class Conditioner {
 public:
  explicit Conditioner(ConditionerConfig config, Rng rng = Rng(0));

  const ConditionerConfig& config() const { return config_; }

  /// Normalised frontend features, [frames, feature_dim]. Empty input is a
  /// contract error.
  Tensor<float> features(const AudioBuffer& buf) const;

  /// Trunk hidden states for features [B, F, feature_dim].
  Tensor<float> trunk(const Tensor<float>& feats, bool training, Rng dropout_rng = Rng()) const;
  /// Condition sequence [B, F, cond_dim].
  Tensor<float> forward(const Tensor<float>& feats, bool training, Rng dropout_rng = Rng()) const;

  /// extract_condition for one buffer, [frames, cond_dim], no gradients.
  Tensor<float> extract(const AudioBuffer& buf) const;

  /// Adds zero-initialised adapters to every trunk linear.
  void attach_lora(Rng rng);
  bool has_lora() const;
  /// Freezes (or unfreezes) every trunk tensor; adapters and the output
  /// linear stay trainable.
  void set_trunk_frozen(bool frozen);

  nn::ParameterList<float> parameters() const;
  nn::ParameterList<float> trunk_parameters() const;

  /// Predicts frontend features from trunk states; only used by pretraining.
  const nn::Linear<float>& reconstruction_head() const { return head_; }

 private:
  void collect_trunk(nn::ParameterList<float>& out) const;

  ConditionerConfig config_;
  nn::Linear<float> in_proj_;
  std::vector<TrunkBlock<float>> blocks_;
  nn::RmsNorm<float> final_norm_;
  nn::Linear<float> output_;
  nn::Linear<float> head_;
};

struct PretrainConfig {
  int steps = 1000;
  int batch = 8;
  double mask_prob = 0.3;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Masked-frame reconstruction over clean audio: masked input frames are
/// zeroed and the trunk plus head regress their features. Trains the trunk
/// (and head) only; returns the per-step losses.
std::vector<double> pretrain_conditioner(Conditioner& conditioner, const std::vector<AudioBuffer>& corpus,
                                         const PretrainConfig& config,
                                         const std::function<void(int, double)>& on_step = {});

}  // namespace geneses::cond
