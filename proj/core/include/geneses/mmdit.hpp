// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geneses/nn.hpp"

namespace geneses {

struct MmDitConfig {
  std::int64_t n_layers = 4;
  std::int64_t model_dim = 128;
  std::int64_t n_heads = 4;
  std::int64_t latent_dim_per_speaker = 8;
  std::int64_t n_speakers = 2;
  /// 0 builds an unconditional model with no condition stream.
  std::int64_t cond_dim = 64;
  std::int64_t timestep_embed_dim = 256;
  std::int64_t mlp_ratio = 4;
  double max_sequence_seconds = 20.0;
  double latent_frame_rate = 50.0;
  double cond_frame_rate = 50.0;
  bool positional = true;

  static MmDitConfig desk();
  /// 12 layers, 768 wide, 12 heads, 16-dim latents per speaker, 1024-dim
  /// condition, 25 Hz latents against 50 Hz condition frames.
  static MmDitConfig full();

  std::int64_t latent_features() const { return n_speakers * latent_dim_per_speaker; }
  std::int64_t max_latent_frames() const;
  std::int64_t max_cond_frames() const;
  void validate() const;
};

template <typename T>
class TimestepConditioner {
 public:
  TimestepConditioner() = default;
  TimestepConditioner(std::int64_t embed_dim, std::int64_t model_dim, Rng rng);

  /// One conditioning vector per entry of `t`, shape [B, model_dim].
  Tensor<T> forward(std::span<const double> t) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  std::int64_t embed_dim = 256;
  nn::Linear<T> fc1;
  nn::Linear<T> fc2;
};

/// One modality's weights inside a joint layer.
template <typename T>
struct StreamBlock {
  nn::RmsNorm<T> norm_attn;
  nn::RmsNorm<T> norm_mlp;
  nn::Linear<T> qkv;
  nn::Linear<T> proj;
  nn::Mlp<T> mlp;
  /// Timestep vector -> shift/scale/gate for attention and MLP (6 x dim), or
  /// just shift/scale when the block only feeds keys and values.
  nn::Linear<T> modulation;
  bool pre_only = false;

  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;
};

template <typename T>
struct JointLayer {
  StreamBlock<T> latent;
  StreamBlock<T> cond;
};

/// Adds sinusoidal frame-position codes for positions start .. start+L-1 to
/// seq [.., L, D].
template <typename T>
Tensor<T> add_positional(const Tensor<T>& seq, std::int64_t start_index, std::int64_t max_positions);

/// One joint-attention layer. `cond` may be undefined (no condition frames);
/// `y` is the [B, D] timestep vector. Returns the updated (latent, cond).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> joint_attention_layer(const Tensor<T>& latent, const Tensor<T>& cond,
                                                      const JointLayer<T>& layer, const Tensor<T>& y,
                                                      std::int64_t n_heads);

template <typename T>
class MmDit {
 public:
  MmDit() = default;
  MmDit(const MmDitConfig& config, Rng rng);

  /// x_t [L, S*d] or [B, L, S*d]; cond [Lc, C] / [B, Lc, C] or undefined;
  /// one t per batch entry. Returns the predicted field, shaped like x_t.
  Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& cond, std::span<const double> t) const;
  Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& cond, double t) const;

  nn::ParameterList<T> parameters() const;
  const MmDitConfig& config() const { return config_; }

 private:
  MmDitConfig config_;
  std::vector<nn::Linear<T>> track_in_;
  nn::Linear<T> cond_in_;
  TimestepConditioner<T> time_;
  std::vector<JointLayer<T>> layers_;
  nn::RmsNorm<T> final_norm_;
  nn::Linear<T> final_modulation_;
  std::vector<nn::Linear<T>> track_out_;
};

template <typename T>
Tensor<T> mmdit_forward(const MmDit<T>& model, const Tensor<T>& x_t, const Tensor<T>& cond, double t) {
  return model.forward(x_t, cond, t);
}

}  // namespace geneses
