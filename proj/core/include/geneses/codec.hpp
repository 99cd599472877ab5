// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/audio.hpp"
#include "geneses/nn.hpp"

namespace geneses::codec {

using audio::AudioBuffer;

struct VaeConfig {
  std::vector<int> rates{2, 4, 5, 8};
  int latent_dim = 8;
  int base_channels = 16;
  int max_channels = 256;
  int sample_rate = 16000;
  double kl_weight = 1e-5;
  double input_gain = 10.0;  // waveform scale seen by the network

  static VaeConfig desk() { return {}; }
  /// 24 kHz, rates (2,3,4,5,8), 16-dim latents at 25 Hz.
  static VaeConfig full();
  /// Short-stride codec used by the end-to-end toy runs: rates (2,4,8) at
  /// 16 kHz, 16-dim latents at 250 Hz.
  static VaeConfig micro();

  int stride() const;
  double frame_rate() const { return static_cast<double>(sample_rate) / stride(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

/// [frames, dim] features at a fixed frame rate.
struct LatentTrack {
  Tensor<float> features;
  double frame_rate_hz = 0.0;

  std::int64_t frames() const { return features.dim(0); }
  std::int64_t dim() const { return features.dim(1); }
};

/// Per-frame Gaussian posterior, [B, frames, dim] each.
struct Posterior {
  Tensor<float> mu;
  Tensor<float> logvar;
};

/// mu + exp(logvar / 2) * eps, eps ~ N(0, 1) from `rng`.
Tensor<float> reparameterize(const Tensor<float>& mu, const Tensor<float>& logvar, Rng rng);

template <typename T>
struct ResidualUnit {
  nn::Conv1d<T> conv;
  nn::Conv1d<T> mix;  // 1x1

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;
};

/// Strided convolutional encoder mirrored by a transposed-convolution
/// decoder, SiLU throughout. Latents are time-major, [B, frames, dim].
class Vae {
 public:
  explicit Vae(VaeConfig config, Rng rng = Rng(0));

  const VaeConfig& config() const { return config_; }

  /// wave [B, L] with L a multiple of the stride.
  Posterior encode(const Tensor<float>& wave) const;
  /// z [B, frames, dim] -> [B, frames * stride].
  Tensor<float> decode(const Tensor<float>& z) const;

  /// Pads with zeros to a multiple of the stride, returns the posterior mean
  /// as a track.
  LatentTrack encode_mean(const AudioBuffer& buf) const;
  /// Decodes and trims (or zero-pads) to `length` samples.
  AudioBuffer decode_track(const LatentTrack& track, std::size_t length) const;

  /// Per-dimension affine map to the flow's working space; identity until
  /// fit_normalisation runs.
  Tensor<float> normalize(const Tensor<float>& mu) const;
  Tensor<float> denormalize(const Tensor<float>& z) const;
  void set_normalisation(std::vector<float> mean, std::vector<float> stddev);
  std::vector<float> latent_mean() const;
  std::vector<float> latent_std() const;

  /// Trainable weights followed by the (frozen) normalisation statistics.
  nn::ParameterList<float> parameters() const;

 private:
  VaeConfig config_;
  nn::Conv1d<float> enc_in_;
  std::vector<ResidualUnit<float>> enc_res_;
  std::vector<nn::Conv1d<float>> enc_down_;
  nn::Conv1d<float> enc_out_;
  nn::Conv1d<float> dec_in_;
  std::vector<nn::ConvTranspose1d<float>> dec_up_;
  std::vector<ResidualUnit<float>> dec_res_;
  nn::Conv1d<float> dec_out_;
  Tensor<float> norm_mean_;
  Tensor<float> norm_std_;
};

struct SpectralResolution {
  int window = 512;
  int hop = 128;
};

struct VaeLossConfig {
  std::vector<SpectralResolution> resolutions{{512, 128}, {256, 64}, {128, 32}};
  double spectral_weight = 1.0;
  double waveform_weight = 1.0;
  double log_floor = 1e-5;  // added to magnitudes before the log
};

struct VaeLoss {
  Tensor<float> total;
  Tensor<float> spectral;
  Tensor<float> waveform;
  Tensor<float> kl;
};

/// Multi-resolution |STFT| distance (L1 on log and linear magnitudes),
/// time-domain L1 and kl_weight * 0.5 mean(mu^2 + e^logvar - logvar - 1).
/// x and x_hat are [B, L]; mu and logvar share a shape.
VaeLoss vae_loss(const Tensor<float>& x, const Tensor<float>& x_hat, const Tensor<float>& mu,
                 const Tensor<float>& logvar, double kl_weight, const VaeLossConfig& config = {});

/// Differentiable Hann-windowed |STFT| of [B, L] as [B, bins, frames]
/// (uncentred frames).
Tensor<float> stft_magnitude(const Tensor<float>& x, int window, int hop);

struct VaeTrainConfig {
  int steps = 1000;
  int batch = 8;
  std::size_t crop = 4096;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  VaeLossConfig loss;
};

using StepCallback = std::function<void(int step, double loss)>;

/// AdamW on random crops of the corpus; returns the per-step losses.
std::vector<double> train_vae(Vae& vae, const std::vector<AudioBuffer>& corpus, const VaeTrainConfig& config,
                              const StepCallback& on_step = {});

/// Sets the normalisation to the per-dimension mean and std of the
/// posterior means over the corpus.
void fit_normalisation(Vae& vae, const std::vector<AudioBuffer>& corpus);

struct LatentStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Statistics of the raw posterior means over the corpus.
LatentStats latent_statistics(const Vae& vae, const std::vector<AudioBuffer>& corpus);

/// Log-mel frames as "latents" plus the complex STFT needed to invert them
/// exactly.
struct MelCodec {
  LatentTrack track;
  audio::StftFrames cache;
};

MelCodec mel_identity_encode(const AudioBuffer& buf, int n_mels = 64, int window = 512, int hop = 128);
AudioBuffer mel_identity_decode(const MelCodec& codec);

}  // namespace geneses::codec
