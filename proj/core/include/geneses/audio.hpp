// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace geneses::audio {

struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  /// Contract error on a non-positive rate or non-finite samples.
  void validate() const;
};

/// 16-bit PCM RIFF/WAVE. Stereo input is averaged to mono; any other
/// encoding is a format error, a missing file an I/O error.
AudioBuffer read_wav(const std::filesystem::path& path);
/// Writes mono 16-bit PCM, clamping to [-1, 1).
void write_wav(const std::filesystem::path& path, const AudioBuffer& buf);
/// Rounds to the grid write_wav stores, so a round trip through disk is exact.
AudioBuffer quantize_pcm16(const AudioBuffer& buf);

struct StftFrames {
  int window = 512;
  int hop = 128;
  int sample_rate = 16000;
  std::int64_t n_frames = 0;
  std::int64_t bins = 0;
  std::size_t signal_length = 0;
  std::vector<std::complex<double>> data;  // [n_frames, bins]

  std::complex<double> at(std::int64_t frame, std::int64_t bin) const {
    return data[static_cast<std::size_t>(frame * bins + bin)];
  }
};

/// Periodic Hann window.
std::vector<double> hann_window(int n);

/// Hann-windowed STFT with window/2 zero padding at both ends;
/// 1 + ceil(L / hop) frames. The window must be a power of two and the hop
/// must divide it.
StftFrames stft(const AudioBuffer& buf, int window = 512, int hop = 128);
/// Weighted overlap-add inverse, normalised by the summed squared window.
AudioBuffer istft(const StftFrames& frames);

/// |X|^2 per frame and bin, [n_frames, bins].
std::vector<double> power_spectrum(const StftFrames& frames);

struct MelFilterbank {
  int n_mels = 0;
  std::int64_t bins = 0;
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> weights;  // [n_mels, bins]
};

/// Triangular filters equally spaced on the HTK mel scale.
MelFilterbank mel_filterbank(int n_mels, int window, int sample_rate, double fmin = 0.0, double fmax = -1.0);

/// ln(max(mel power, floor)), [n_frames, n_mels].
struct MelSpectrogram {
  std::int64_t n_frames = 0;
  int n_mels = 0;
  std::vector<double> values;
};

inline constexpr double kPowerFloor = 1e-10;

MelSpectrogram mel_spectrogram(const AudioBuffer& buf, int n_mels, int window = 512, int hop = 128,
                               double floor = kPowerFloor);

/// Windowed-sinc polyphase resampler (Kaiser window, anti-aliased when
/// downsampling). Output length is ceil(L * new_rate / rate).
AudioBuffer resample(const AudioBuffer& buf, int new_rate);

/// Full linear convolution truncated to the input length.
AudioBuffer convolve_full(const AudioBuffer& buf, std::span<const float> kernel);

double mean_power(std::span<const float> x);
float peak(std::span<const float> x);
/// 10 log10(P_ref / P_(ref - est)).
double snr_db(std::span<const float> reference, std::span<const float> estimate);

}  // namespace geneses::audio
