// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geneses/degrade.hpp"
#include "geneses/error.hpp"

namespace geneses::degrade {

namespace {

// F1, F2, F3 of five reference vowels (Hz)
constexpr std::array<std::array<double, 3>, 5> kVowels = {{
    {730.0, 1090.0, 2440.0},
    {270.0, 2290.0, 3010.0},
    {300.0, 870.0, 2240.0},
    {530.0, 1840.0, 2480.0},
    {570.0, 840.0, 2410.0},
}};
constexpr std::array<double, 3> kFormantGain = {1.0, 0.6, 0.3};
constexpr std::size_t kBlock = 32;  // samples between harmonic amplitude updates
constexpr double kRamp = 0.025;     // syllable on/off ramp, seconds

double formant_response(double f, const std::array<double, 3>& formants) {
  double g = 0.02;
  for (std::size_t k = 0; k < 3; ++k) {
    const double bw = 60.0 + 0.06 * formants[k];
    const double d = (f - formants[k]) / bw;
    g += kFormantGain[k] / (1.0 + d * d);
  }
  return g;
}

struct Syllable {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::array<double, 3> formants{};
};

}  // namespace

SyntheticSpeakers::SyntheticSpeakers(SyntheticSpeechConfig config) : config_(config) {
  require(config_.n_speakers >= 1, Errc::config, "need at least one synthetic speaker");
  require(config_.f0_low > 0.0 && config_.f0_low <= config_.f0_high, Errc::config, "bad synthetic pitch range");
  require(config_.max_harmonic_hz > config_.f0_high, Errc::config, "max_harmonic_hz below the pitch range");
  Rng rng(config_.seed);
  const double span = config_.n_speakers > 1 ? config_.n_speakers - 1 : 1;
  for (int i = 0; i < config_.n_speakers; ++i) {
    Voice v;
    v.f0 = config_.f0_low * std::pow(config_.f0_high / config_.f0_low, i / span);
    for (auto& s : v.formant_scale) s = rng.uniform(0.9, 1.15);
    v.tilt = rng.uniform(0.8, 1.3);
    voices_.push_back(v);
  }
}

std::string SyntheticSpeakers::speaker_id(int speaker) const {
  require(speaker >= 0 && speaker < n_speakers(), Errc::contract, "speaker index out of range");
  return "syn" + std::to_string(speaker);
}

double SyntheticSpeakers::centre_f0(int speaker) const {
  require(speaker >= 0 && speaker < n_speakers(), Errc::contract, "speaker index out of range");
  return voices_[static_cast<std::size_t>(speaker)].f0;
}

AudioBuffer SyntheticSpeakers::utterance(int speaker, std::size_t samples, int sample_rate, Rng rng) const {
  require(speaker >= 0 && speaker < n_speakers(), Errc::contract, "speaker index out of range");
  require(sample_rate > 0, Errc::contract, "sample rate must be positive");
  const Voice& v = voices_[static_cast<std::size_t>(speaker)];
  const double fs = sample_rate;
  const double f0 = v.f0 * (1.0 + 0.03 * std::clamp(rng.normal(), -1.5, 1.5));
  const double slow_rate = rng.uniform(0.5, 1.5);
  const double slow_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fast_rate = rng.uniform(3.0, 6.0);
  const double fast_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double total = static_cast<double>(samples) / fs;
  auto pitch = [&](double t) {
    return f0 * (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * slow_rate * t + slow_phase) +
                 0.015 * std::sin(2.0 * std::numbers::pi * fast_rate * t + fast_phase) - 0.04 * t / std::max(total, 1e-9));
  };

  std::vector<Syllable> syllables;
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.0, 0.08) * fs);
  while (pos < samples) {
    Syllable s;
    s.begin = pos;
    s.end = std::min(samples, pos + static_cast<std::size_t>(rng.uniform(0.12, 0.28) * fs));
    const auto& vowel = kVowels[static_cast<std::size_t>(rng.below(kVowels.size()))];
    for (std::size_t k = 0; k < 3; ++k) s.formants[k] = vowel[k] * v.formant_scale[k] * rng.uniform(0.95, 1.05);
    syllables.push_back(s);
    pos = s.end;
    if (rng.bernoulli(0.3)) pos += static_cast<std::size_t>(rng.uniform(0.03, 0.12) * fs);
  }

  AudioBuffer out{std::vector<float>(samples, 0.0f), sample_rate};
  const double nyquist_guard = std::min(config_.max_harmonic_hz, 0.45 * fs);
  const auto ramp = static_cast<double>(kRamp * fs);
  std::vector<double> amp;
  double phase = 0.0;
  std::size_t syl = 0;
  for (std::size_t block = 0; block < samples; block += kBlock) {
    const std::size_t end = std::min(samples, block + kBlock);
    const double f_block = pitch(static_cast<double>(block) / fs);
    while (syl < syllables.size() && syllables[syl].end <= block) ++syl;
    const bool voiced = syl < syllables.size() && syllables[syl].begin < end;
    const auto harmonics = static_cast<std::size_t>(std::max(1.0, std::floor(nyquist_guard / f_block)));
    amp.assign(harmonics, 0.0);
    if (voiced)
      for (std::size_t h = 1; h <= harmonics; ++h)
        amp[h - 1] = formant_response(h * f_block, syllables[syl].formants) / std::pow(static_cast<double>(h), 0.7 * v.tilt);
    for (std::size_t i = block; i < end; ++i) {
      phase += 2.0 * std::numbers::pi * pitch(static_cast<double>(i) / fs) / fs;
      if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
      if (!voiced || i < syllables[syl].begin || i >= syllables[syl].end) continue;
      const double into = static_cast<double>(i - syllables[syl].begin);
      const double left = static_cast<double>(syllables[syl].end - i);
      const double env = std::min({1.0, into / ramp, left / ramp});
      double s = 0.0;
      for (std::size_t h = 0; h < harmonics; ++h) s += amp[h] * std::sin(static_cast<double>(h + 1) * phase);
      out.samples[i] = static_cast<float>(env * s);
    }
  }

  const double p = audio::mean_power(out.samples);
  if (p > 0.0) {
    const double target = rng.uniform(0.05, 0.1);
    const double g = target / std::sqrt(p);
    for (auto& s : out.samples) s = static_cast<float>(s * g);
  }
  return out;
}

WavCorpus::WavCorpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  require(fs::is_directory(root), Errc::io, "corpus directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    std::vector<fs::path> wavs;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
    if (wavs.empty()) continue;
    std::sort(wavs.begin(), wavs.end());
    speakers_.push_back(d.filename().string());
    files_.push_back(std::move(wavs));
  }
}

std::string WavCorpus::speaker_id(int speaker) const {
  require(speaker >= 0 && speaker < n_speakers(), Errc::contract, "speaker index out of range");
  return speakers_[static_cast<std::size_t>(speaker)];
}

AudioBuffer WavCorpus::utterance(int speaker, std::size_t samples, int sample_rate, Rng rng) const {
  require(speaker >= 0 && speaker < n_speakers(), Errc::contract, "speaker index out of range");
  const auto& files = files_[static_cast<std::size_t>(speaker)];
  auto buf = audio::read_wav(files[static_cast<std::size_t>(rng.below(files.size()))]);
  if (buf.sample_rate != sample_rate) buf = audio::resample(buf, sample_rate);
  if (buf.size() > samples) {
    const auto offset = static_cast<std::ptrdiff_t>(rng.below(buf.size() - samples + 1));
    buf.samples = std::vector<float>(buf.samples.begin() + offset, buf.samples.begin() + offset + static_cast<std::ptrdiff_t>(samples));
  }
  return buf;
}

}  // namespace geneses::degrade
