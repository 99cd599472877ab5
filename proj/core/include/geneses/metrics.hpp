// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/audio.hpp"

namespace geneses::metrics {

using audio::AudioBuffer;

/// Sentinel magnitude for si_sdr when the residual (or target) vanishes.
inline constexpr double kSiSdrCap = 200.0;

/// Scale-invariant SDR in dB, clamped to [-kSiSdrCap, kSiSdrCap]. A silent
/// reference is a degenerate_power error; a silent estimate gives the floor.
double si_sdr(std::span<const float> reference, std::span<const float> estimate);

struct SpectralConfig {
  int window = 512;
  int hop = 128;
  int n_mels = 40;
  int n_cepstra = 13;
};

/// Log-spectral distance in dB over Hann STFT power spectra floored at 1e-10.
double lsd(const AudioBuffer& reference, const AudioBuffer& estimate, const SpectralConfig& config = {});

/// Mel-cepstral distortion over coefficients 1..n_cepstra (c0 excluded),
/// frames compared index-wise.
double mcd(const AudioBuffer& reference, const AudioBuffer& estimate, const SpectralConfig& config = {});

/// Envelope-correlation intelligibility proxy: mean correlation of one-third
/// octave band envelopes over 384 ms segments. Not ESTOI; see the band table
/// in metrics.cpp. Needs at least 384 ms of audio.
double intelligibility_proxy(const AudioBuffer& reference, const AudioBuffer& estimate);

inline constexpr double kProxySegmentSeconds = 0.384;

struct TrackScores {
  double si_sdr_db = 0.0;
  double lsd_db = 0.0;
  double mcd = 0.0;
  double intelligibility = 0.0;
};

/// One sample: tracks scored in slot order (estimate_1 against reference_a),
/// plus the best-permutation SI-SDR as a diagnostic.
struct PairReport {
  std::string id;
  TrackScores track1;
  TrackScores track2;
  double si_sdr_db = 0.0;              // slot-order mean
  double best_permutation_si_sdr_db = 0.0;
  bool slot_order_is_best = true;
  std::optional<double> input_si_sdr_db;  // degraded mixture vs references, if given
  std::optional<double> input_lsd_db;

  double lsd_db() const { return 0.5 * (track1.lsd_db + track2.lsd_db); }
  double mcd() const { return 0.5 * (track1.mcd + track2.mcd); }
  double intelligibility() const { return 0.5 * (track1.intelligibility + track2.intelligibility); }
};

PairReport evaluate_pair(const AudioBuffer& reference_a, const AudioBuffer& reference_b, const AudioBuffer& estimate_1,
                         const AudioBuffer& estimate_2, const SpectralConfig& config = {});

/// Fills the input_* fields from the degraded mixture.
void score_input(PairReport& report, const AudioBuffer& reference_a, const AudioBuffer& reference_b,
                 const AudioBuffer& mixture, const SpectralConfig& config = {});

/// Columns reserved for scores produced by external neural predictors; always
/// written, null unless merged in later.
inline const std::vector<std::string> kExternalColumns{"dnsmos", "nisqa", "utmos", "wer", "sbs", "spksim"};

struct EvalSummary {
  std::size_t n = 0;
  double si_sdr_db = 0.0;
  double best_permutation_si_sdr_db = 0.0;
  double lsd_db = 0.0;
  double mcd = 0.0;
  double intelligibility = 0.0;
  double slot_order_rate = 0.0;
  std::optional<double> input_si_sdr_db;
  std::optional<double> input_lsd_db;

  std::optional<double> si_sdr_improvement_db() const;
};

/// Arithmetic means over finite per-sample values.
EvalSummary summarize(const std::vector<PairReport>& reports);

nlohmann::json to_json(const PairReport& r);
nlohmann::json to_json(const EvalSummary& s);

/// Writes `<dir>/report.jsonl` (one record per sample), `<dir>/summary.json`
/// and `<dir>/summary.txt`.
void write_report(const std::filesystem::path& dir, const std::vector<PairReport>& reports);
std::string summary_table(const EvalSummary& s);

}  // namespace geneses::metrics
