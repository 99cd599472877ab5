// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/audio.hpp"
#include "geneses/rng.hpp"

namespace geneses::degrade {

using audio::AudioBuffer;

// ---- mixing ----------------------------------------------------------------

struct MixResult {
  AudioBuffer audio;
  double gain = 1.0;  // applied after summing; 1 unless the sum exceeded full scale
};

inline constexpr double kMixPeak = 0.95;

/// Sum of two utterances, the shorter one zero-padded. Peak-normalised to
/// 0.95 when the sum leaves [-1, 1].
MixResult mix_two_speakers(const AudioBuffer& a, const AudioBuffer& b);

struct NoisyMix {
  AudioBuffer audio;
  double noise_scale = 1.0;
};

/// sqrt(P_s / (P_n 10^(snr/10))).
double noise_scale_for(double signal_power, double noise_power, double snr_db);

/// Adds noise[offset, offset + len(signal)) scaled to the requested SNR.
/// Silent signal or noise segment is a degenerate-power error.
NoisyMix mix_at_snr(const AudioBuffer& signal, const AudioBuffer& noise, double snr_db, std::size_t offset = 0);

// ---- stages ----------------------------------------------------------------

/// Exponentially decaying Gaussian tail behind a unit direct path, 60 dB down
/// after rt60 seconds, normalised to unit energy.
std::vector<float> make_rir(double rt60, int sample_rate, std::uint64_t seed);
AudioBuffer apply_reverb(const AudioBuffer& buf, std::span<const float> rir);
/// Low-pass by resampling to 2 * cutoff and back. Identity when the cutoff is
/// at or above Nyquist.
AudioBuffer bandwidth_limit(const AudioBuffer& buf, double cutoff_hz);
/// Hard clip to [-threshold, threshold].
AudioBuffer clip(const AudioBuffer& buf, double threshold);
/// mu-law (mu = 255) companding with a 2^bits - 1 level mid-tread quantiser.
AudioBuffer codec_distort(const AudioBuffer& buf, int bits);
/// Zeroes frames of frame_ms independently with probability loss_prob.
AudioBuffer packet_loss(const AudioBuffer& buf, double frame_ms, double loss_prob, std::uint64_t seed);

/// Coloured, slowly modulated Gaussian noise, deterministic in the seed.
AudioBuffer synthetic_noise(std::size_t samples, int sample_rate, std::uint64_t seed);

// ---- chain -----------------------------------------------------------------

enum class Stage { reverb, noise, bandwidth, clip, codec, packet_loss };
inline constexpr std::size_t kStageCount = 6;
inline constexpr std::array<Stage, kStageCount> kStageOrder = {Stage::reverb, Stage::noise,     Stage::bandwidth,
                                                                Stage::clip,   Stage::codec,     Stage::packet_loss};

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct ChainConfig {
  std::array<double, kStageCount> apply_prob{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  double rt60_min = 0.2;
  double rt60_max = 1.0;
  double snr_min_db = -5.0;
  double snr_max_db = 20.0;
  std::vector<double> cutoffs_hz{2000.0, 4000.0, 6000.0};
  double clip_min = 0.1;  // fraction of the input peak
  double clip_max = 0.5;
  std::vector<int> codec_bits{6, 8};
  double loss_min = 0.05;
  double loss_max = 0.2;
  double frame_ms = 20.0;

  static ChainConfig complex() { return {}; }
  static ChainConfig noise_only();
  void validate() const;
};

void to_json(nlohmann::json& j, const ChainConfig& c);
void from_json(const nlohmann::json& j, ChainConfig& c);

/// One applied stage. `value` is the drawn parameter: rt60 (s), SNR (dB),
/// cutoff (Hz), clip fraction of peak, codec bits or loss probability.
struct StageRecord {
  Stage stage = Stage::noise;
  double value = 0.0;
  double frame_ms = 0.0;      // packet_loss
  std::uint64_t seed = 0;     // reverb, noise, packet_loss
  std::uint64_t offset = 0;   // noise crop offset
};

struct ChainRecord {
  std::vector<StageRecord> stages;
  double output_gain = 1.0;  // peak guard applied after the last stage

  bool has(Stage s) const;
  std::optional<double> snr_db() const;
};

void to_json(nlohmann::json& j, const ChainRecord& r);
void from_json(const nlohmann::json& j, ChainRecord& r);

struct ChainResult {
  AudioBuffer degraded;
  ChainRecord record;
};

/// Applies each stage with its probability, in the fixed order, drawing all
/// randomness from `stream`.
ChainResult run_chain(const ChainConfig& config, const AudioBuffer& mixture, Rng stream);
/// Re-applies a record; bit-exact with the run that produced it.
AudioBuffer replay_chain(const ChainRecord& record, const AudioBuffer& mixture);

// ---- sources ---------------------------------------------------------------

class SpeechSource {
 public:
  virtual ~SpeechSource() = default;
  virtual int n_speakers() const = 0;
  virtual std::string speaker_id(int speaker) const = 0;
  /// At most `samples` long at `sample_rate`; deterministic in `rng`.
  virtual AudioBuffer utterance(int speaker, std::size_t samples, int sample_rate, Rng rng) const = 0;
};

struct SyntheticSpeechConfig {
  int n_speakers = 6;
  double f0_low = 80.0;    // centre pitch of the lowest speaker
  double f0_high = 280.0;  // centre pitch of the highest speaker
  double max_harmonic_hz = 3500.0;
  std::uint64_t seed = 7;
};

/// Harmonic voice surrogates: a glottal-like harmonic series with a slow
/// pitch contour, per-syllable formant filtering and on/off envelopes.
/// Speaker i has a pitch band centred geometrically between f0_low and
/// f0_high, so index order is pitch order.
class SyntheticSpeakers final : public SpeechSource {
 public:
  explicit SyntheticSpeakers(SyntheticSpeechConfig config = {});
  int n_speakers() const override { return config_.n_speakers; }
  std::string speaker_id(int speaker) const override;
  AudioBuffer utterance(int speaker, std::size_t samples, int sample_rate, Rng rng) const override;
  double centre_f0(int speaker) const;

 private:
  struct Voice {
    double f0 = 120.0;
    std::array<double, 3> formant_scale{1.0, 1.0, 1.0};
    double tilt = 1.0;
  };
  SyntheticSpeechConfig config_;
  std::vector<Voice> voices_;
};

/// `<root>/<speaker>/*.wav`, speakers and files in lexicographic order.
class WavCorpus final : public SpeechSource {
 public:
  explicit WavCorpus(const std::filesystem::path& root);
  int n_speakers() const override { return static_cast<int>(speakers_.size()); }
  std::string speaker_id(int speaker) const override;
  AudioBuffer utterance(int speaker, std::size_t samples, int sample_rate, Rng rng) const override;

 private:
  std::vector<std::string> speakers_;
  std::vector<std::vector<std::filesystem::path>> files_;
};

// ---- dataset ---------------------------------------------------------------

enum class Regime { noise_only, complex };
const char* regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct SplitSizes {
  std::size_t train = 500;
  std::size_t valid = 50;
  std::size_t test = 50;
  static SplitSizes desk() { return {}; }
  static SplitSizes full() { return {110000, 5000, 1500}; }
};

struct DatasetConfig {
  std::size_t n_samples = 10;
  Regime regime = Regime::noise_only;
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  double duration = 1.0;      // seconds, longest utterance
  double min_fraction = 0.8;  // shortest utterance as a fraction of duration
  std::optional<ChainConfig> chain;  // overrides the regime's chain

  ChainConfig chain_config() const;
  std::size_t max_samples() const;
};

/// In-memory sample. Clean tracks are already scaled by the mix gain and on
/// the 16-bit grid, so mixture == clean_a + clean_b exactly and a dataset read
/// back from disk replays bit-exactly. Slot a is the lower-index speaker.
struct MixtureSample {
  std::string id;
  AudioBuffer clean_a;
  AudioBuffer clean_b;
  AudioBuffer mixture;
  AudioBuffer degraded;
  ChainRecord chain;
  double mix_gain = 1.0;
  std::string speaker_a;
  std::string speaker_b;
};

std::string sample_id(std::size_t index);
MixtureSample make_sample(const SpeechSource& source, const DatasetConfig& config, std::size_t index);
/// Reconstructs the mixture from the two clean tracks.
AudioBuffer sum_tracks(const AudioBuffer& a, const AudioBuffer& b);

struct ManifestEntry {
  std::string id;
  std::string clean_a;  // relative to the dataset root
  std::string clean_b;
  std::string degraded;
  std::string speaker_a;
  std::string speaker_b;
  std::string regime;
  int sample_rate = 16000;
  std::size_t samples = 0;
  double mix_gain = 1.0;
  std::optional<double> snr_db;
  ChainRecord chain;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

/// Writes `<root>/{clean_a,clean_b,degraded}/<id>.wav` and `manifest.jsonl`.
/// Needs at least two speakers (contract error otherwise).
std::vector<ManifestEntry> build_dataset(const SpeechSource& source, const DatasetConfig& config,
                                         const std::filesystem::path& root);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

struct StoredSample {
  ManifestEntry entry;
  AudioBuffer clean_a;
  AudioBuffer clean_b;
  AudioBuffer degraded;
};

StoredSample load_sample(const std::filesystem::path& root, const ManifestEntry& entry);

}  // namespace geneses::degrade
