// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "geneses/error.hpp"

namespace geneses::degrade {

namespace {

void require_audio(const AudioBuffer& buf, const char* what) {
  require(!buf.empty(), Errc::contract, std::string(what) + ": empty input");
  require(buf.sample_rate > 0, Errc::contract, std::string(what) + ": sample rate must be positive");
}

}  // namespace

// ---- mixing ----------------------------------------------------------------

MixResult mix_two_speakers(const AudioBuffer& a, const AudioBuffer& b) {
  require(a.sample_rate == b.sample_rate, Errc::contract, "mix_two_speakers: sample rate mismatch");
  MixResult out;
  out.audio = sum_tracks(a, b);
  const float p = audio::peak(out.audio.samples);
  if (p > 1.0f) {
    out.gain = kMixPeak / p;
    for (auto& s : out.audio.samples) s = static_cast<float>(s * out.gain);
  }
  return out;
}

AudioBuffer sum_tracks(const AudioBuffer& a, const AudioBuffer& b) {
  require(a.sample_rate == b.sample_rate, Errc::contract, "sum_tracks: sample rate mismatch");
  AudioBuffer out{std::vector<float>(std::max(a.size(), b.size()), 0.0f), a.sample_rate};
  for (std::size_t i = 0; i < a.size(); ++i) out.samples[i] = a.samples[i];
  for (std::size_t i = 0; i < b.size(); ++i) out.samples[i] += b.samples[i];
  return out;
}

double noise_scale_for(double signal_power, double noise_power, double snr_db) {
  require(signal_power > 0.0, Errc::degenerate_power, "signal is silent");
  require(noise_power > 0.0, Errc::degenerate_power, "noise is silent");
  return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

NoisyMix mix_at_snr(const AudioBuffer& signal, const AudioBuffer& noise, double snr_db, std::size_t offset) {
  require(signal.sample_rate == noise.sample_rate, Errc::contract, "mix_at_snr: sample rate mismatch");
  require(std::isfinite(snr_db), Errc::contract, "mix_at_snr: non-finite SNR");
  require(offset <= noise.size() && noise.size() - offset >= signal.size(), Errc::contract,
          "mix_at_snr: noise shorter than signal");
  const std::span<const float> seg(noise.samples.data() + offset, signal.size());
  NoisyMix out;
  out.noise_scale = noise_scale_for(audio::mean_power(signal.samples), audio::mean_power(seg), snr_db);
  out.audio = signal;
  for (std::size_t i = 0; i < signal.size(); ++i)
    out.audio.samples[i] = static_cast<float>(signal.samples[i] + out.noise_scale * seg[i]);
  return out;
}

// ---- stages ----------------------------------------------------------------

std::vector<float> make_rir(double rt60, int sample_rate, std::uint64_t seed) {
  require(rt60 > 0.0 && sample_rate > 0, Errc::contract, "make_rir: rt60 and rate must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(rt60 * sample_rate));
  std::vector<double> h(std::max<std::size_t>(n, 2));
  const Rng rng(seed);
  const double decay = std::log(1000.0) / (rt60 * sample_rate);  // amplitude down 60 dB at rt60
  double tail = 0.0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    h[i] = Rng::normal_at(rng.key(), i) * std::exp(-decay * static_cast<double>(i));
    tail += h[i] * h[i];
  }
  // direct-to-reverberant ratio of 0 dB
  const double g = 1.0 / std::sqrt(tail);
  h[0] = 1.0;
  for (std::size_t i = 1; i < h.size(); ++i) h[i] *= g;
  const double norm = 1.0 / std::sqrt(2.0);
  std::vector<float> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = static_cast<float>(h[i] * norm);
  return out;
}

AudioBuffer apply_reverb(const AudioBuffer& buf, std::span<const float> rir) {
  require_audio(buf, "apply_reverb");
  return audio::convolve_full(buf, rir);
}

AudioBuffer bandwidth_limit(const AudioBuffer& buf, double cutoff_hz) {
  require_audio(buf, "bandwidth_limit");
  require(cutoff_hz > 0.0, Errc::contract, "bandwidth_limit: cutoff must be positive");
  const int low_rate = static_cast<int>(std::lround(2.0 * cutoff_hz));
  if (low_rate >= buf.sample_rate) return buf;
  auto out = audio::resample(audio::resample(buf, low_rate), buf.sample_rate);
  out.samples.resize(buf.size(), 0.0f);
  return out;
}

AudioBuffer clip(const AudioBuffer& buf, double threshold) {
  require_audio(buf, "clip");
  require(threshold >= 0.0, Errc::contract, "clip: negative threshold");
  const auto t = static_cast<float>(threshold);
  AudioBuffer out = buf;
  for (auto& s : out.samples) s = std::clamp(s, -t, t);
  return out;
}

AudioBuffer codec_distort(const AudioBuffer& buf, int bits) {
  require_audio(buf, "codec_distort");
  require(bits >= 2 && bits <= 16, Errc::contract, "codec_distort: bits must be in [2, 16]");
  constexpr double mu = 255.0;
  const double log1mu = std::log1p(mu);
  const double half = std::ldexp(1.0, bits - 1) - 1.0;
  AudioBuffer out = buf;
  for (auto& s : out.samples) {
    const double x = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const double y = std::copysign(std::log1p(mu * std::abs(x)) / log1mu, x);
    const double q = std::round(y * half) / half;
    s = static_cast<float>(std::copysign(std::expm1(std::abs(q) * log1mu) / mu, q));
  }
  return out;
}

AudioBuffer packet_loss(const AudioBuffer& buf, double frame_ms, double loss_prob, std::uint64_t seed) {
  require_audio(buf, "packet_loss");
  require(frame_ms > 0.0, Errc::contract, "packet_loss: frame length must be positive");
  require(loss_prob >= 0.0 && loss_prob <= 1.0, Errc::contract, "packet_loss: probability outside [0, 1]");
  const auto frame = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frame_ms * buf.sample_rate / 1000.0)));
  const Rng rng(seed);
  AudioBuffer out = buf;
  for (std::size_t f = 0; f * frame < out.size(); ++f) {
    if (Rng::uniform_at(rng.key(), f) >= loss_prob) continue;
    const std::size_t end = std::min(out.size(), (f + 1) * frame);
    std::fill(out.samples.begin() + static_cast<std::ptrdiff_t>(f * frame),
              out.samples.begin() + static_cast<std::ptrdiff_t>(end), 0.0f);
  }
  return out;
}

AudioBuffer synthetic_noise(std::size_t samples, int sample_rate, std::uint64_t seed) {
  require(sample_rate > 0, Errc::contract, "synthetic_noise: sample rate must be positive");
  Rng rng(seed);
  const double colour = rng.uniform(0.0, 0.98);
  const double mix = rng.uniform();
  const double depth = rng.uniform(0.0, 0.5);
  const double rate = rng.uniform(0.2, 4.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Rng white = rng.split(1);
  const double unit = std::sqrt(1.0 - colour * colour);
  AudioBuffer out{std::vector<float>(samples), sample_rate};
  double y = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double g = Rng::normal_at(white.key(), i);
    y = colour * y + unit * g;
    const double am = 1.0 + depth * std::sin(2.0 * std::numbers::pi * rate * static_cast<double>(i) / sample_rate + phase);
    out.samples[i] = static_cast<float>(0.1 * am * (mix * y + (1.0 - mix) * g));
  }
  return out;
}

// ---- chain -----------------------------------------------------------------

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::reverb: return "reverb";
    case Stage::noise: return "noise";
    case Stage::bandwidth: return "bandwidth";
    case Stage::clip: return "clip";
    case Stage::codec: return "codec";
    case Stage::packet_loss: return "packet_loss";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : kStageOrder)
    if (name == stage_name(s)) return s;
  fail(Errc::config, "unknown degradation stage '" + name + "'");
}

namespace {

const char* value_key(Stage s) {
  switch (s) {
    case Stage::reverb: return "rt60_s";
    case Stage::noise: return "snr_db";
    case Stage::bandwidth: return "cutoff_hz";
    case Stage::clip: return "clip_fraction";
    case Stage::codec: return "bits";
    case Stage::packet_loss: return "loss_prob";
  }
  return "value";
}

std::size_t index_of(Stage s) { return static_cast<std::size_t>(s); }

}  // namespace

ChainConfig ChainConfig::noise_only() {
  ChainConfig c;
  c.apply_prob = {0.0, 1.0, 0.0, 0.0, 0.0, 0.0};
  return c;
}

void ChainConfig::validate() const {
  for (double p : apply_prob) require(p >= 0.0 && p <= 1.0, Errc::config, "stage probability outside [0, 1]");
  require(rt60_min > 0.0 && rt60_min <= rt60_max, Errc::config, "bad rt60 range");
  require(snr_min_db <= snr_max_db, Errc::config, "bad SNR range");
  require(!cutoffs_hz.empty(), Errc::config, "no bandwidth cutoffs");
  for (double c : cutoffs_hz) require(c > 0.0, Errc::config, "bandwidth cutoff must be positive");
  require(clip_min > 0.0 && clip_min <= clip_max, Errc::config, "bad clip range");
  require(!codec_bits.empty(), Errc::config, "no codec bit depths");
  for (int b : codec_bits) require(b >= 2 && b <= 16, Errc::config, "codec bits must be in [2, 16]");
  require(loss_min >= 0.0 && loss_min <= loss_max && loss_max <= 1.0, Errc::config, "bad loss range");
  require(frame_ms > 0.0, Errc::config, "frame_ms must be positive");
}

void to_json(nlohmann::json& j, const ChainConfig& c) {
  nlohmann::json probs = nlohmann::json::object();
  for (Stage s : kStageOrder) probs[stage_name(s)] = c.apply_prob[index_of(s)];
  j = {{"apply_prob", probs},     {"rt60_s", {c.rt60_min, c.rt60_max}},
       {"snr_db", {c.snr_min_db, c.snr_max_db}}, {"cutoffs_hz", c.cutoffs_hz},
       {"clip_fraction", {c.clip_min, c.clip_max}}, {"codec_bits", c.codec_bits},
       {"loss_prob", {c.loss_min, c.loss_max}},  {"frame_ms", c.frame_ms}};
}

void from_json(const nlohmann::json& j, ChainConfig& c) {
  require(j.is_object(), Errc::config, "chain config must be an object");
  auto range = [&](const char* key, double& lo, double& hi) {
    const auto& r = j.at(key);
    require(r.is_array() && r.size() == 2, Errc::config, std::string(key) + " must be [lo, hi]");
    lo = r[0].get<double>();
    hi = r[1].get<double>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "apply_prob") {
      for (const auto& [stage, p] : value.items()) c.apply_prob[index_of(stage_from_name(stage))] = p.get<double>();
    } else if (key == "rt60_s") {
      range("rt60_s", c.rt60_min, c.rt60_max);
    } else if (key == "snr_db") {
      range("snr_db", c.snr_min_db, c.snr_max_db);
    } else if (key == "cutoffs_hz") {
      c.cutoffs_hz = value.get<std::vector<double>>();
    } else if (key == "clip_fraction") {
      range("clip_fraction", c.clip_min, c.clip_max);
    } else if (key == "codec_bits") {
      c.codec_bits = value.get<std::vector<int>>();
    } else if (key == "loss_prob") {
      range("loss_prob", c.loss_min, c.loss_max);
    } else if (key == "frame_ms") {
      c.frame_ms = value.get<double>();
    } else {
      fail(Errc::config, "unknown chain config key '" + key + "'");
    }
  }
  c.validate();
}

bool ChainRecord::has(Stage s) const {
  return std::any_of(stages.begin(), stages.end(), [s](const StageRecord& r) { return r.stage == s; });
}

std::optional<double> ChainRecord::snr_db() const {
  for (const auto& r : stages)
    if (r.stage == Stage::noise) return r.value;
  return std::nullopt;
}

void to_json(nlohmann::json& j, const ChainRecord& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages) {
    nlohmann::json e = {{"stage", stage_name(s.stage)}, {value_key(s.stage), s.value}};
    if (s.stage == Stage::reverb || s.stage == Stage::noise || s.stage == Stage::packet_loss) e["seed"] = s.seed;
    if (s.stage == Stage::noise) e["offset"] = s.offset;
    if (s.stage == Stage::packet_loss) e["frame_ms"] = s.frame_ms;
    stages.push_back(std::move(e));
  }
  j = {{"stages", stages}, {"output_gain", r.output_gain}};
}

void from_json(const nlohmann::json& j, ChainRecord& r) {
  r.stages.clear();
  for (const auto& e : j.at("stages")) {
    StageRecord s;
    s.stage = stage_from_name(e.at("stage").get<std::string>());
    s.value = e.at(value_key(s.stage)).get<double>();
    s.seed = e.value("seed", std::uint64_t{0});
    s.offset = e.value("offset", std::uint64_t{0});
    s.frame_ms = e.value("frame_ms", 0.0);
    r.stages.push_back(s);
  }
  r.output_gain = j.at("output_gain").get<double>();
}

namespace {

AudioBuffer apply_stage(const StageRecord& s, const AudioBuffer& in) {
  switch (s.stage) {
    case Stage::reverb: {
      const auto rir = make_rir(s.value, in.sample_rate, s.seed);
      return apply_reverb(in, rir);
    }
    case Stage::noise: {
      const auto noise = synthetic_noise(in.size() + static_cast<std::size_t>(in.sample_rate), in.sample_rate, s.seed);
      return mix_at_snr(in, noise, s.value, static_cast<std::size_t>(s.offset)).audio;
    }
    case Stage::bandwidth: return bandwidth_limit(in, s.value);
    case Stage::clip: return clip(in, s.value * audio::peak(in.samples));
    case Stage::codec: return codec_distort(in, static_cast<int>(s.value));
    case Stage::packet_loss: return packet_loss(in, s.frame_ms, s.value, s.seed);
  }
  return in;
}

AudioBuffer apply_gain(AudioBuffer buf, double gain) {
  if (gain != 1.0)
    for (auto& s : buf.samples) s = static_cast<float>(s * gain);
  return buf;
}

template <typename T>
T pick(const std::vector<T>& values, Rng& rng) {
  return values[static_cast<std::size_t>(rng.below(values.size()))];
}

}  // namespace

ChainResult run_chain(const ChainConfig& config, const AudioBuffer& mixture, Rng stream) {
  config.validate();
  require_audio(mixture, "run_chain");
  ChainResult out;
  AudioBuffer x = mixture;
  for (Stage stage : kStageOrder) {
    // the coin is drawn even for p = 0 or 1 so stream positions do not depend on the config
    if (!stream.bernoulli(config.apply_prob[index_of(stage)])) continue;
    StageRecord s;
    s.stage = stage;
    switch (stage) {
      case Stage::reverb: s.value = stream.uniform(config.rt60_min, config.rt60_max); break;
      case Stage::noise:
        s.value = stream.uniform(config.snr_min_db, config.snr_max_db);
        s.offset = stream.below(static_cast<std::uint64_t>(x.sample_rate) + 1);
        break;
      case Stage::bandwidth: s.value = pick(config.cutoffs_hz, stream); break;
      case Stage::clip: s.value = stream.uniform(config.clip_min, config.clip_max); break;
      case Stage::codec: s.value = pick(config.codec_bits, stream); break;
      case Stage::packet_loss:
        s.value = stream.uniform(config.loss_min, config.loss_max);
        s.frame_ms = config.frame_ms;
        break;
    }
    s.seed = stream.next_bits();
    x = apply_stage(s, x);
    out.record.stages.push_back(s);
  }
  const float p = audio::peak(x.samples);
  if (p > 1.0f) out.record.output_gain = kMixPeak / p;
  out.degraded = apply_gain(std::move(x), out.record.output_gain);
  return out;
}

AudioBuffer replay_chain(const ChainRecord& record, const AudioBuffer& mixture) {
  require_audio(mixture, "replay_chain");
  AudioBuffer x = mixture;
  for (const auto& s : record.stages) x = apply_stage(s, x);
  return apply_gain(std::move(x), record.output_gain);
}

// ---- dataset ---------------------------------------------------------------

const char* regime_name(Regime r) { return r == Regime::noise_only ? "noise_only" : "complex"; }

Regime regime_from_name(const std::string& name) {
  if (name == "noise_only") return Regime::noise_only;
  if (name == "complex") return Regime::complex;
  fail(Errc::config, "unknown regime '" + name + "' (expected noise_only or complex)");
}

ChainConfig DatasetConfig::chain_config() const {
  if (chain) return *chain;
  return regime == Regime::noise_only ? ChainConfig::noise_only() : ChainConfig::complex();
}

std::size_t DatasetConfig::max_samples() const {
  return static_cast<std::size_t>(std::lround(duration * sample_rate));
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

MixtureSample make_sample(const SpeechSource& source, const DatasetConfig& config, std::size_t index) {
  const int n = source.n_speakers();
  require(n >= 2, Errc::contract, "need at least two source speakers");
  require(config.duration > 0.0 && config.min_fraction > 0.0 && config.min_fraction <= 1.0, Errc::config,
          "bad utterance duration settings");
  const Rng rng = Rng(config.seed).split(index);
  Rng pick = rng.split(0);
  int a = static_cast<int>(pick.below(static_cast<std::uint64_t>(n)));
  int b = static_cast<int>(pick.below(static_cast<std::uint64_t>(n - 1)));
  if (b >= a) ++b;
  if (b < a) std::swap(a, b);
  const std::size_t longest = config.max_samples();
  auto length = [&] {
    return static_cast<std::size_t>(std::lround(longest * pick.uniform(config.min_fraction, 1.0)));
  };
  const std::size_t la = length();
  const std::size_t lb = length();
  const auto ua = source.utterance(a, la, config.sample_rate, rng.split(1));
  const auto ub = source.utterance(b, lb, config.sample_rate, rng.split(2));

  MixtureSample s;
  s.id = sample_id(index);
  s.speaker_a = source.speaker_id(a);
  s.speaker_b = source.speaker_id(b);
  s.mix_gain = mix_two_speakers(ua, ub).gain;
  auto track = [&](const AudioBuffer& u) {
    AudioBuffer t{std::vector<float>(std::max(ua.size(), ub.size()), 0.0f), config.sample_rate};
    for (std::size_t i = 0; i < u.size(); ++i) t.samples[i] = static_cast<float>(u.samples[i] * s.mix_gain);
    return audio::quantize_pcm16(t);
  };
  s.clean_a = track(ua);
  s.clean_b = track(ub);
  s.mixture = sum_tracks(s.clean_a, s.clean_b);
  auto chain = run_chain(config.chain_config(), s.mixture, rng.split(3));
  s.degraded = audio::quantize_pcm16(chain.degraded);
  s.chain = std::move(chain.record);
  return s;
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"id", e.id},
       {"clean_a", e.clean_a},
       {"clean_b", e.clean_b},
       {"degraded", e.degraded},
       {"speaker_a", e.speaker_a},
       {"speaker_b", e.speaker_b},
       {"regime", e.regime},
       {"sample_rate", e.sample_rate},
       {"samples", e.samples},
       {"mix_gain", e.mix_gain},
       {"snr_db", e.snr_db ? nlohmann::json(*e.snr_db) : nlohmann::json(nullptr)},
       {"chain", e.chain}};
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.id = j.at("id").get<std::string>();
  e.clean_a = j.at("clean_a").get<std::string>();
  e.clean_b = j.at("clean_b").get<std::string>();
  e.degraded = j.at("degraded").get<std::string>();
  e.speaker_a = j.at("speaker_a").get<std::string>();
  e.speaker_b = j.at("speaker_b").get<std::string>();
  e.regime = j.at("regime").get<std::string>();
  e.sample_rate = j.at("sample_rate").get<int>();
  e.samples = j.at("samples").get<std::size_t>();
  e.mix_gain = j.at("mix_gain").get<double>();
  const auto& snr = j.at("snr_db");
  e.snr_db = snr.is_null() ? std::nullopt : std::optional<double>(snr.get<double>());
  e.chain = j.at("chain").get<ChainRecord>();
}

std::vector<ManifestEntry> build_dataset(const SpeechSource& source, const DatasetConfig& config,
                                         const std::filesystem::path& root) {
  require(source.n_speakers() >= 2, Errc::contract, "need at least two source speakers");
  config.chain_config().validate();
  std::filesystem::create_directories(root);
  std::vector<ManifestEntry> entries;
  std::ofstream manifest(root / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(manifest), Errc::io, "cannot write " + (root / "manifest.jsonl").string());
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    auto s = make_sample(source, config, i);
    ManifestEntry e;
    e.id = s.id;
    e.clean_a = "clean_a/" + s.id + ".wav";
    e.clean_b = "clean_b/" + s.id + ".wav";
    e.degraded = "degraded/" + s.id + ".wav";
    e.speaker_a = s.speaker_a;
    e.speaker_b = s.speaker_b;
    e.regime = regime_name(config.regime);
    e.sample_rate = config.sample_rate;
    e.samples = s.mixture.size();
    e.mix_gain = s.mix_gain;
    e.snr_db = s.chain.snr_db();
    e.chain = s.chain;
    audio::write_wav(root / e.clean_a, s.clean_a);
    audio::write_wav(root / e.clean_b, s.clean_b);
    audio::write_wav(root / e.degraded, s.degraded);
    manifest << nlohmann::json(e).dump() << '\n';
    entries.push_back(std::move(e));
  }
  require(static_cast<bool>(manifest), Errc::io, "short write to manifest");
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.jsonl";
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ManifestEntry>());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::data, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

StoredSample load_sample(const std::filesystem::path& root, const ManifestEntry& entry) {
  StoredSample s{entry, audio::read_wav(root / entry.clean_a), audio::read_wav(root / entry.clean_b),
                 audio::read_wav(root / entry.degraded)};
  require(s.clean_a.size() == entry.samples && s.clean_b.size() == entry.samples && s.degraded.size() == entry.samples,
          Errc::data, "sample " + entry.id + ": length does not match manifest");
  return s;
}

}  // namespace geneses::degrade
