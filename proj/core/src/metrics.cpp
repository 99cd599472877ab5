// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "geneses/error.hpp"

namespace geneses::metrics {

namespace {

constexpr double kFloor = 1e-10;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  require(a == b, Errc::contract,
          std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

void check_pair(const AudioBuffer& r, const AudioBuffer& e, const char* what) {
  check_lengths(r.size(), e.size(), what);
  require(!r.empty(), Errc::contract, std::string(what) + ": empty input");
  require(r.sample_rate == e.sample_rate, Errc::contract, std::string(what) + ": sample rate mismatch");
}

// ln of mel magnitude, [frames, n_mels] -> orthonormal DCT-II, [frames, n_cepstra + 1]
std::vector<double> mel_cepstra(const AudioBuffer& buf, const SpectralConfig& cfg) {
  const auto mel = audio::mel_spectrogram(buf, cfg.n_mels, cfg.window, cfg.hop, kFloor);
  const int m = cfg.n_mels;
  const int k = cfg.n_cepstra + 1;
  std::vector<double> out(static_cast<std::size_t>(mel.n_frames * k), 0.0);
  for (std::int64_t f = 0; f < mel.n_frames; ++f) {
    for (int c = 0; c < k; ++c) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j)
        acc += 0.5 * mel.values[static_cast<std::size_t>(f * m + j)] *
               std::cos(std::numbers::pi * c * (j + 0.5) / m);
      out[static_cast<std::size_t>(f * k + c)] = acc * std::sqrt((c == 0 ? 1.0 : 2.0) / m);
    }
  }
  return out;
}

// One-third octave bands, centres 150 * 2^(i/3) Hz for i = 0..14.
constexpr int kBands = 15;
constexpr double kLowestCentre = 150.0;
constexpr int kProxyWindow = 512;
constexpr double kSilenceRangeDb = 40.0;

// [frames, bands] band envelopes (root band energy) and per-frame energy.
struct Envelopes {
  std::int64_t frames = 0;
  std::vector<double> band;
  std::vector<double> energy;
};

Envelopes envelopes(const AudioBuffer& buf, int window, int hop) {
  const auto frames = audio::stft(buf, window, hop);
  const auto power = audio::power_spectrum(frames);
  const double bin_hz = static_cast<double>(buf.sample_rate) / window;
  Envelopes env;
  env.frames = frames.n_frames;
  env.band.assign(static_cast<std::size_t>(frames.n_frames * kBands), 0.0);
  env.energy.assign(static_cast<std::size_t>(frames.n_frames), 0.0);
  for (std::int64_t f = 0; f < frames.n_frames; ++f) {
    for (std::int64_t b = 0; b < frames.bins; ++b)
      env.energy[static_cast<std::size_t>(f)] += power[static_cast<std::size_t>(f * frames.bins + b)];
    for (int i = 0; i < kBands; ++i) {
      const double centre = kLowestCentre * std::pow(2.0, i / 3.0);
      const double lo = centre * std::pow(2.0, -1.0 / 6.0);
      const double hi = centre * std::pow(2.0, 1.0 / 6.0);
      double acc = 0.0;
      for (std::int64_t b = 0; b < frames.bins; ++b) {
        const double hz = static_cast<double>(b) * bin_hz;
        if (hz >= lo && hz < hi) acc += power[static_cast<std::size_t>(f * frames.bins + b)];
      }
      env.band[static_cast<std::size_t>(f * kBands + i)] = std::sqrt(acc);
    }
  }
  return env;
}

// Pearson correlation; nullopt when both vectors are constant.
std::optional<double> correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  constexpr double tiny = 1e-20;
  if (sxx <= tiny && syy <= tiny) return std::nullopt;
  if (sxx <= tiny || syy <= tiny) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double finite_mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    s += x;
    ++n;
  }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

nlohmann::json number_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

nlohmann::json track_json(const TrackScores& t) {
  return {{"si_sdr_db", t.si_sdr_db}, {"lsd_db", t.lsd_db}, {"mcd", t.mcd}, {"intelligibility", t.intelligibility}};
}

}  // namespace

double si_sdr(std::span<const float> reference, std::span<const float> estimate) {
  check_lengths(reference.size(), estimate.size(), "si_sdr");
  double rr = 0.0, re = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += static_cast<double>(reference[i]) * reference[i];
    re += static_cast<double>(reference[i]) * estimate[i];
  }
  require(rr > 0.0, Errc::degenerate_power, "si_sdr: silent reference");
  const double alpha = re / rr;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    const double r = estimate[i] - t;
    target += t * t;
    residual += r * r;
  }
  if (target <= 0.0) return -kSiSdrCap;
  // below float resolution of the estimate the residual is rounding noise
  if (residual <= 1e-14 * target) return kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCap, kSiSdrCap);
}

double lsd(const AudioBuffer& reference, const AudioBuffer& estimate, const SpectralConfig& config) {
  check_pair(reference, estimate, "lsd");
  const auto pr = audio::power_spectrum(audio::stft(reference, config.window, config.hop));
  const auto pe = audio::power_spectrum(audio::stft(estimate, config.window, config.hop));
  double acc = 0.0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const double d = 10.0 * std::log10(std::max(pr[i], kFloor) / std::max(pe[i], kFloor));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pr.size()));
}

double mcd(const AudioBuffer& reference, const AudioBuffer& estimate, const SpectralConfig& config) {
  check_pair(reference, estimate, "mcd");
  require(config.n_cepstra >= 1 && config.n_cepstra < config.n_mels, Errc::config,
          "mcd: need 1 <= n_cepstra < n_mels");
  const auto cr = mel_cepstra(reference, config);
  const auto ce = mel_cepstra(estimate, config);
  const int k = config.n_cepstra + 1;
  const std::size_t frames = cr.size() / static_cast<std::size_t>(k);
  double acc = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    double d2 = 0.0;
    for (int c = 1; c < k; ++c) {
      const double d = cr[f * k + c] - ce[f * k + c];
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return 10.0 * std::numbers::sqrt2 / std::numbers::ln10 * acc / static_cast<double>(frames);
}

double intelligibility_proxy(const AudioBuffer& reference, const AudioBuffer& estimate) {
  check_pair(reference, estimate, "intelligibility_proxy");
  require(reference.duration() >= kProxySegmentSeconds - 1e-9, Errc::contract,
          "intelligibility_proxy: need at least 384 ms of audio");
  const double scale = reference.sample_rate / 16000.0;
  const int window = std::max(16, static_cast<int>(std::bit_floor(static_cast<unsigned>(kProxyWindow * scale))));
  const int hop = window / 2;
  const auto er = envelopes(reference, window, hop);
  const auto ee = envelopes(estimate, window, hop);

  // keep frames within 40 dB of the loudest reference frame
  const double loudest = *std::max_element(er.energy.begin(), er.energy.end());
  std::vector<std::int64_t> keep;
  for (std::int64_t f = 0; f < er.frames; ++f)
    if (loudest > 0.0 && er.energy[static_cast<std::size_t>(f)] >= loudest * std::pow(10.0, -kSilenceRangeDb / 10.0))
      keep.push_back(f);
  if (keep.size() < 2) return 0.0;

  const auto seg = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(keep.size()),
                       std::round(kProxySegmentSeconds * reference.sample_rate / hop)));
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> x(seg), y(seg);
  for (std::size_t start = 0; start + seg <= keep.size(); ++start) {
    for (int b = 0; b < kBands; ++b) {
      for (std::size_t i = 0; i < seg; ++i) {
        const auto f = static_cast<std::size_t>(keep[start + i]);
        x[i] = er.band[f * kBands + static_cast<std::size_t>(b)];
        y[i] = ee.band[f * kBands + static_cast<std::size_t>(b)];
      }
      if (auto c = correlation(x, y)) {
        total += *c;
        ++count;
      }
    }
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

PairReport evaluate_pair(const AudioBuffer& reference_a, const AudioBuffer& reference_b, const AudioBuffer& estimate_1,
                         const AudioBuffer& estimate_2, const SpectralConfig& config) {
  check_lengths(reference_a.size(), reference_b.size(), "evaluate_pair");
  check_lengths(reference_a.size(), estimate_1.size(), "evaluate_pair");
  check_lengths(reference_a.size(), estimate_2.size(), "evaluate_pair");
  auto score = [&](const AudioBuffer& ref, const AudioBuffer& est) {
    TrackScores t;
    t.si_sdr_db = si_sdr(ref.samples, est.samples);
    t.lsd_db = lsd(ref, est, config);
    t.mcd = mcd(ref, est, config);
    t.intelligibility = ref.duration() >= kProxySegmentSeconds ? intelligibility_proxy(ref, est) : std::nan("");
    return t;
  };
  PairReport r;
  r.track1 = score(reference_a, estimate_1);
  r.track2 = score(reference_b, estimate_2);
  r.si_sdr_db = 0.5 * (r.track1.si_sdr_db + r.track2.si_sdr_db);
  const double swapped =
      0.5 * (si_sdr(reference_a.samples, estimate_2.samples) + si_sdr(reference_b.samples, estimate_1.samples));
  r.slot_order_is_best = r.si_sdr_db >= swapped;
  r.best_permutation_si_sdr_db = std::max(r.si_sdr_db, swapped);
  return r;
}

void score_input(PairReport& report, const AudioBuffer& reference_a, const AudioBuffer& reference_b,
                 const AudioBuffer& mixture, const SpectralConfig& config) {
  report.input_si_sdr_db =
      0.5 * (si_sdr(reference_a.samples, mixture.samples) + si_sdr(reference_b.samples, mixture.samples));
  report.input_lsd_db = 0.5 * (lsd(reference_a, mixture, config) + lsd(reference_b, mixture, config));
}

std::optional<double> EvalSummary::si_sdr_improvement_db() const {
  if (!input_si_sdr_db) return std::nullopt;
  return si_sdr_db - *input_si_sdr_db;
}

EvalSummary summarize(const std::vector<PairReport>& reports) {
  EvalSummary s;
  s.n = reports.size();
  if (reports.empty()) return s;
  std::vector<double> sdr, best, l, m, q, in_sdr, in_lsd;
  double slot = 0.0;
  for (const auto& r : reports) {
    sdr.push_back(r.si_sdr_db);
    best.push_back(r.best_permutation_si_sdr_db);
    l.push_back(r.lsd_db());
    m.push_back(r.mcd());
    q.push_back(r.intelligibility());
    slot += r.slot_order_is_best ? 1.0 : 0.0;
    if (r.input_si_sdr_db) in_sdr.push_back(*r.input_si_sdr_db);
    if (r.input_lsd_db) in_lsd.push_back(*r.input_lsd_db);
  }
  s.si_sdr_db = finite_mean(sdr);
  s.best_permutation_si_sdr_db = finite_mean(best);
  s.lsd_db = finite_mean(l);
  s.mcd = finite_mean(m);
  s.intelligibility = finite_mean(q);
  s.slot_order_rate = slot / static_cast<double>(reports.size());
  if (in_sdr.size() == reports.size()) s.input_si_sdr_db = finite_mean(in_sdr);
  if (in_lsd.size() == reports.size()) s.input_lsd_db = finite_mean(in_lsd);
  return s;
}

nlohmann::json to_json(const PairReport& r) {
  nlohmann::json j{{"id", r.id},
                   {"si_sdr_db", r.si_sdr_db},
                   {"best_permutation_si_sdr_db", r.best_permutation_si_sdr_db},
                   {"slot_order_is_best", r.slot_order_is_best},
                   {"lsd_db", r.lsd_db()},
                   {"mcd", r.mcd()},
                   {"intelligibility", number_or_null(r.intelligibility())},
                   {"track1", track_json(r.track1)},
                   {"track2", track_json(r.track2)},
                   {"input_si_sdr_db", number_or_null(r.input_si_sdr_db)},
                   {"input_lsd_db", number_or_null(r.input_lsd_db)}};
  if (std::isnan(r.track1.intelligibility)) j["track1"]["intelligibility"] = nullptr;
  if (std::isnan(r.track2.intelligibility)) j["track2"]["intelligibility"] = nullptr;
  for (const auto& c : kExternalColumns) j[c] = nullptr;
  return j;
}

nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json j{{"n", s.n},
                   {"si_sdr_db", number_or_null(s.si_sdr_db)},
                   {"best_permutation_si_sdr_db", number_or_null(s.best_permutation_si_sdr_db)},
                   {"slot_order_rate", s.slot_order_rate},
                   {"lsd_db", number_or_null(s.lsd_db)},
                   {"mcd", number_or_null(s.mcd)},
                   {"intelligibility", number_or_null(s.intelligibility)},
                   {"input_si_sdr_db", number_or_null(s.input_si_sdr_db)},
                   {"input_lsd_db", number_or_null(s.input_lsd_db)},
                   {"si_sdr_improvement_db", number_or_null(s.si_sdr_improvement_db())}};
  for (const auto& c : kExternalColumns) j[c] = nullptr;
  return j;
}

std::string summary_table(const EvalSummary& s) {
  auto cell = [](std::optional<double> v) {
    if (!v || !std::isfinite(*v)) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << *v;
    return os.str();
  };
  std::ostringstream os;
  os << std::left;
  auto row = [&](const std::string& name, const std::string& value) {
    os << std::setw(28) << name << value << "\n";
  };
  row("samples", std::to_string(s.n));
  row("si_sdr_db", cell(s.si_sdr_db));
  row("input_si_sdr_db", cell(s.input_si_sdr_db));
  row("si_sdr_improvement_db", cell(s.si_sdr_improvement_db()));
  row("best_permutation_si_sdr_db", cell(s.best_permutation_si_sdr_db));
  row("slot_order_rate", cell(s.slot_order_rate));
  row("lsd_db", cell(s.lsd_db));
  row("input_lsd_db", cell(s.input_lsd_db));
  row("mcd", cell(s.mcd));
  row("intelligibility", cell(s.intelligibility));
  for (const auto& c : kExternalColumns) row(c, "-");
  return os.str();
}

void write_report(const std::filesystem::path& dir, const std::vector<PairReport>& reports) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    require(out.good(), Errc::io, "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("report.jsonl");
    for (const auto& r : reports) out << to_json(r).dump() << "\n";
  }
  const auto summary = summarize(reports);
  open("summary.json") << to_json(summary).dump(2) << "\n";
  open("summary.txt") << summary_table(summary);
}

}  // namespace geneses::metrics
