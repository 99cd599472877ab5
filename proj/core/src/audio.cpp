// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <unsupported/Eigen/FFT>

#include "geneses/error.hpp"

namespace geneses::audio {

void AudioBuffer::validate() const {
  require(sample_rate > 0, Errc::contract, "sample rate must be positive");
  for (float s : samples) require(std::isfinite(s), Errc::contract, "non-finite audio sample");
}

// ---- WAV -------------------------------------------------------------------

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          Errc::format, "not a RIFF/WAVE file" + where);
  std::size_t pos = 12;
  int channels = 0;
  int rate = 0;
  bool have_fmt = false;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* h = bytes.data() + pos;
    const std::uint32_t size = le32(h + 4);
    const std::size_t body = pos + 8;
    require(body + size <= bytes.size(), Errc::format, "truncated chunk" + where);
    if (std::memcmp(h, "fmt ", 4) == 0) {
      require(size >= 16, Errc::format, "short fmt chunk" + where);
      const unsigned char* f = bytes.data() + body;
      std::uint16_t format = le16(f);
      channels = le16(f + 2);
      rate = static_cast<int>(le32(f + 4));
      const int bits = le16(f + 14);
      if (format == 0xFFFE && size >= 26) format = le16(f + 24);
      require(format == 1, Errc::format, "unsupported WAV encoding " + std::to_string(format) + where);
      require(bits == 16, Errc::format, "unsupported bit depth " + std::to_string(bits) + where);
      require(channels == 1 || channels == 2, Errc::format,
              "unsupported channel count " + std::to_string(channels) + where);
      require(rate > 0, Errc::format, "invalid sample rate" + where);
      have_fmt = true;
    } else if (std::memcmp(h, "data", 4) == 0) {
      pcm = bytes.data() + body;
      pcm_bytes = size;
    }
    pos = body + size + (size & 1u);
  }
  require(have_fmt && pcm != nullptr, Errc::format, "missing fmt or data chunk" + where);
  AudioBuffer buf;
  buf.sample_rate = rate;
  const std::size_t frames = pcm_bytes / (2u * static_cast<std::size_t>(channels));
  buf.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      acc += static_cast<std::int16_t>(le16(pcm + 2 * (i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c))));
    }
    buf.samples[i] = static_cast<float>(acc / channels / 32768.0);
  }
  return buf;
}

namespace {

std::int16_t to_pcm16(float s) {
  return static_cast<std::int16_t>(std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0));
}

}  // namespace

AudioBuffer quantize_pcm16(const AudioBuffer& buf) {
  AudioBuffer out{std::vector<float>(buf.size()), buf.sample_rate};
  for (std::size_t i = 0; i < buf.size(); ++i) out.samples[i] = static_cast<float>(to_pcm16(buf.samples[i]) / 32768.0);
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buf) {
  require(buf.sample_rate > 0, Errc::contract, "sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(buf.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(buf.sample_rate));
  put32(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, 2 * n);
  for (float s : buf.samples) put16(out, static_cast<std::uint16_t>(to_pcm16(s)));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), Errc::io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), Errc::io, "short write to " + path.string());
}

// ---- STFT ------------------------------------------------------------------

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

namespace {

void check_framing(int window, int hop) {
  require(window > 1 && std::has_single_bit(static_cast<unsigned>(window)), Errc::config,
          "STFT window " + std::to_string(window) + " is not a power of two");
  require(hop > 0 && window % hop == 0, Errc::config, "hop must divide the window");
}

}  // namespace

StftFrames stft(const AudioBuffer& buf, int window, int hop) {
  check_framing(window, hop);
  StftFrames f;
  f.window = window;
  f.hop = hop;
  f.sample_rate = buf.sample_rate;
  f.signal_length = buf.samples.size();
  f.bins = window / 2 + 1;
  const auto len = static_cast<std::int64_t>(buf.samples.size());
  f.n_frames = 1 + (len + hop - 1) / hop;
  f.data.resize(static_cast<std::size_t>(f.n_frames * f.bins));
  const auto w = hann_window(window);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(window));
  std::vector<std::complex<double>> spec;
  const std::int64_t offset = window / 2;
  for (std::int64_t t = 0; t < f.n_frames; ++t) {
    for (int i = 0; i < window; ++i) {
      const std::int64_t src = t * hop + i - offset;
      const double s = (src >= 0 && src < len) ? buf.samples[static_cast<std::size_t>(src)] : 0.0;
      frame[static_cast<std::size_t>(i)] = s * w[static_cast<std::size_t>(i)];
    }
    fft.fwd(spec, frame);
    std::copy(spec.begin(), spec.begin() + f.bins, f.data.begin() + t * f.bins);
  }
  return f;
}

AudioBuffer istft(const StftFrames& f) {
  check_framing(f.window, f.hop);
  const auto w = hann_window(f.window);
  const std::int64_t offset = f.window / 2;
  const auto len = static_cast<std::int64_t>(f.signal_length);
  std::vector<double> acc(static_cast<std::size_t>(len), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(len), 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(f.bins));
  std::vector<double> frame;
  for (std::int64_t t = 0; t < f.n_frames; ++t) {
    std::copy(f.data.begin() + t * f.bins, f.data.begin() + (t + 1) * f.bins, spec.begin());
    fft.inv(frame, spec, f.window);
    for (int i = 0; i < f.window; ++i) {
      const std::int64_t dst = t * f.hop + i - offset;
      if (dst < 0 || dst >= len) continue;
      const double wi = w[static_cast<std::size_t>(i)];
      acc[static_cast<std::size_t>(dst)] += frame[static_cast<std::size_t>(i)] * wi;
      norm[static_cast<std::size_t>(dst)] += wi * wi;
    }
  }
  AudioBuffer out;
  out.sample_rate = f.sample_rate;
  out.samples.resize(static_cast<std::size_t>(len));
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out.samples[i] = norm[i] > 1e-8 ? static_cast<float>(acc[i] / norm[i]) : 0.0f;
  }
  return out;
}

std::vector<double> power_spectrum(const StftFrames& f) {
  std::vector<double> p(f.data.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(f.data[i]);
  return p;
}

// ---- mel -------------------------------------------------------------------

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

MelFilterbank mel_filterbank(int n_mels, int window, int sample_rate, double fmin, double fmax) {
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  require(n_mels > 0 && fmin >= 0.0 && fmax > fmin && fmax <= sample_rate / 2.0 + 1e-9, Errc::config,
          "invalid mel filterbank range");
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.bins = window / 2 + 1;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.weights.assign(static_cast<std::size_t>(n_mels * fb.bins), 0.0);
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double centre = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (std::int64_t k = 0; k < fb.bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / window;
      double v = 0.0;
      if (hz > left && hz <= centre) v = (hz - left) / (centre - left);
      else if (hz > centre && hz < right) v = (right - hz) / (right - centre);
      fb.weights[static_cast<std::size_t>(m * fb.bins + k)] = v;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioBuffer& buf, int n_mels, int window, int hop, double floor) {
  auto f = stft(buf, window, hop);
  const auto fb = mel_filterbank(n_mels, window, buf.sample_rate);
  const auto p = power_spectrum(f);
  MelSpectrogram out;
  out.n_frames = f.n_frames;
  out.n_mels = n_mels;
  out.values.resize(static_cast<std::size_t>(f.n_frames * n_mels));
  for (std::int64_t t = 0; t < f.n_frames; ++t) {
    for (int m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::int64_t k = 0; k < f.bins; ++k) {
        e += fb.weights[static_cast<std::size_t>(m * f.bins + k)] * p[static_cast<std::size_t>(t * f.bins + k)];
      }
      out.values[static_cast<std::size_t>(t * n_mels + m)] = std::log(std::max(e, floor));
    }
  }
  return out;
}

// ---- resampling ------------------------------------------------------------

namespace {

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 50; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

constexpr double kZeroCrossings = 24.0;
constexpr double kKaiserBeta = 9.0;
constexpr double kRolloff = 0.94;

}  // namespace

AudioBuffer resample(const AudioBuffer& buf, int new_rate) {
  require(buf.sample_rate > 0 && new_rate > 0, Errc::contract, "sample rates must be positive");
  if (new_rate == buf.sample_rate) return buf;
  const std::int64_t g = std::gcd(buf.sample_rate, new_rate);
  const std::int64_t up = new_rate / g;
  const std::int64_t down = buf.sample_rate / g;
  const double cutoff = 0.5 * kRolloff * std::min(1.0, static_cast<double>(new_rate) / buf.sample_rate);
  const double half = kZeroCrossings / (2.0 * cutoff);
  const auto taps = static_cast<std::int64_t>(std::ceil(half));
  const double i0b = bessel_i0(kKaiserBeta);
  // table[phase][j] = h(frac + taps - 1 - j) for input index base - taps + 1 + j
  const std::int64_t width = 2 * taps;
  std::vector<double> table(static_cast<std::size_t>(up * width));
  for (std::int64_t ph = 0; ph < up; ++ph) {
    const double frac = static_cast<double>(ph) / static_cast<double>(up);
    for (std::int64_t j = 0; j < width; ++j) {
      const double tau = frac + static_cast<double>(taps - 1 - j);
      double h = 0.0;
      if (std::abs(tau) < half) {
        const double x = 2.0 * cutoff * tau;
        const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double r = tau / half;
        h = 2.0 * cutoff * sinc * bessel_i0(kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
      }
      table[static_cast<std::size_t>(ph * width + j)] = h;
    }
  }
  const auto len = static_cast<std::int64_t>(buf.samples.size());
  const std::int64_t out_len = (len * up + down - 1) / down;
  AudioBuffer out;
  out.sample_rate = new_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t num = n * down;
    const std::int64_t base = num / up;
    const std::int64_t ph = num % up;
    const double* h = table.data() + ph * width;
    double acc = 0.0;
    const std::int64_t first = base - taps + 1;
    const std::int64_t j0 = std::max<std::int64_t>(0, -first);
    const std::int64_t j1 = std::min<std::int64_t>(width, len - first);
    for (std::int64_t j = j0; j < j1; ++j) acc += h[j] * buf.samples[static_cast<std::size_t>(first + j)];
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

// ---- convolution -----------------------------------------------------------

AudioBuffer convolve_full(const AudioBuffer& buf, std::span<const float> kernel) {
  require(!kernel.empty(), Errc::contract, "convolution kernel is empty");
  for (float k : kernel) require(std::isfinite(k), Errc::contract, "non-finite convolution kernel");
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  const std::size_t n = buf.samples.size();
  const std::size_t k = kernel.size();
  out.samples.assign(n, 0.0f);
  if (n == 0) return out;
  if (k <= 64) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const std::size_t jmax = std::min(k, i + 1);
      for (std::size_t j = 0; j < jmax; ++j) acc += static_cast<double>(kernel[j]) * buf.samples[i - j];
      out.samples[i] = static_cast<float>(acc);
    }
    return out;
  }
  const std::size_t kk = std::min(k, n);
  const std::size_t m = std::bit_ceil(n + kk - 1);
  std::vector<double> a(m, 0.0), b(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i] = buf.samples[i];
  // taps beyond the input length cannot reach the truncated output
  for (std::size_t j = 0; j < kk; ++j) b[j] = kernel[j];
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> y;
  fft.inv(y, fa);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(y[i]);
  return out;
}

double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return s / static_cast<double>(x.size());
}

float peak(std::span<const float> x) {
  float p = 0.0f;
  for (float v : x) p = std::max(p, std::abs(v));
  return p;
}

double snr_db(std::span<const float> reference, std::span<const float> estimate) {
  require(reference.size() == estimate.size(), Errc::invalid_shape, "snr operands differ in length");
  double ps = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = reference[i];
    const double e = r - estimate[i];
    ps += r * r;
    pe += e * e;
  }
  if (pe == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ps / pe);
}

}  // namespace geneses::audio
