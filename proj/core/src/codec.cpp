// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/codec.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>

#include "geneses/error.hpp"

namespace geneses::codec {

// ---- config ----------------------------------------------------------------

VaeConfig VaeConfig::full() {
  VaeConfig c;
  c.rates = {2, 3, 4, 5, 8};
  c.latent_dim = 16;
  c.base_channels = 64;
  c.max_channels = 1024;
  c.sample_rate = 24000;
  return c;
}

VaeConfig VaeConfig::micro() {
  VaeConfig c;
  c.rates = {2, 4, 8};
  c.latent_dim = 16;
  c.base_channels = 16;
  c.max_channels = 128;
  c.sample_rate = 16000;
  return c;
}

int VaeConfig::stride() const {
  return std::accumulate(rates.begin(), rates.end(), 1, std::multiplies<>());
}

void VaeConfig::validate() const {
  require(!rates.empty(), Errc::config, "vae: rates must not be empty");
  for (int r : rates) require(r >= 1, Errc::config, "vae: rates must be positive");
  require(latent_dim > 0, Errc::config, "vae: latent_dim must be positive");
  require(base_channels > 0 && max_channels >= base_channels, Errc::config, "vae: bad channel widths");
  require(sample_rate > 0, Errc::config, "vae: sample_rate must be positive");
  require(kl_weight >= 0.0, Errc::config, "vae: kl_weight must be non-negative");
  require(input_gain > 0.0, Errc::config, "vae: input_gain must be positive");
}

void to_json(nlohmann::json& j, const VaeConfig& c) {
  j = {{"rates", c.rates},
       {"latent_dim", c.latent_dim},
       {"base_channels", c.base_channels},
       {"max_channels", c.max_channels},
       {"sample_rate", c.sample_rate},
       {"kl_weight", c.kl_weight},
       {"input_gain", c.input_gain}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
  require(j.is_object(), Errc::config, "vae config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "rates") c.rates = value.get<std::vector<int>>();
    else if (key == "latent_dim") c.latent_dim = value.get<int>();
    else if (key == "base_channels") c.base_channels = value.get<int>();
    else if (key == "max_channels") c.max_channels = value.get<int>();
    else if (key == "sample_rate") c.sample_rate = value.get<int>();
    else if (key == "kl_weight") c.kl_weight = value.get<double>();
    else if (key == "input_gain") c.input_gain = value.get<double>();
    else fail(Errc::config, "unknown vae config key '" + key + "'");
  }
  c.validate();
}

// ---- model -----------------------------------------------------------------

Tensor<float> reparameterize(const Tensor<float>& mu, const Tensor<float>& logvar, Rng rng) {
  require(mu.shape() == logvar.shape(), Errc::invalid_shape, "reparameterize: mu and logvar shapes differ");
  auto eps = randn<float>(mu.shape(), rng.key());
  return add(mu, mul(exp(scale(logvar, 0.5f)), eps));
}

template <typename T>
Tensor<T> ResidualUnit<T>::forward(const Tensor<T>& x) const {
  return add(x, mix.forward(silu(conv.forward(silu(x)))));
}

template <typename T>
void ResidualUnit<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  conv.collect(prefix + ".conv", out);
  mix.collect(prefix + ".mix", out);
}

template struct ResidualUnit<float>;

namespace {

constexpr float kInitialLogvar = -6.0f;

// The layer default U(+-1/sqrt(fan_in)) shrinks activations through a deep
// SiLU stack; rescale weights to variance 2 / fan_in.
template <typename Layer>
Layer he(Layer layer, float extra = 1.0f) {
  const float g = std::sqrt(6.0f) * extra;
  for (auto& v : layer.weight.mutable_data()) v *= g;
  return layer;
}

ResidualUnit<float> residual(std::int64_t c, Rng rng) {
  // near-identity at initialisation
  return {he(nn::Conv1d<float>(c, c, 7, 1, 3, rng.split(0))),
          he(nn::Conv1d<float>(c, c, 1, 1, 0, rng.split(1)), 0.1f / std::sqrt(6.0f))};
}

}  // namespace

Vae::Vae(VaeConfig config, Rng rng) : config_(std::move(config)) {
  config_.validate();
  std::vector<std::int64_t> ch{config_.base_channels};
  for (std::size_t i = 0; i < config_.rates.size(); ++i)
    ch.push_back(std::min<std::int64_t>(2 * ch.back(), config_.max_channels));
  const std::int64_t dim = config_.latent_dim;
  std::uint64_t stream = 0;
  enc_in_ = he(nn::Conv1d<float>(1, ch[0], 7, 1, 3, rng.split(stream++)));
  for (std::size_t i = 0; i < config_.rates.size(); ++i) {
    const std::int64_t r = config_.rates[i];
    const std::int64_t p = (r + 1) / 2;
    enc_res_.push_back(residual(ch[i], rng.split(stream++)));
    enc_down_.push_back(he(nn::Conv1d<float>(ch[i], ch[i + 1], r + 2 * p, r, p, rng.split(stream++))));
  }
  enc_out_ = he(nn::Conv1d<float>(ch.back(), 2 * dim, 3, 1, 1, rng.split(stream++)));
  // start nearly deterministic; unit posterior noise would drown the initial means
  {
    auto b = enc_out_.bias.mutable_data();
    for (std::int64_t d = dim; d < 2 * dim; ++d) b[static_cast<std::size_t>(d)] = kInitialLogvar;
  }
  dec_in_ = he(nn::Conv1d<float>(dim, ch.back(), 7, 1, 3, rng.split(stream++)));
  for (std::size_t k = config_.rates.size(); k-- > 0;) {
    const std::int64_t r = config_.rates[k];
    const std::int64_t p = (r + 1) / 2;
    dec_up_.push_back(he(nn::ConvTranspose1d<float>(ch[k + 1], ch[k], r + 2 * p, r, p, rng.split(stream++))));
    dec_res_.push_back(residual(ch[k], rng.split(stream++)));
  }
  dec_out_ = he(nn::Conv1d<float>(ch[0], 1, 7, 1, 3, rng.split(stream++)));
  norm_mean_ = Tensor<float>::filled({dim}, 0.0f);
  norm_std_ = Tensor<float>::filled({dim}, 1.0f);
}

Posterior Vae::encode(const Tensor<float>& wave) const {
  require(wave.rank() == 2, Errc::config, "vae encode expects [batch, samples]");
  const std::int64_t stride = config_.stride();
  require(wave.dim(1) > 0 && wave.dim(1) % stride == 0, Errc::config,
          "vae encode: length " + std::to_string(wave.dim(1)) + " is not a multiple of the stride " +
              std::to_string(stride));
  auto h = enc_in_.forward(reshape(scale(wave, static_cast<float>(config_.input_gain)), {wave.dim(0), 1, wave.dim(1)}));
  for (std::size_t i = 0; i < enc_down_.size(); ++i) h = enc_down_[i].forward(silu(enc_res_[i].forward(h)));
  h = permute(enc_out_.forward(silu(h)), {0, 2, 1});
  const std::int64_t dim = config_.latent_dim;
  auto parts = split(h, 2, {dim, dim});
  return {parts[0], parts[1]};
}

Tensor<float> Vae::decode(const Tensor<float>& z) const {
  require(z.rank() == 3 && z.dim(2) == config_.latent_dim, Errc::config,
          "vae decode expects [batch, frames, " + std::to_string(config_.latent_dim) + "]");
  auto h = dec_in_.forward(permute(z, {0, 2, 1}));
  for (std::size_t i = 0; i < dec_up_.size(); ++i) h = dec_res_[i].forward(dec_up_[i].forward(silu(h)));
  h = scale(dec_out_.forward(silu(h)), static_cast<float>(1.0 / config_.input_gain));
  return reshape(h, {h.dim(0), h.dim(2)});
}

LatentTrack Vae::encode_mean(const AudioBuffer& buf) const {
  require(buf.sample_rate == config_.sample_rate, Errc::config,
          "vae expects " + std::to_string(config_.sample_rate) + " Hz audio, got " + std::to_string(buf.sample_rate));
  require(!buf.empty(), Errc::contract, "vae encode: empty audio");
  const auto stride = static_cast<std::size_t>(config_.stride());
  const std::size_t padded = (buf.size() + stride - 1) / stride * stride;
  std::vector<float> x(padded, 0.0f);
  std::copy(buf.samples.begin(), buf.samples.end(), x.begin());
  auto guard = Tape<float>::suspend();
  auto post = encode(Tensor<float>({1, static_cast<std::int64_t>(padded)}, std::move(x)));
  return {reshape(post.mu, {post.mu.dim(1), post.mu.dim(2)}), config_.frame_rate()};
}

AudioBuffer Vae::decode_track(const LatentTrack& track, std::size_t length) const {
  require(track.features.rank() == 2, Errc::config, "latent track must be [frames, dim]");
  auto guard = Tape<float>::suspend();
  auto y = decode(reshape(track.features, {1, track.frames(), track.dim()}));
  AudioBuffer out{std::vector<float>(length, 0.0f), config_.sample_rate};
  const auto n = std::min<std::size_t>(length, static_cast<std::size_t>(y.dim(1)));
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = y[static_cast<std::int64_t>(i)];
  return out;
}

Tensor<float> Vae::normalize(const Tensor<float>& mu) const {
  std::vector<float> inv(norm_std_.data().begin(), norm_std_.data().end());
  for (auto& v : inv) v = 1.0f / v;
  return mul(sub(mu, norm_mean_), Tensor<float>(norm_std_.shape(), std::move(inv)));
}

Tensor<float> Vae::denormalize(const Tensor<float>& z) const { return add(mul(z, norm_std_), norm_mean_); }

void Vae::set_normalisation(std::vector<float> mean, std::vector<float> stddev) {
  const auto dim = static_cast<std::size_t>(config_.latent_dim);
  require(mean.size() == dim && stddev.size() == dim, Errc::invalid_shape, "normalisation size must equal latent_dim");
  for (float s : stddev) require(s > 0.0f && std::isfinite(s), Errc::contract, "normalisation std must be positive");
  std::copy(mean.begin(), mean.end(), norm_mean_.mutable_data().begin());
  std::copy(stddev.begin(), stddev.end(), norm_std_.mutable_data().begin());
}

std::vector<float> Vae::latent_mean() const { return {norm_mean_.data().begin(), norm_mean_.data().end()}; }
std::vector<float> Vae::latent_std() const { return {norm_std_.data().begin(), norm_std_.data().end()}; }

nn::ParameterList<float> Vae::parameters() const {
  nn::ParameterList<float> out;
  enc_in_.collect("encoder.in", out);
  for (std::size_t i = 0; i < enc_down_.size(); ++i) {
    enc_res_[i].collect("encoder.block" + std::to_string(i) + ".res", out);
    enc_down_[i].collect("encoder.block" + std::to_string(i) + ".down", out);
  }
  enc_out_.collect("encoder.out", out);
  dec_in_.collect("decoder.in", out);
  for (std::size_t i = 0; i < dec_up_.size(); ++i) {
    dec_up_[i].collect("decoder.block" + std::to_string(i) + ".up", out);
    dec_res_[i].collect("decoder.block" + std::to_string(i) + ".res", out);
  }
  dec_out_.collect("decoder.out", out);
  out.push_back({"latent.mean", norm_mean_});
  out.push_back({"latent.std", norm_std_});
  return out;
}

// ---- losses ----------------------------------------------------------------

namespace {

// [2 * bins, 1, window]: Hann-weighted cosines then negated sines
const Tensor<float>& dft_kernel(int window) {
  static std::mutex mu;
  static std::map<int, Tensor<float>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(window);
  if (it != cache.end()) return it->second;
  const auto hann = audio::hann_window(window);
  const std::int64_t bins = window / 2 + 1;
  std::vector<float> w(static_cast<std::size_t>(2 * bins * window));
  for (std::int64_t k = 0; k < bins; ++k) {
    for (int n = 0; n < window; ++n) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k * n) / window;
      w[static_cast<std::size_t>(k * window + n)] = static_cast<float>(hann[static_cast<std::size_t>(n)] * std::cos(a));
      w[static_cast<std::size_t>((bins + k) * window + n)] = static_cast<float>(-hann[static_cast<std::size_t>(n)] * std::sin(a));
    }
  }
  return cache.emplace(window, Tensor<float>({2 * bins, 1, window}, std::move(w))).first->second;
}

constexpr float kMagEps = 1e-7f;

}  // namespace

Tensor<float> stft_magnitude(const Tensor<float>& x, int window, int hop) {
  require(x.rank() == 2, Errc::invalid_shape, "stft_magnitude expects [batch, samples]");
  require(window > 0 && hop > 0 && x.dim(1) >= window, Errc::config, "stft_magnitude: signal shorter than window");
  const auto& kernel = dft_kernel(window);
  const std::int64_t bins = window / 2 + 1;
  auto spec = conv1d(reshape(x, {x.dim(0), 1, x.dim(1)}), kernel, Tensor<float>(), hop, 0);
  auto parts = split(spec, 1, {bins, bins});
  return sqrt(add_scalar(add(square(parts[0]), square(parts[1])), kMagEps));
}

VaeLoss vae_loss(const Tensor<float>& x, const Tensor<float>& x_hat, const Tensor<float>& mu,
                 const Tensor<float>& logvar, double kl_weight, const VaeLossConfig& config) {
  require(x.shape() == x_hat.shape(), Errc::invalid_shape, "vae_loss: x and x_hat shapes differ");
  require(mu.shape() == logvar.shape(), Errc::invalid_shape, "vae_loss: mu and logvar shapes differ");
  VaeLoss out;
  out.spectral = Tensor<float>::scalar(0.0f);
  for (const auto& r : config.resolutions) {
    if (x.dim(1) < r.window) continue;
    auto a = stft_magnitude(x, r.window, r.hop);
    auto b = stft_magnitude(x_hat, r.window, r.hop);
    const auto floor = static_cast<float>(config.log_floor);
    auto log_term = mean(abs(sub(log(add_scalar(a, floor)), log(add_scalar(b, floor)))));
    auto lin_term = mean(abs(sub(a, b)));
    out.spectral = add(out.spectral, add(log_term, lin_term));
  }
  out.waveform = mean(abs(sub(x, x_hat)));
  // 0.5 * mean(mu^2 + e^logvar - logvar - 1)
  out.kl = scale(mean(add_scalar(sub(add(square(mu), exp(logvar)), logvar), -1.0f)), 0.5f);
  out.total = add(add(scale(out.spectral, static_cast<float>(config.spectral_weight)),
                      scale(out.waveform, static_cast<float>(config.waveform_weight))),
                  scale(out.kl, static_cast<float>(kl_weight)));
  return out;
}

// ---- training --------------------------------------------------------------

namespace {

Tensor<float> random_crops(const std::vector<AudioBuffer>& corpus, int batch, std::size_t crop, Rng& rng) {
  std::vector<float> x(static_cast<std::size_t>(batch) * crop, 0.0f);
  for (int b = 0; b < batch; ++b) {
    const auto& clip = corpus[static_cast<std::size_t>(rng.below(corpus.size()))];
    const std::size_t span = clip.size() > crop ? clip.size() - crop : 0;
    const auto offset = static_cast<std::size_t>(rng.below(span + 1));
    const std::size_t n = std::min(crop, clip.size() - offset);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset), n,
                x.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) * crop));
  }
  return Tensor<float>({batch, static_cast<std::int64_t>(crop)}, std::move(x));
}

}  // namespace

std::vector<double> train_vae(Vae& vae, const std::vector<AudioBuffer>& corpus, const VaeTrainConfig& config,
                              const StepCallback& on_step) {
  require(!corpus.empty(), Errc::contract, "train_vae: empty corpus");
  require(config.steps >= 0 && config.batch > 0, Errc::config, "train_vae: bad steps or batch");
  const auto stride = static_cast<std::size_t>(vae.config().stride());
  require(config.crop > 0 && config.crop % stride == 0, Errc::config, "train_vae: crop must be a multiple of the stride");
  for (const auto& c : corpus)
    require(c.sample_rate == vae.config().sample_rate, Errc::config, "train_vae: corpus sample rate mismatch");
  auto params = nn::trainable(vae.parameters());
  nn::AdamW<float> opt(params, nn::AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const auto schedule = nn::LrSchedule::standard(config.lr, config.steps);
  const Rng root(config.seed);
  std::vector<double> losses;
  for (int step = 0; step < config.steps; ++step) {
    Rng data = root.split(2 * static_cast<std::uint64_t>(step));
    auto x = random_crops(corpus, config.batch, config.crop, data);
    Tape<float> tape;
    auto active = tape.activate();
    auto post = vae.encode(x);
    auto z = reparameterize(post.mu, post.logvar, root.split(2 * static_cast<std::uint64_t>(step) + 1));
    auto loss = vae_loss(x, vae.decode(z), post.mu, post.logvar, vae.config().kl_weight, config.loss);
    auto grads = tape.backward(loss.total);
    opt.step(grads, nn::lr_at_step(schedule, step + 1));
    losses.push_back(loss.total.item());
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

LatentStats latent_statistics(const Vae& vae, const std::vector<AudioBuffer>& corpus) {
  require(!corpus.empty(), Errc::contract, "latent_statistics: empty corpus");
  const auto dim = static_cast<std::size_t>(vae.config().latent_dim);
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double count = 0.0;
  for (const auto& clip : corpus) {
    auto track = vae.encode_mean(clip);
    const auto data = track.features.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      sum[i % dim] += data[i];
      sq[i % dim] += static_cast<double>(data[i]) * data[i];
    }
    count += static_cast<double>(track.frames());
  }
  LatentStats s{std::vector<double>(dim), std::vector<double>(dim)};
  for (std::size_t d = 0; d < dim; ++d) {
    s.mean[d] = sum[d] / count;
    s.stddev[d] = std::sqrt(std::max(0.0, sq[d] / count - s.mean[d] * s.mean[d]));
  }
  return s;
}

void fit_normalisation(Vae& vae, const std::vector<AudioBuffer>& corpus) {
  const auto s = latent_statistics(vae, corpus);
  std::vector<float> mean(s.mean.size()), stddev(s.stddev.size());
  for (std::size_t d = 0; d < mean.size(); ++d) {
    mean[d] = static_cast<float>(s.mean[d]);
    stddev[d] = static_cast<float>(std::max(s.stddev[d], 1e-6));
  }
  vae.set_normalisation(std::move(mean), std::move(stddev));
}

// ---- mel identity codec ----------------------------------------------------

MelCodec mel_identity_encode(const AudioBuffer& buf, int n_mels, int window, int hop) {
  MelCodec out;
  out.cache = audio::stft(buf, window, hop);
  const auto mel = audio::mel_spectrogram(buf, n_mels, window, hop);
  out.track.features = Tensor<float>({mel.n_frames, mel.n_mels}, std::vector<float>(mel.values.begin(), mel.values.end()));
  out.track.frame_rate_hz = static_cast<double>(buf.sample_rate) / hop;
  return out;
}

AudioBuffer mel_identity_decode(const MelCodec& codec) { return audio::istft(codec.cache); }

}  // namespace geneses::codec
