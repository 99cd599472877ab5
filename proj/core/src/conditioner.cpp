// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/conditioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geneses/error.hpp"

namespace geneses::cond {

namespace {

// fixed affine maps that bring the frontends to roughly unit scale
constexpr double kMelOffset = 5.0;
constexpr double kMelScale = 0.2;
constexpr double kWaveScale = 10.0;

}  // namespace

const char* frontend_name(Frontend f) { return f == Frontend::log_mel ? "log_mel" : "waveform"; }

Frontend frontend_from_name(const std::string& name) {
  if (name == "log_mel") return Frontend::log_mel;
  if (name == "waveform") return Frontend::waveform;
  fail(Errc::config, "unknown conditioner frontend '" + name + "'");
}

ConditionerConfig ConditionerConfig::full() {
  ConditionerConfig c;
  c.n_mels = 80;
  c.trunk_dim = 1024;
  c.n_heads = 16;
  c.cond_dim = 1024;
  return c;
}

ConditionerConfig ConditionerConfig::micro() {
  ConditionerConfig c;
  c.frontend = Frontend::waveform;
  c.window = 128;
  c.hop = 64;
  c.trunk_depth = 2;
  c.trunk_dim = 128;
  c.n_heads = 4;
  c.cond_dim = 64;
  return c;
}

std::int64_t ConditionerConfig::feature_dim() const { return frontend == Frontend::log_mel ? n_mels : window; }

std::int64_t ConditionerConfig::frames(std::size_t samples) const {
  return static_cast<std::int64_t>((samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop));
}

void ConditionerConfig::validate() const {
  require(sample_rate > 0 && hop > 0 && window >= hop, Errc::config, "conditioner: need window >= hop > 0");
  if (frontend == Frontend::log_mel) {
    require(n_mels > 0, Errc::config, "conditioner: n_mels must be positive");
    require((window & (window - 1)) == 0, Errc::config, "conditioner: log-mel window must be a power of two");
  }
  require(trunk_depth >= 0 && trunk_dim > 0 && cond_dim > 0 && mlp_ratio > 0, Errc::config,
          "conditioner: bad trunk sizes");
  require(n_heads > 0 && trunk_dim % n_heads == 0, Errc::config, "conditioner: trunk_dim must divide by n_heads");
  require(trunk_dim % 2 == 0, Errc::config, "conditioner: trunk_dim must be even");
  lora.validate();
}

void to_json(nlohmann::json& j, const ConditionerConfig& c) {
  j = {{"frontend", frontend_name(c.frontend)},
       {"sample_rate", c.sample_rate},
       {"n_mels", c.n_mels},
       {"window", c.window},
       {"hop", c.hop},
       {"trunk_depth", c.trunk_depth},
       {"trunk_dim", c.trunk_dim},
       {"n_heads", c.n_heads},
       {"mlp_ratio", c.mlp_ratio},
       {"cond_dim", c.cond_dim},
       {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}}},
       {"trunk_frozen", c.trunk_frozen},
       {"pretrain", c.pretrain}};
}

void from_json(const nlohmann::json& j, ConditionerConfig& c) {
  require(j.is_object(), Errc::config, "conditioner config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "frontend") c.frontend = frontend_from_name(value.get<std::string>());
    else if (key == "sample_rate") c.sample_rate = value.get<int>();
    else if (key == "n_mels") c.n_mels = value.get<int>();
    else if (key == "window") c.window = value.get<int>();
    else if (key == "hop") c.hop = value.get<int>();
    else if (key == "trunk_depth") c.trunk_depth = value.get<int>();
    else if (key == "trunk_dim") c.trunk_dim = value.get<int>();
    else if (key == "n_heads") c.n_heads = value.get<int>();
    else if (key == "mlp_ratio") c.mlp_ratio = value.get<int>();
    else if (key == "cond_dim") c.cond_dim = value.get<int>();
    else if (key == "trunk_frozen") c.trunk_frozen = value.get<bool>();
    else if (key == "pretrain") c.pretrain = value.get<bool>();
    else if (key == "lora") {
      for (const auto& [k, v] : value.items()) {
        if (k == "rank") c.lora.rank = v.get<std::int64_t>();
        else if (k == "alpha") c.lora.alpha = v.get<double>();
        else if (k == "dropout") c.lora.dropout = v.get<double>();
        else fail(Errc::config, "unknown lora key '" + k + "'");
      }
    } else {
      fail(Errc::config, "unknown conditioner config key '" + key + "'");
    }
  }
  c.validate();
}

Conditioner::Conditioner(ConditionerConfig config, Rng rng) : config_(std::move(config)) {
  config_.validate();
  const std::int64_t d = config_.trunk_dim;
  in_proj_ = nn::Linear<float>(config_.feature_dim(), d, true, rng.split(0));
  for (int i = 0; i < config_.trunk_depth; ++i) {
    const Rng r = rng.split(100 + static_cast<std::uint64_t>(i));
    TrunkBlock<float> b;
    b.norm_attn = nn::RmsNorm<float>(d);
    b.norm_mlp = nn::RmsNorm<float>(d);
    b.query = nn::LoraLinear<float>(d, d, true, r.split(0));
    b.key = nn::LoraLinear<float>(d, d, true, r.split(1));
    b.value = nn::LoraLinear<float>(d, d, true, r.split(2));
    b.proj = nn::LoraLinear<float>(d, d, true, r.split(3));
    b.fc1 = nn::LoraLinear<float>(d, d * config_.mlp_ratio, true, r.split(4));
    b.fc2 = nn::LoraLinear<float>(d * config_.mlp_ratio, d, true, r.split(5));
    blocks_.push_back(std::move(b));
  }
  final_norm_ = nn::RmsNorm<float>(d);
  output_ = nn::Linear<float>(d, config_.cond_dim, true, rng.split(1));
  head_ = nn::Linear<float>(d, config_.feature_dim(), true, rng.split(2));
}

Tensor<float> Conditioner::features(const AudioBuffer& buf) const {
  require(!buf.empty(), Errc::contract, "extract_condition: empty input");
  require(buf.sample_rate == config_.sample_rate, Errc::config,
          "conditioner expects " + std::to_string(config_.sample_rate) + " Hz audio, got " +
              std::to_string(buf.sample_rate));
  const std::int64_t frames = config_.frames(buf.size());
  const std::int64_t dim = config_.feature_dim();
  std::vector<float> out(static_cast<std::size_t>(frames * dim), 0.0f);
  if (config_.frontend == Frontend::log_mel) {
    // the STFT needs a hop dividing the window, so analyse on the common
    // divisor grid and keep every `step`-th frame
    const int inner = std::gcd(config_.window, config_.hop);
    const std::int64_t step = config_.hop / inner;
    const auto mel = audio::mel_spectrogram(buf, config_.n_mels, config_.window, inner);
    for (std::int64_t f = 0; f < frames; ++f)
      for (std::int64_t m = 0; m < dim; ++m)
        out[static_cast<std::size_t>(f * dim + m)] =
            static_cast<float>((mel.values[static_cast<std::size_t>(f * step * dim + m)] + kMelOffset) * kMelScale);
  } else {
    const auto n = static_cast<std::int64_t>(buf.size());
    for (std::int64_t f = 0; f < frames; ++f) {
      const std::int64_t start = f * config_.hop + config_.hop / 2 - config_.window / 2;
      for (std::int64_t k = 0; k < dim; ++k) {
        const std::int64_t i = start + k;
        if (i >= 0 && i < n)
          out[static_cast<std::size_t>(f * dim + k)] = static_cast<float>(buf.samples[static_cast<std::size_t>(i)] * kWaveScale);
      }
    }
  }
  return Tensor<float>({frames, dim}, std::move(out));
}

Tensor<float> Conditioner::trunk(const Tensor<float>& feats, bool training, Rng dropout_rng) const {
  require(feats.rank() == 3 && feats.dim(2) == config_.feature_dim(), Errc::invalid_shape,
          "conditioner expects [batch, frames, " + std::to_string(config_.feature_dim()) + "] features");
  const std::int64_t frames = feats.dim(1);
  auto h = add(in_proj_.forward(feats), nn::sinusoidal_table<float>(0, frames, config_.trunk_dim));
  std::uint64_t stream = 0;
  auto lin = [&](const nn::LoraLinear<float>& l, const Tensor<float>& x) {
    return l.forward(x, training, dropout_rng.split(stream++));
  };
  for (const auto& b : blocks_) {
    auto n = b.norm_attn.forward(h);
    auto ctx = nn::attention_heads(lin(b.query, n), lin(b.key, n), lin(b.value, n), config_.n_heads);
    h = add(h, lin(b.proj, ctx));
    h = add(h, lin(b.fc2, silu(lin(b.fc1, b.norm_mlp.forward(h)))));
  }
  return final_norm_.forward(h);
}

Tensor<float> Conditioner::forward(const Tensor<float>& feats, bool training, Rng dropout_rng) const {
  return output_.forward(trunk(feats, training, dropout_rng));
}

Tensor<float> Conditioner::extract(const AudioBuffer& buf) const {
  auto f = features(buf);
  auto guard = Tape<float>::suspend();
  auto c = forward(reshape(f, {1, f.dim(0), f.dim(1)}), false);
  return reshape(c, {c.dim(1), c.dim(2)});
}

void Conditioner::attach_lora(Rng rng) {
  std::uint64_t stream = 0;
  for (auto& b : blocks_)
    for (auto* l : {&b.query, &b.key, &b.value, &b.proj, &b.fc1, &b.fc2}) l->attach(config_.lora, rng.split(stream++));
}

bool Conditioner::has_lora() const { return !blocks_.empty() && blocks_.front().query.has_adapter(); }

void Conditioner::set_trunk_frozen(bool frozen) {
  for (auto& p : trunk_parameters()) {
    const bool adapter = p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b");
    p.tensor.set_requires_grad(adapter || !frozen);
  }
}

void Conditioner::collect_trunk(nn::ParameterList<float>& out) const {
  in_proj_.collect("trunk.in", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "trunk.blocks." + std::to_string(i);
    const auto& b = blocks_[i];
    b.norm_attn.collect(p + ".norm_attn", out);
    b.query.collect(p + ".query", out);
    b.key.collect(p + ".key", out);
    b.value.collect(p + ".value", out);
    b.proj.collect(p + ".proj", out);
    b.norm_mlp.collect(p + ".norm_mlp", out);
    b.fc1.collect(p + ".fc1", out);
    b.fc2.collect(p + ".fc2", out);
  }
  final_norm_.collect("trunk.norm", out);
}

nn::ParameterList<float> Conditioner::trunk_parameters() const {
  nn::ParameterList<float> out;
  collect_trunk(out);
  return out;
}

nn::ParameterList<float> Conditioner::parameters() const {
  nn::ParameterList<float> out;
  collect_trunk(out);
  output_.collect("output", out);
  return out;
}

// ---- pretraining -----------------------------------------------------------

std::vector<double> pretrain_conditioner(Conditioner& conditioner, const std::vector<AudioBuffer>& corpus,
                                         const PretrainConfig& config, const std::function<void(int, double)>& on_step) {
  require(!corpus.empty(), Errc::contract, "pretrain_conditioner: empty corpus");
  require(config.mask_prob > 0.0 && config.mask_prob < 1.0, Errc::config, "pretrain: mask_prob must be in (0, 1)");
  std::vector<Tensor<float>> feats;
  std::int64_t crop = 64;
  for (const auto& c : corpus) {
    feats.push_back(conditioner.features(c));
    crop = std::min(crop, feats.back().dim(0));
  }
  const std::int64_t dim = conditioner.config().feature_dim();

  // trunk and head train; LoRA and output are not part of this objective
  nn::ParameterList<float> params;
  for (auto& p : conditioner.trunk_parameters()) {
    if (p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b")) continue;
    p.tensor.set_requires_grad(true);
    params.push_back(p);
  }
  conditioner.reconstruction_head().collect("head", params);
  nn::AdamW<float> opt(params, nn::AdamWConfig{config.lr, 0.9, 0.999, 1e-8, 0.0});
  const auto schedule = nn::LrSchedule::standard(config.lr, config.steps);
  const Rng root(config.seed);
  std::vector<double> losses;
  for (int step = 0; step < config.steps; ++step) {
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    std::vector<float> input(static_cast<std::size_t>(config.batch * crop * dim));
    std::vector<float> target(input.size());
    std::vector<float> mask(input.size(), 0.0f);
    double masked = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const auto& f = feats[static_cast<std::size_t>(rng.below(feats.size()))];
      const auto offset = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(f.dim(0) - crop + 1)));
      for (std::int64_t t = 0; t < crop; ++t) {
        const bool hide = rng.bernoulli(config.mask_prob);
        masked += hide;
        for (std::int64_t k = 0; k < dim; ++k) {
          const auto i = static_cast<std::size_t>((b * crop + t) * dim + k);
          const float v = f[(offset + t) * dim + k];
          target[i] = v;
          input[i] = hide ? 0.0f : v;
          mask[i] = hide ? 1.0f : 0.0f;
        }
      }
    }
    if (masked == 0.0) {
      losses.push_back(losses.empty() ? 0.0 : losses.back());
      continue;
    }
    const Shape shape{config.batch, crop, dim};
    Tape<float> tape;
    auto active = tape.activate();
    auto pred = conditioner.reconstruction_head().forward(
        conditioner.trunk(Tensor<float>(shape, std::move(input)), false));
    auto err = mul(square(sub(pred, Tensor<float>(shape, std::move(target)))), Tensor<float>(shape, std::move(mask)));
    auto loss = scale(sum(err), static_cast<float>(1.0 / (masked * static_cast<double>(dim))));
    auto grads = tape.backward(loss);
    opt.step(grads, nn::lr_at_step(schedule, step + 1));
    losses.push_back(loss.item());
    if (on_step) on_step(step, losses.back());
  }
  conditioner.set_trunk_frozen(conditioner.config().trunk_frozen);
  return losses;
}

}  // namespace geneses::cond
