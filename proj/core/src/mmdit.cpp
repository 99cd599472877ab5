// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/mmdit.hpp"

#include <cmath>

namespace geneses {

MmDitConfig MmDitConfig::desk() { return MmDitConfig{}; }

MmDitConfig MmDitConfig::full() {
  MmDitConfig c;
  c.n_layers = 12;
  c.model_dim = 768;
  c.n_heads = 12;
  c.latent_dim_per_speaker = 16;
  c.n_speakers = 2;
  c.cond_dim = 1024;
  c.max_sequence_seconds = 20.0;
  c.latent_frame_rate = 25.0;
  c.cond_frame_rate = 50.0;
  return c;
}

std::int64_t MmDitConfig::max_latent_frames() const {
  return static_cast<std::int64_t>(std::ceil(max_sequence_seconds * latent_frame_rate - 1e-9));
}

std::int64_t MmDitConfig::max_cond_frames() const {
  return static_cast<std::int64_t>(std::ceil(max_sequence_seconds * cond_frame_rate - 1e-9));
}

void MmDitConfig::validate() const {
  require(n_layers >= 1, Errc::config, "mmdit needs at least one layer");
  require(model_dim > 0 && n_heads > 0 && model_dim % n_heads == 0, Errc::config,
          "model_dim " + std::to_string(model_dim) + " is not divisible by n_heads " + std::to_string(n_heads));
  require(n_speakers >= 1, Errc::config, "n_speakers must be at least 1");
  require(model_dim % n_speakers == 0, Errc::config, "model_dim must split evenly across speaker tracks");
  require(latent_dim_per_speaker > 0 && cond_dim >= 0 && mlp_ratio > 0, Errc::config, "invalid mmdit feature dims");
  require(timestep_embed_dim > 0 && timestep_embed_dim % 2 == 0, Errc::config, "timestep_embed_dim must be even");
  require(max_sequence_seconds > 0 && latent_frame_rate > 0 && cond_frame_rate > 0, Errc::config,
          "invalid mmdit sequence limits");
}

// ---- timestep conditioner --------------------------------------------------

template <typename T>
TimestepConditioner<T>::TimestepConditioner(std::int64_t embed, std::int64_t model_dim, Rng rng)
    : embed_dim(embed), fc1(embed, model_dim, true, rng.split(1)), fc2(model_dim, model_dim, true, rng.split(2)) {}

template <typename T>
Tensor<T> TimestepConditioner<T>::forward(std::span<const double> t) const {
  std::vector<T> e;
  e.reserve(t.size() * static_cast<std::size_t>(embed_dim));
  for (double ti : t) {
    // spread [0, 1] over the sinusoid's frequency ladder
    auto row = nn::sinusoidal_embed<T>(1000.0 * ti, embed_dim);
    e.insert(e.end(), row.data().begin(), row.data().end());
  }
  Tensor<T> emb({static_cast<std::int64_t>(t.size()), embed_dim}, std::move(e));
  return fc2.forward(silu(fc1.forward(emb)));
}

template <typename T>
void TimestepConditioner<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <typename T>
void StreamBlock<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  norm_attn.collect(prefix + ".norm_attn", out);
  qkv.collect(prefix + ".qkv", out);
  modulation.collect(prefix + ".modulation", out);
  if (!pre_only) {
    proj.collect(prefix + ".proj", out);
    norm_mlp.collect(prefix + ".norm_mlp", out);
    mlp.collect(prefix + ".mlp", out);
  }
}

// ---- layers ----------------------------------------------------------------

template <typename T>
Tensor<T> add_positional(const Tensor<T>& seq, std::int64_t start_index, std::int64_t max_positions) {
  const auto len = seq.dim(-2);
  require(start_index >= 0 && start_index + len <= max_positions, Errc::sequence_length,
          "positions " + std::to_string(start_index) + ".." + std::to_string(start_index + len) +
              " exceed the maximum of " + std::to_string(max_positions));
  if (len == 0) return seq;
  return add(seq, nn::sinusoidal_table<T>(start_index, len, seq.dim(-1)));
}

namespace {

/// Splits linear(silu(y)) into `n` chunks, each expanded to [B, len, D].
template <typename T>
std::vector<Tensor<T>> modulation_chunks(const nn::Linear<T>& lin, const Tensor<T>& y_act, std::int64_t n,
                                         std::int64_t len) {
  const auto b = y_act.dim(0);
  const auto d = lin.out_features() / n;
  auto m = lin.forward(y_act);
  std::vector<Tensor<T>> out;
  for (auto& part : split(m, 1, std::vector<std::int64_t>(static_cast<std::size_t>(n), d))) {
    out.push_back(expand(reshape(part, {b, 1, d}), {b, len, d}));
  }
  return out;
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale_m) {
  return add(mul(x, add_scalar(scale_m, T(1))), shift);
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> joint_attention_layer(const Tensor<T>& latent, const Tensor<T>& cond,
                                                      const JointLayer<T>& layer, const Tensor<T>& y,
                                                      std::int64_t n_heads) {
  const auto l = latent.dim(1);
  const auto d = latent.dim(2);
  const bool has_cond = cond.defined() && cond.dim(1) > 0;
  const auto lc = has_cond ? cond.dim(1) : 0;
  auto y_act = silu(y);

  auto lat_mod = modulation_chunks(layer.latent.modulation, y_act, 6, l);
  auto lat_h = modulate(layer.latent.norm_attn.forward(latent), lat_mod[0], lat_mod[1]);
  auto lat_qkv = split(layer.latent.qkv.forward(lat_h), 2, {d, d, d});

  std::vector<Tensor<T>> cond_mod;
  std::vector<Tensor<T>> cond_qkv;
  if (has_cond) {
    cond_mod = modulation_chunks(layer.cond.modulation, y_act, layer.cond.pre_only ? 2 : 6, lc);
    auto cond_h = modulate(layer.cond.norm_attn.forward(cond), cond_mod[0], cond_mod[1]);
    cond_qkv = split(layer.cond.qkv.forward(cond_h), 2, {d, d, d});
  }

  Tensor<T> lat_attn;
  Tensor<T> cond_attn;
  if (has_cond) {
    auto q = concat<T>({lat_qkv[0], cond_qkv[0]}, 1);
    auto k = concat<T>({lat_qkv[1], cond_qkv[1]}, 1);
    auto v = concat<T>({lat_qkv[2], cond_qkv[2]}, 1);
    auto joint = nn::attention_heads(q, k, v, n_heads);
    auto parts = split(joint, 1, {l, lc});
    lat_attn = parts[0];
    cond_attn = parts[1];
  } else {
    lat_attn = nn::attention_heads(lat_qkv[0], lat_qkv[1], lat_qkv[2], n_heads);
  }

  auto stream_tail = [](const StreamBlock<T>& blk, const Tensor<T>& x, const Tensor<T>& attn,
                        const std::vector<Tensor<T>>& mod) {
    auto h = add(x, mul(mod[2], blk.proj.forward(attn)));
    auto m = modulate(blk.norm_mlp.forward(h), mod[3], mod[4]);
    return add(h, mul(mod[5], blk.mlp.forward(m)));
  };

  auto lat_out = stream_tail(layer.latent, latent, lat_attn, lat_mod);
  Tensor<T> cond_out;
  if (has_cond && !layer.cond.pre_only) cond_out = stream_tail(layer.cond, cond, cond_attn, cond_mod);
  return {lat_out, cond_out};
}

// ---- model -----------------------------------------------------------------

namespace {

template <typename T>
StreamBlock<T> make_block(std::int64_t d, std::int64_t mlp_ratio, bool pre_only, Rng rng) {
  StreamBlock<T> s;
  s.pre_only = pre_only;
  s.norm_attn = nn::RmsNorm<T>(d);
  s.qkv = nn::Linear<T>(d, 3 * d, true, rng.split(1));
  s.modulation = nn::Linear<T>(d, (pre_only ? 2 : 6) * d, true, rng.split(2));
  s.modulation.zero();
  if (!pre_only) {
    s.proj = nn::Linear<T>(d, d, true, rng.split(3));
    s.norm_mlp = nn::RmsNorm<T>(d);
    s.mlp = nn::Mlp<T>(d, mlp_ratio * d, d, rng.split(4));
  }
  return s;
}

}  // namespace

template <typename T>
MmDit<T>::MmDit(const MmDitConfig& config, Rng rng) : config_(config) {
  config_.validate();
  const auto d = config_.model_dim;
  const auto track_width = d / config_.n_speakers;
  for (std::int64_t s = 0; s < config_.n_speakers; ++s) {
    track_in_.emplace_back(config_.latent_dim_per_speaker, track_width, true, rng.split(100 + static_cast<std::uint64_t>(s)));
  }
  const bool conditional = config_.cond_dim > 0;
  if (conditional) cond_in_ = nn::Linear<T>(config_.cond_dim, d, true, rng.split(200));
  time_ = TimestepConditioner<T>(config_.timestep_embed_dim, d, rng.split(300));
  for (std::int64_t i = 0; i < config_.n_layers; ++i) {
    auto lr = rng.split(1000 + static_cast<std::uint64_t>(i));
    JointLayer<T> layer;
    layer.latent = make_block<T>(d, config_.mlp_ratio, false, lr.split(1));
    if (conditional) layer.cond = make_block<T>(d, config_.mlp_ratio, i + 1 == config_.n_layers, lr.split(2));
    layers_.push_back(std::move(layer));
  }
  final_norm_ = nn::RmsNorm<T>(d);
  final_modulation_ = nn::Linear<T>(d, 2 * d, true, rng.split(400));
  final_modulation_.zero();
  for (std::int64_t s = 0; s < config_.n_speakers; ++s) {
    track_out_.emplace_back(d, config_.latent_dim_per_speaker, true, rng.split(500 + static_cast<std::uint64_t>(s)));
    track_out_.back().zero();
  }
}

template <typename T>
Tensor<T> MmDit<T>::forward(const Tensor<T>& x_t, const Tensor<T>& cond, double t) const {
  const std::int64_t b = x_t.rank() == 3 ? x_t.dim(0) : 1;
  std::vector<double> ts(static_cast<std::size_t>(b), t);
  return forward(x_t, cond, ts);
}

template <typename T>
Tensor<T> MmDit<T>::forward(const Tensor<T>& x_t, const Tensor<T>& cond, std::span<const double> t) const {
  const auto& c = config_;
  require(x_t.rank() == 2 || x_t.rank() == 3, Errc::invalid_shape, "x_t must be [L, F] or [B, L, F], got " +
                                                                      shape_str(x_t.shape()));
  const bool unbatched = x_t.rank() == 2;
  auto x = unbatched ? reshape(x_t, {1, x_t.dim(0), x_t.dim(1)}) : x_t;
  const auto b = x.dim(0), l = x.dim(1);
  require(x.dim(2) == c.latent_features(), Errc::config,
          "latent feature dim " + std::to_string(x.dim(2)) + " does not match config " +
              std::to_string(c.latent_features()));
  require(static_cast<std::int64_t>(t.size()) == b, Errc::invalid_shape, "need one timestep per batch entry");
  for (double ti : t) require(ti >= 0.0 && ti <= 1.0, Errc::contract, "timestep outside [0, 1]");
  require(l <= c.max_latent_frames(), Errc::sequence_length,
          "latent sequence of " + std::to_string(l) + " frames exceeds " + std::to_string(c.max_latent_frames()));

  Tensor<T> cs;
  const bool has_cond = cond.defined() && cond.numel() > 0;
  if (has_cond) {
    require(c.cond_dim > 0, Errc::config, "unconditional model given a condition sequence");
    require(cond.rank() == x_t.rank(), Errc::invalid_shape,
            "condition rank does not match x_t: " + shape_str(cond.shape()));
    cs = unbatched ? reshape(cond, {1, cond.dim(0), cond.dim(1)}) : cond;
    require(cs.dim(0) == b, Errc::invalid_shape, "condition batch does not match x_t");
    require(cs.dim(2) == c.cond_dim, Errc::config,
            "condition feature dim " + std::to_string(cs.dim(2)) + " does not match config " +
                std::to_string(c.cond_dim));
    require(cs.dim(1) <= c.max_cond_frames(), Errc::sequence_length,
            "condition sequence of " + std::to_string(cs.dim(1)) + " frames exceeds " +
                std::to_string(c.max_cond_frames()));
  }

  const auto d_spk = c.latent_dim_per_speaker;
  auto tracks = split(x, 2, std::vector<std::int64_t>(static_cast<std::size_t>(c.n_speakers), d_spk));
  std::vector<Tensor<T>> proj;
  for (std::size_t s = 0; s < tracks.size(); ++s) proj.push_back(track_in_[s].forward(tracks[s]));
  Tensor<T> h = proj.size() == 1 ? proj[0] : concat(proj, 2);
  if (c.positional) h = add_positional(h, 0, c.max_latent_frames());

  Tensor<T> hc;
  if (has_cond) {
    hc = cond_in_.forward(cs);
    if (c.positional) hc = add_positional(hc, 0, c.max_cond_frames());
  }

  auto y = time_.forward(t);
  for (const auto& layer : layers_) {
    auto [nh, nc] = joint_attention_layer(h, hc, layer, y, c.n_heads);
    h = nh;
    hc = nc;
  }

  auto fm = modulation_chunks(final_modulation_, silu(y), 2, l);
  auto hf = modulate(final_norm_.forward(h), fm[0], fm[1]);
  std::vector<Tensor<T>> outs;
  for (const auto& head : track_out_) outs.push_back(head.forward(hf));
  auto out = outs.size() == 1 ? outs[0] : concat(outs, 2);
  return unbatched ? reshape(out, {l, c.latent_features()}) : out;
}

template <typename T>
nn::ParameterList<T> MmDit<T>::parameters() const {
  nn::ParameterList<T> out;
  for (std::size_t s = 0; s < track_in_.size(); ++s) track_in_[s].collect("track_in." + std::to_string(s), out);
  if (cond_in_.weight.defined()) cond_in_.collect("cond_in", out);
  time_.collect("time", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto p = "layers." + std::to_string(i);
    layers_[i].latent.collect(p + ".latent", out);
    if (layers_[i].cond.qkv.weight.defined()) layers_[i].cond.collect(p + ".cond", out);
  }
  final_norm_.collect("final.norm", out);
  final_modulation_.collect("final.modulation", out);
  for (std::size_t s = 0; s < track_out_.size(); ++s) track_out_[s].collect("track_out." + std::to_string(s), out);
  return out;
}

#define GENESES_MMDIT(T)                                                                                      \
  template class TimestepConditioner<T>;                                                                      \
  template struct StreamBlock<T>;                                                                             \
  template class MmDit<T>;                                                                                    \
  template Tensor<T> add_positional(const Tensor<T>&, std::int64_t, std::int64_t);                            \
  template std::pair<Tensor<T>, Tensor<T>> joint_attention_layer(const Tensor<T>&, const Tensor<T>&,          \
                                                                 const JointLayer<T>&, const Tensor<T>&,      \
                                                                 std::int64_t);

GENESES_MMDIT(float)
GENESES_MMDIT(double)

}  // namespace geneses
