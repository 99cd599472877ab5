// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <unordered_map>

namespace geneses::nn {

template <typename T>
ParameterList<T> trainable(const ParameterList<T>& params) {
  ParameterList<T> out;
  for (const auto& p : params) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::uint64_t parameter_hash(const ParameterList<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    for (auto d : p.tensor.shape()) mix(&d, sizeof(d));
    mix(p.tensor.ptr(), static_cast<std::size_t>(p.tensor.numel()) * sizeof(T));
  }
  return h;
}

// ---- Linear ----------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, bool with_bias, Rng rng) {
  require(in > 0 && out > 0, Errc::config, "linear layer needs positive extents");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<T> w(static_cast<std::size_t>(in * out));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  weight = Tensor<T>({out, in}, std::move(w), true);
  if (with_bias) {
    std::vector<T> b(static_cast<std::size_t>(out));
    for (auto& v : b) v = static_cast<T>(rng.uniform(-bound, bound));
    bias = Tensor<T>({out}, std::move(b), true);
  }
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
void Linear<T>::zero() {
  for (auto& v : weight.mutable_data()) v = T(0);
  if (bias.defined()) {
    for (auto& v : bias.mutable_data()) v = T(0);
  }
}

// ---- convolutions ----------------------------------------------------------

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
Conv1d<T>::Conv1d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_, std::int64_t padding_,
                  Rng rng)
    : stride(stride_), padding(padding_) {
  require(in > 0 && out > 0 && kernel > 0, Errc::config, "conv layer needs positive extents");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
  weight = uniform_tensor<T>({out, in, kernel}, bound, rng);
  bias = uniform_tensor<T>({out}, bound, rng);
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x) const {
  return conv1d(x, weight, bias, stride, padding);
}

template <typename T>
void Conv1d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
ConvTranspose1d<T>::ConvTranspose1d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_,
                                    std::int64_t crop_, Rng rng)
    : stride(stride_), crop(crop_) {
  require(in > 0 && out > 0 && kernel > 0, Errc::config, "conv layer needs positive extents");
  require(crop >= 0 && 2 * crop < kernel, Errc::config, "transposed conv crop too large for kernel");
  // fan-in per output sample is about in * kernel / stride
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel) / static_cast<double>(stride));
  weight = uniform_tensor<T>({in, out, kernel}, bound, rng);
  bias = uniform_tensor<T>({out}, bound, rng);
}

template <typename T>
Tensor<T> ConvTranspose1d<T>::forward(const Tensor<T>& x) const {
  auto y = conv_transpose1d(x, weight, bias, stride);
  if (crop == 0) return y;
  return slice(y, 2, crop, y.dim(2) - 2 * crop);
}

template <typename T>
void ConvTranspose1d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---- RmsNorm ---------------------------------------------------------------

template <typename T>
RmsNorm<T>::RmsNorm(std::int64_t dim, T eps) : gain(Tensor<T>::filled({dim}, T(1), true)), epsilon(eps) {}

template <typename T>
Tensor<T> RmsNorm<T>::forward(const Tensor<T>& x) const {
  return mul(rms_normalize(x, epsilon), gain);
}

template <typename T>
void RmsNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".gain", gain});
}

// ---- Mlp -------------------------------------------------------------------

template <typename T>
Mlp<T>::Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng rng)
    : fc1(in, hidden, true, rng.split(1)), fc2(hidden, out, true, rng.split(2)) {}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const {
  return fc2.forward(silu(fc1.forward(x)));
}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---- LoRA ------------------------------------------------------------------

void LoraConfig::validate() const {
  require(rank > 0, Errc::config, "lora rank must be positive");
  require(alpha > 0.0, Errc::config, "lora alpha must be positive");
  require(dropout >= 0.0 && dropout < 1.0, Errc::config, "lora dropout must be in [0, 1)");
}

template <typename T>
LoraAdapter<T>::LoraAdapter(std::int64_t in, std::int64_t out, const LoraConfig& cfg, Rng rng) : config(cfg) {
  config.validate();
  std::vector<T> av(static_cast<std::size_t>(cfg.rank * in));
  for (auto& v : av) v = static_cast<T>(0.02 * rng.normal());
  a = Tensor<T>({cfg.rank, in}, std::move(av), true);
  b = Tensor<T>::filled({out, cfg.rank}, T(0), true);
}

template <typename T>
void LoraAdapter<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".lora_a", a});
  out.push_back({prefix + ".lora_b", b});
}

template <typename T>
Tensor<T> lora_forward(const Linear<T>& base, const LoraAdapter<T>& adapter, const Tensor<T>& x, bool training,
                       Rng dropout_rng) {
  auto y = base.forward(x);
  if (!adapter.a.defined()) return y;
  require(adapter.a.dim(1) == base.in_features() && adapter.b.dim(0) == base.out_features(), Errc::invalid_shape,
          "lora adapter does not match its base layer");
  Tensor<T> xin = x;
  const double p = adapter.config.dropout;
  if (training && p > 0.0) {
    std::vector<T> mask(static_cast<std::size_t>(x.numel()));
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : mask) m = dropout_rng.bernoulli(p) ? T(0) : keep;
    xin = mul(x, Tensor<T>(x.shape(), std::move(mask)));
  }
  auto delta = linear(linear(xin, adapter.a, Tensor<T>()), adapter.b, Tensor<T>());
  return add(y, scale(delta, adapter.scaling()));
}

template <typename T>
Linear<T> merge_lora(const Linear<T>& base, const LoraAdapter<T>& adapter) {
  Linear<T> out;
  const auto n_out = base.out_features();
  const auto n_in = base.in_features();
  const auto r = adapter.a.dim(0);
  std::vector<T> w(base.weight.data().begin(), base.weight.data().end());
  const T s = adapter.scaling();
  for (std::int64_t o = 0; o < n_out; ++o) {
    for (std::int64_t k = 0; k < r; ++k) {
      const T bk = adapter.b[o * r + k] * s;
      if (bk == T(0)) continue;
      for (std::int64_t i = 0; i < n_in; ++i) w[static_cast<std::size_t>(o * n_in + i)] += bk * adapter.a[k * n_in + i];
    }
  }
  out.weight = Tensor<T>({n_out, n_in}, std::move(w), true);
  if (base.bias.defined()) {
    out.bias = base.bias.detach();
    out.bias.set_requires_grad(true);
  }
  return out;
}

template <typename T>
LoraLinear<T>::LoraLinear(std::int64_t in, std::int64_t out, bool bias, Rng rng) : base(in, out, bias, rng) {}

template <typename T>
void LoraLinear<T>::attach(const LoraConfig& config, Rng rng) {
  adapter = LoraAdapter<T>(base.in_features(), base.out_features(), config, rng);
}

template <typename T>
Tensor<T> LoraLinear<T>::forward(const Tensor<T>& x, bool training, Rng dropout_rng) const {
  return lora_forward(base, adapter, x, training, dropout_rng);
}

template <typename T>
void LoraLinear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  base.collect(prefix, out);
  if (has_adapter()) adapter.collect(prefix, out);
}

// ---- attention -------------------------------------------------------------

template <typename T>
Tensor<T> attention_heads(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::int64_t n_heads,
                          Tensor<T>* weights_out) {
  const bool unbatched = q.rank() == 2;
  auto lift = [&](const Tensor<T>& t) { return unbatched ? reshape(t, {1, t.dim(0), t.dim(1)}) : t; };
  auto q3 = lift(q), k3 = lift(k), v3 = lift(v);
  require(q3.rank() == 3 && k3.rank() == 3 && v3.rank() == 3, Errc::invalid_shape,
          "attention expects [B, N, D], got " + shape_str(q.shape()));
  const auto b = q3.dim(0), nq = q3.dim(1), d = q3.dim(2), nk = k3.dim(1);
  require(k3.dim(2) == d && v3.dim(2) == d && v3.dim(1) == nk && k3.dim(0) == b && v3.dim(0) == b,
          Errc::invalid_shape,
          "attention operands disagree: " + shape_str(q.shape()) + " vs " + shape_str(k.shape()) + " vs " +
              shape_str(v.shape()));
  require(n_heads > 0 && d % n_heads == 0, Errc::config, "model dim must be divisible by the head count");
  const auto dh = d / n_heads;
  auto heads = [&](const Tensor<T>& t, std::int64_t n) { return permute(reshape(t, {b, n, n_heads, dh}), {0, 2, 1, 3}); };
  auto qh = heads(q3, nq), kh = heads(k3, nk), vh = heads(v3, nk);
  auto scores = scale(matmul(qh, transpose_last_two(kh)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto w = softmax(scores, -1);
  if (weights_out) *weights_out = w;
  auto ctx = reshape(permute(matmul(w, vh), {0, 2, 1, 3}), {b, nq, d});
  return unbatched ? reshape(ctx, {nq, d}) : ctx;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               std::int64_t n_heads, const AttentionWeights<T>& weights, Tensor<T>* weights_out) {
  auto ctx = attention_heads(weights.query.forward(q_in), weights.key.forward(k_in), weights.value.forward(v_in),
                             n_heads, weights_out);
  return weights.output.forward(ctx);
}

template <typename T>
Tensor<T> sinusoidal_table(std::int64_t start, std::int64_t count, std::int64_t dim) {
  require(dim > 0 && dim % 2 == 0, Errc::invalid_shape, "sinusoidal embedding needs an even dim, got " +
                                                            std::to_string(dim));
  require(count > 0, Errc::invalid_shape, "sinusoidal table needs at least one row");
  std::vector<T> out(static_cast<std::size_t>(count * dim));
  for (std::int64_t r = 0; r < count; ++r) {
    const double pos = static_cast<double>(start + r);
    for (std::int64_t i = 0; i < dim / 2; ++i) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out[static_cast<std::size_t>(r * dim + 2 * i)] = static_cast<T>(std::sin(pos * w));
      out[static_cast<std::size_t>(r * dim + 2 * i + 1)] = static_cast<T>(std::cos(pos * w));
    }
  }
  return Tensor<T>({count, dim}, std::move(out));
}

template <typename T>
Tensor<T> sinusoidal_embed(double value, std::int64_t dim) {
  require(dim > 0 && dim % 2 == 0, Errc::invalid_shape, "sinusoidal embedding needs an even dim, got " +
                                                            std::to_string(dim));
  std::vector<T> out(static_cast<std::size_t>(dim));
  for (std::int64_t i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[static_cast<std::size_t>(2 * i)] = static_cast<T>(std::sin(value * w));
    out[static_cast<std::size_t>(2 * i + 1)] = static_cast<T>(std::cos(value * w));
  }
  return Tensor<T>({dim}, std::move(out));
}

// ---- AdamW -----------------------------------------------------------------

template <typename T>
AdamW<T>::AdamW(ParameterList<T> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  std::unordered_map<std::uint64_t, int> seen;
  for (const auto& p : params_) {
    require(p.tensor.defined() && p.tensor.is_leaf() && p.tensor.requires_grad(), Errc::contract,
            "optimizer parameter '" + p.name + "' is not a trainable leaf");
    require(seen.emplace(p.tensor.id(), 0).second, Errc::contract, "parameter '" + p.name + "' registered twice");
    m_.push_back(zeros_like(p.tensor));
    v_.push_back(zeros_like(p.tensor));
  }
}

template <typename T>
void AdamW<T>::step(const Gradients<T>& grads, double lr) {
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(grads.contains(params_[i].tensor), Errc::contract, "no gradient for parameter '" + params_[i].name + "'");
    index.emplace(params_[i].tensor.id(), i);
  }
  for (const auto& [id, g] : grads) {
    require(index.count(id) != 0, Errc::contract, "gradient for a parameter the optimizer does not own");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].tensor.mutable_data();
    auto g = grads[params_[i].tensor].data();
    auto m = m_[i].mutable_data();
    auto v = v_[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + config_.epsilon);
      p[j] = static_cast<T>(static_cast<double>(p[j]) * decay - lr * update);
    }
  }
}

// ---- schedule --------------------------------------------------------------

LrSchedule LrSchedule::standard(double base_lr, std::int64_t total) {
  LrSchedule s;
  s.base_lr = base_lr;
  s.total_steps = total;
  s.warmup_steps = total / 20;
  return s;
}

double lr_at_step(const LrSchedule& s, std::int64_t step) {
  require(s.total_steps > 0 && s.warmup_steps >= 0 && s.warmup_steps <= s.total_steps, Errc::config,
          "invalid learning-rate schedule");
  if (s.kind == ScheduleKind::constant) return s.base_lr;
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double floor = s.final_fraction * s.base_lr;
  const auto span = s.total_steps - s.warmup_steps;
  if (span <= 0 || step >= s.total_steps) return step >= s.total_steps ? floor : s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return floor + (s.base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

#define GENESES_NN(T)                                                                                              \
  template ParameterList<T> trainable(const ParameterList<T>&);                                                   \
  template std::uint64_t parameter_hash(const ParameterList<T>&);                                                 \
  template class Linear<T>;                                                                                        \
  template class Conv1d<T>;                                                                                        \
  template class ConvTranspose1d<T>;                                                                               \
  template class RmsNorm<T>;                                                                                       \
  template class Mlp<T>;                                                                                           \
  template class LoraAdapter<T>;                                                                                   \
  template class LoraLinear<T>;                                                                                    \
  template class AdamW<T>;                                                                                         \
  template Tensor<T> lora_forward(const Linear<T>&, const LoraAdapter<T>&, const Tensor<T>&, bool, Rng);           \
  template Linear<T> merge_lora(const Linear<T>&, const LoraAdapter<T>&);                                          \
  template Tensor<T> attention_heads(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,           \
                                     Tensor<T>*);                                                                  \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,      \
                                          const AttentionWeights<T>&, Tensor<T>*);                                 \
  template Tensor<T> sinusoidal_embed<T>(double, std::int64_t);                                                    \
  template Tensor<T> sinusoidal_table<T>(std::int64_t, std::int64_t, std::int64_t);

GENESES_NN(float)
GENESES_NN(double)

}  // namespace geneses::nn
