// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geneses/ops.hpp"
#include "geneses/rng.hpp"
#include "geneses/tensor.hpp"

namespace geneses::nn {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered (name, tensor) view over a model's parameters. Tensors are shared
/// handles, so writes through the list reach the owning layer.
template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

template <typename T>
ParameterList<T> trainable(const ParameterList<T>& params);

/// FNV-1a over names, shapes and raw values; used to prove parameters did
/// not move.
template <typename T>
std::uint64_t parameter_hash(const ParameterList<T>& params);

template <typename T>
class Linear {
 public:
  Linear() = default;
  /// Weight ~ U(-1/sqrt(in), 1/sqrt(in)); bias likewise.
  Linear(std::int64_t in, std::int64_t out, bool bias, Rng rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;
  /// Zeroes the weight and bias (adaLN-zero style initialisation).
  void zero();

  std::int64_t in_features() const { return weight.dim(1); }
  std::int64_t out_features() const { return weight.dim(0); }

  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined
};

template <typename T>
class RmsNorm {
 public:
  RmsNorm() = default;
  explicit RmsNorm(std::int64_t dim, T epsilon = T(1e-6));

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  Tensor<T> gain;  // [dim]
  T epsilon = T(1e-6);
};

/// Two linear layers with SiLU in between.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  Linear<T> fc1;
  Linear<T> fc2;
};

/// x [B, Cin, L] -> [B, Cout, (L + 2 pad - K) / stride + 1].
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  /// Weight and bias ~ U(-1/sqrt(Cin K), 1/sqrt(Cin K)).
  Conv1d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding, Rng rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  Tensor<T> weight;  // [out, in, kernel]
  Tensor<T> bias;    // [out]
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

/// Transposed convolution with `crop` samples removed from both ends, so
/// kernel = stride + 2 crop maps L to L * stride.
template <typename T>
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t crop,
                  Rng rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  Tensor<T> weight;  // [in, out, kernel]
  Tensor<T> bias;    // [out]
  std::int64_t stride = 1;
  std::int64_t crop = 0;
};

struct LoraConfig {
  std::int64_t rank = 64;
  double alpha = 16.0;
  double dropout = 0.1;

  double scaling() const { return alpha / static_cast<double>(rank); }
  void validate() const;
};

/// Low-rank delta (alpha / r) * B A on top of a frozen base layer.
template <typename T>
class LoraAdapter {
 public:
  LoraAdapter() = default;
  /// A ~ N(0, 0.02^2), B = 0.
  LoraAdapter(std::int64_t in, std::int64_t out, const LoraConfig& config, Rng rng);

  T scaling() const { return static_cast<T>(config.scaling()); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  LoraConfig config;
  Tensor<T> a;  // [rank, in]
  Tensor<T> b;  // [out, rank]
};

/// base(x) + (alpha/r) * dropout(x) A^T B^T. Dropout is applied only when
/// `training`, with the mask drawn from `dropout_rng`.
template <typename T>
Tensor<T> lora_forward(const Linear<T>& base, const LoraAdapter<T>& adapter, const Tensor<T>& x, bool training,
                       Rng dropout_rng = Rng());

/// W + (alpha/r) B A as a plain linear layer.
template <typename T>
Linear<T> merge_lora(const Linear<T>& base, const LoraAdapter<T>& adapter);

/// Linear layer with an optional adapter.
template <typename T>
class LoraLinear {
 public:
  LoraLinear() = default;
  LoraLinear(std::int64_t in, std::int64_t out, bool bias, Rng rng);

  void attach(const LoraConfig& config, Rng rng);
  bool has_adapter() const { return adapter.a.defined(); }
  Tensor<T> forward(const Tensor<T>& x, bool training, Rng dropout_rng = Rng()) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  Linear<T> base;
  LoraAdapter<T> adapter;
};

template <typename T>
struct AttentionWeights {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;
};

/// Scaled dot-product attention over already-projected q/k/v of shape
/// [B, N, D] (or [N, D]); returns the concatenated heads, before any output
/// projection. `weights_out`, when given, receives [B, H, Nq, Nk].
template <typename T>
Tensor<T> attention_heads(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::int64_t n_heads,
                          Tensor<T>* weights_out = nullptr);

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               std::int64_t n_heads, const AttentionWeights<T>& weights,
                               Tensor<T>* weights_out = nullptr);

/// Interleaved [sin(v w_0), cos(v w_0), sin(v w_1), ...] with
/// w_i = 10000^(-2i/dim).
template <typename T>
Tensor<T> sinusoidal_embed(double value, std::int64_t dim);

/// Rows `start .. start+count-1` of the sinusoidal table, shape [count, dim].
template <typename T>
Tensor<T> sinusoidal_table(std::int64_t start, std::int64_t count, std::int64_t dim);

// ---- optimisation ----------------------------------------------------------

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParameterList<T> params, AdamWConfig config);

  /// One decoupled-weight-decay Adam update at learning rate `lr`. `grads`
  /// must cover exactly the registered parameters.
  void step(const Gradients<T>& grads, double lr);
  void step(const Gradients<T>& grads) { step(grads, config_.learning_rate); }

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  const ParameterList<T>& parameters() const { return params_; }
  const AdamWConfig& config() const { return config_; }
  /// First/second moments, index-aligned with parameters().
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  ParameterList<T> params_;
  AdamWConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t step_ = 0;
};

enum class ScheduleKind { warmup_cosine, constant };

struct LrSchedule {
  double base_lr = 1e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  ScheduleKind kind = ScheduleKind::warmup_cosine;
  double final_fraction = 0.1;

  /// Warmup over 5% of `total`.
  static LrSchedule standard(double base_lr, std::int64_t total);
};

/// Linear warmup 0 -> base over warmup_steps, then cosine decay to
/// final_fraction * base at total_steps.
double lr_at_step(const LrSchedule& schedule, std::int64_t step);

}  // namespace geneses::nn
