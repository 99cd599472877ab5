// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "geneses/mmdit.hpp"
#include "geneses/nn.hpp"
#include "geneses/rng.hpp"
#include "geneses/tensor.hpp"

namespace geneses::flow {

/// (1 - t) x0 + t x1. Not recorded on any tape.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, double t);

/// Per-sample t along the leading axis of x0/x1.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const double> t);

/// sigmoid(z), z ~ N(0, 1).
double sample_timestep(Rng& rng);

/// mean((v_pred - (x1 - x0))^2).
template <typename T>
Tensor<T> flow_loss(const Tensor<T>& v_pred, const Tensor<T>& x0, const Tensor<T>& x1);

template <typename T>
struct FlowBatch {
  Tensor<T> x0;
  Tensor<T> x1;
  std::vector<double> t;
  Tensor<T> xt;
  Tensor<T> cond;
};

/// Draws x0 ~ N(0, I) shaped like x1 and one logit-normal t per leading
/// entry, from `rng`.
template <typename T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x1, const Tensor<T>& cond, Rng rng);

/// v(x_t, c, t) with one t per leading entry of x_t.
template <typename T>
using Predictor = std::function<Tensor<T>(const Tensor<T>& x_t, const Tensor<T>& cond, std::span<const double> t)>;

/// Maps raw conditioning input to the condition sequence; `training` enables
/// adapter dropout drawn from the given stream.
template <typename T>
using ConditionFn = std::function<Tensor<T>(const Tensor<T>& cond_input, bool training, Rng dropout)>;

template <typename T>
Predictor<T> predictor_of(const MmDit<T>& model);

template <typename T>
struct TrainStepContext {
  Predictor<T> predictor;
  /// Empty: cond_input is already the condition sequence.
  ConditionFn<T> condition;
  nn::AdamW<T>* optimizer = nullptr;
  nn::LrSchedule schedule;
};

struct StepReport {
  double loss = 0.0;
  double lr = 0.0;
};

/// One optimisation step on a batch of (cond_input, x1). The learning rate is
/// lr_at_step(schedule, k) for the k-th update (k from 1). An optimizer that
/// owns no parameters only evaluates the loss.
template <typename T>
StepReport train_step(TrainStepContext<T>& ctx, const Tensor<T>& cond_input, const Tensor<T>& x1, Rng rng);

struct SamplerConfig {
  double step_size = 0.01;

  /// Number of Euler steps; config error unless 0 < step <= 1 and 1/step is
  /// integral.
  std::int64_t steps() const;
};

template <typename T>
using VectorField = std::function<Tensor<T>(const Tensor<T>& x, double t)>;

/// x <- x + h v(x, t) for t = 0, h, ..., 1 - h. The state is accumulated in
/// double with compensated summation.
template <typename T>
Tensor<T> euler_integrate(const VectorField<T>& field, const Tensor<T>& x0, double step_size);

template <typename T>
Tensor<T> euler_sample(const MmDit<T>& model, const Tensor<T>& cond, const Tensor<T>& x0, double step_size = 0.01);

}  // namespace geneses::flow
