// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/flow.hpp"

#include <cmath>

namespace geneses::flow {

namespace {

template <typename T>
void check_pair(const Tensor<T>& x0, const Tensor<T>& x1) {
  require(x0.shape() == x1.shape(), Errc::invalid_shape,
          "x0 " + shape_str(x0.shape()) + " and x1 " + shape_str(x1.shape()) + " differ");
}

void check_t(double t) {
  require(t >= 0.0 && t <= 1.0, Errc::contract, "interpolation time " + std::to_string(t) + " outside [0, 1]");
}

}  // namespace

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, double t) {
  check_pair(x0, x1);
  check_t(t);
  std::vector<T> out(static_cast<std::size_t>(x0.numel()));
  const T a = static_cast<T>(1.0 - t);
  const T b = static_cast<T>(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0.ptr()[i] + b * x1.ptr()[i];
  return Tensor<T>(x0.shape(), std::move(out));
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const double> t) {
  check_pair(x0, x1);
  require(x0.rank() >= 1 && static_cast<std::int64_t>(t.size()) == x0.dim(0), Errc::invalid_shape,
          "need one timestep per leading entry of " + shape_str(x0.shape()));
  const auto per = static_cast<std::size_t>(x0.numel() / x0.dim(0));
  std::vector<T> out(static_cast<std::size_t>(x0.numel()));
  for (std::size_t b = 0; b < t.size(); ++b) {
    check_t(t[b]);
    const T wa = static_cast<T>(1.0 - t[b]);
    const T wb = static_cast<T>(t[b]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = wa * x0.ptr()[i] + wb * x1.ptr()[i];
  }
  return Tensor<T>(x0.shape(), std::move(out));
}

double sample_timestep(Rng& rng) {
  const double z = rng.normal();
  return 1.0 / (1.0 + std::exp(-z));
}

template <typename T>
Tensor<T> flow_loss(const Tensor<T>& v_pred, const Tensor<T>& x0, const Tensor<T>& x1) {
  check_pair(x0, x1);
  require(v_pred.shape() == x1.shape(), Errc::invalid_shape,
          "prediction " + shape_str(v_pred.shape()) + " does not match target " + shape_str(x1.shape()));
  return mse(v_pred, sub(x1, x0));
}

template <typename T>
FlowBatch<T> make_flow_batch(const Tensor<T>& x1, const Tensor<T>& cond, Rng rng) {
  FlowBatch<T> b;
  b.x1 = x1;
  b.cond = cond;
  b.x0 = randn<T>(x1.shape(), rng.split(1).key());
  auto trng = rng.split(2);
  const auto n = x1.rank() >= 3 ? x1.dim(0) : 1;
  for (std::int64_t i = 0; i < n; ++i) b.t.push_back(sample_timestep(trng));
  b.xt = x1.rank() >= 3 ? interpolate(b.x0, x1, std::span<const double>(b.t)) : interpolate(b.x0, x1, b.t[0]);
  return b;
}

template <typename T>
Predictor<T> predictor_of(const MmDit<T>& model) {
  return [&model](const Tensor<T>& xt, const Tensor<T>& cond, std::span<const double> t) {
    return model.forward(xt, cond, t);
  };
}

template <typename T>
StepReport train_step(TrainStepContext<T>& ctx, const Tensor<T>& cond_input, const Tensor<T>& x1, Rng rng) {
  require(ctx.optimizer != nullptr && static_cast<bool>(ctx.predictor), Errc::contract,
          "train_step needs a predictor and an optimizer");
  auto& opt = *ctx.optimizer;
  StepReport rep;
  rep.lr = nn::lr_at_step(ctx.schedule, opt.step_count() + 1);
  Tape<T> tape;
  auto on = tape.activate();
  Tensor<T> cond = cond_input;
  if (ctx.condition && cond_input.defined()) cond = ctx.condition(cond_input, true, rng.split(3));
  auto batch = make_flow_batch(x1, cond, rng);
  auto loss = flow_loss(ctx.predictor(batch.xt, batch.cond, batch.t), batch.x0, batch.x1);
  rep.loss = static_cast<double>(loss.item());
  if (opt.parameters().empty()) return rep;
  opt.step(tape.backward(loss), rep.lr);
  return rep;
}

std::int64_t SamplerConfig::steps() const {
  require(step_size > 0.0 && step_size <= 1.0, Errc::config, "step size must be in (0, 1]");
  const double n = 1.0 / step_size;
  const double r = std::round(n);
  require(std::abs(n - r) <= 1e-9 * r, Errc::config,
          "1/step_size must be integral, got " + std::to_string(n));
  return static_cast<std::int64_t>(r);
}

template <typename T>
Tensor<T> euler_integrate(const VectorField<T>& field, const Tensor<T>& x0, double step_size) {
  const auto n = SamplerConfig{step_size}.steps();
  auto no_record = Tape<T>::suspend();
  const auto size = static_cast<std::size_t>(x0.numel());
  std::vector<double> x(x0.data().begin(), x0.data().end());
  std::vector<double> comp(size, 0.0);
  std::vector<T> xt(x0.data().begin(), x0.data().end());
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    auto v = field(Tensor<T>(x0.shape(), xt), t);
    require(v.shape() == x0.shape(), Errc::invalid_shape, "vector field changed the state shape");
    for (std::size_t j = 0; j < size; ++j) {
      const double y = step_size * static_cast<double>(v.ptr()[j]) - comp[j];
      const double s = x[j] + y;
      comp[j] = (s - x[j]) - y;
      x[j] = s;
      xt[j] = static_cast<T>(s);
    }
  }
  return Tensor<T>(x0.shape(), std::move(xt));
}

template <typename T>
Tensor<T> euler_sample(const MmDit<T>& model, const Tensor<T>& cond, const Tensor<T>& x0, double step_size) {
  return euler_integrate<T>([&](const Tensor<T>& x, double t) { return model.forward(x, cond, t); }, x0, step_size);
}

#define GENESES_FLOW(T)                                                                                   \
  template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, double);                             \
  template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, std::span<const double>);            \
  template Tensor<T> flow_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template FlowBatch<T> make_flow_batch(const Tensor<T>&, const Tensor<T>&, Rng);                         \
  template Predictor<T> predictor_of(const MmDit<T>&);                                                    \
  template StepReport train_step(TrainStepContext<T>&, const Tensor<T>&, const Tensor<T>&, Rng);          \
  template Tensor<T> euler_integrate(const VectorField<T>&, const Tensor<T>&, double);                    \
  template Tensor<T> euler_sample(const MmDit<T>&, const Tensor<T>&, const Tensor<T>&, double);

GENESES_FLOW(float)
GENESES_FLOW(double)

}  // namespace geneses::flow
