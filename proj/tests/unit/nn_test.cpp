// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "geneses/nn.hpp"
#include "support/expect.hpp"
#include "support/gradcheck.hpp"

namespace geneses::nn {
namespace {

using testing::grad_check;
using T64 = Tensor<double>;

T64 param(const Shape& shape, std::uint64_t seed, double s = 1.0) {
  auto r = randn<double>(shape, seed);
  std::vector<double> v(r.data().begin(), r.data().end());
  for (auto& x : v) x *= s;
  return T64(shape, std::move(v), true);
}

void randomize(const Tensor<double>& t, std::uint64_t seed, double s = 0.3) {
  Tensor<double> h = t;
  auto r = randn<double>(t.shape(), seed);
  auto d = h.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = s * r[static_cast<std::int64_t>(i)];
}

TEST(Linear, InitWithinFanInBound) {
  Linear<float> l(50, 20, true, Rng(3));
  const float bound = 1.0f / std::sqrt(50.0f);
  EXPECT_EQ(l.weight.shape(), (Shape{20, 50}));
  float lo = 1, hi = -1;
  for (float v : l.weight.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.8f * bound);
  EXPECT_GT(hi, 0.8f * bound);
}

TEST(Linear, GradientCheck) {
  Linear<double> l(5, 3, true, Rng(1));
  auto x = randn<double>({2, 4, 5}, 9);
  auto r = grad_check([&] { return mean(square(l.forward(x))); }, {l.weight, l.bias});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(RmsNorm, UnitGainGivesUnitRms) {
  RmsNorm<double> n(16);
  auto x = randn<double>({3, 16}, 4);
  auto y = n.forward(x);
  for (int r = 0; r < 3; ++r) {
    double ms = 0;
    for (int i = 0; i < 16; ++i) ms += y[r * 16 + i] * y[r * 16 + i];
    EXPECT_NEAR(ms / 16.0, 1.0, 1e-5);
  }
}

TEST(RmsNorm, GradientCheck) {
  RmsNorm<double> n(6);
  randomize(n.gain, 5, 1.0);
  auto x = param({3, 6}, 6);
  auto w = randn<double>({3, 6}, 7);
  auto r = grad_check([&] { return sum(mul(n.forward(x), w)); }, {x, n.gain});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Mlp, GradientCheck) {
  Mlp<double> m(4, 8, 3, Rng(2));
  auto x = randn<double>({5, 4}, 3);
  ParameterList<double> ps;
  m.collect("mlp", ps);
  std::vector<T64> ts;
  for (auto& p : ps) ts.push_back(p.tensor);
  auto r = grad_check([&] { return mean(square(m.forward(x))); }, ts);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Lora, DefaultScalingIsQuarter) {
  LoraConfig c;
  EXPECT_EQ(c.rank, 64);
  EXPECT_DOUBLE_EQ(c.alpha, 16.0);
  EXPECT_DOUBLE_EQ(c.scaling(), 0.25);
}

TEST(Lora, FreshAdapterIsIdentityOverBase) {
  Linear<float> base(32, 16, true, Rng(1));
  LoraAdapter<float> ad(32, 16, LoraConfig{}, Rng(2));
  for (float v : ad.b.data()) EXPECT_EQ(v, 0.0f);
  double var = 0;
  for (float v : ad.a.data()) var += static_cast<double>(v) * v;
  EXPECT_NEAR(std::sqrt(var / static_cast<double>(ad.a.numel())), 0.02, 0.002);
  auto x = randn<float>({4, 32}, 3);
  auto y0 = base.forward(x);
  auto y1 = lora_forward(base, ad, x, false);
  for (std::int64_t i = 0; i < y0.numel(); ++i) EXPECT_EQ(y0[i], y1[i]);
}

TEST(Lora, MergeMatchesAdapterForward) {
  Linear<float> base(24, 12, true, Rng(1));
  LoraAdapter<float> ad(24, 12, LoraConfig{8, 16.0, 0.1}, Rng(2));
  {
    auto d = ad.b.mutable_data();
    auto r = randn<float>(ad.b.shape(), 4);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.1f * r[static_cast<std::int64_t>(i)];
  }
  auto merged = merge_lora(base, ad);
  auto x = randn<float>({6, 24}, 5);
  auto a = lora_forward(base, ad, x, false);
  auto b = merged.forward(x);
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(Lora, DropoutOnlyWhenTraining) {
  Linear<double> base(16, 8, false, Rng(1));
  LoraAdapter<double> ad(16, 8, LoraConfig{4, 8.0, 0.5}, Rng(2));
  randomize(ad.b, 3);
  auto x = randn<double>({3, 16}, 4);
  auto e1 = lora_forward(base, ad, x, false, Rng(10));
  auto e2 = lora_forward(base, ad, x, false, Rng(11));
  auto t1 = lora_forward(base, ad, x, true, Rng(10));
  auto t1b = lora_forward(base, ad, x, true, Rng(10));
  auto t2 = lora_forward(base, ad, x, true, Rng(11));
  bool eval_same = true, train_same_seed = true, train_differs = false;
  for (std::int64_t i = 0; i < e1.numel(); ++i) {
    eval_same &= e1[i] == e2[i];
    train_same_seed &= t1[i] == t1b[i];
    train_differs |= t1[i] != t2[i];
  }
  EXPECT_TRUE(eval_same);
  EXPECT_TRUE(train_same_seed);
  EXPECT_TRUE(train_differs);
}

TEST(Lora, FrozenBaseReceivesNoGradient) {
  Linear<double> base(6, 4, true, Rng(1));
  base.weight.set_requires_grad(false);
  base.bias.set_requires_grad(false);
  LoraAdapter<double> ad(6, 4, LoraConfig{2, 4.0, 0.0}, Rng(2));
  randomize(ad.b, 3);
  auto x = randn<double>({5, 6}, 4);
  Tape<double> tape;
  Gradients<double> g;
  {
    auto on = tape.activate();
    g = tape.backward(mean(square(lora_forward(base, ad, x, true))));
  }
  EXPECT_FALSE(g.contains(base.weight));
  EXPECT_FALSE(g.contains(base.bias));
  EXPECT_TRUE(g.contains(ad.a));
  EXPECT_TRUE(g.contains(ad.b));
  EXPECT_EQ(g.size(), 2u);
}

TEST(Lora, GradientCheck) {
  Linear<double> base(6, 4, true, Rng(1));
  LoraAdapter<double> ad(6, 4, LoraConfig{3, 6.0, 0.0}, Rng(2));
  randomize(ad.b, 3);
  auto x = randn<double>({5, 6}, 4);
  auto r = grad_check([&] { return mean(square(lora_forward(base, ad, x, false))); },
                      {ad.a, ad.b, base.weight, base.bias});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Lora, InvalidConfigRejected) {
  EXPECT_ERRC((LoraConfig{0, 16.0, 0.1}.validate()), Errc::config);
  EXPECT_ERRC((LoraConfig{4, 16.0, 1.0}.validate()), Errc::config);
}

TEST(Attention, ZeroQueriesAverageValues) {
  auto q = zeros<double>({1, 3, 8});
  auto k = randn<double>({1, 5, 8}, 1);
  auto v = randn<double>({1, 5, 8}, 2);
  Tensor<double> w;
  auto out = attention_heads(q, k, v, 2, &w);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 8}));
  EXPECT_EQ(w.shape(), (Shape{1, 2, 3, 5}));
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 8; ++d) {
      double m = 0;
      for (int j = 0; j < 5; ++j) m += v[j * 8 + d];
      EXPECT_NEAR(out[i * 8 + d], m / 5.0, 1e-12);
    }
  }
}

TEST(Attention, MatchesDirectComputation) {
  // single head, explicit softmax(q k^T / sqrt(d)) v
  auto q = randn<double>({4, 6}, 1);
  auto k = randn<double>({3, 6}, 2);
  auto v = randn<double>({3, 6}, 3);
  auto out = attention_heads(q, k, v, 1);
  for (int i = 0; i < 4; ++i) {
    double s[3], z = 0, mx = -1e300;
    for (int j = 0; j < 3; ++j) {
      s[j] = 0;
      for (int d = 0; d < 6; ++d) s[j] += q[i * 6 + d] * k[j * 6 + d];
      s[j] /= std::sqrt(6.0);
      mx = std::max(mx, s[j]);
    }
    for (double& x : s) z += (x = std::exp(x - mx));
    for (int d = 0; d < 6; ++d) {
      double o = 0;
      for (int j = 0; j < 3; ++j) o += s[j] / z * v[j * 6 + d];
      EXPECT_NEAR(out[i * 6 + d], o, 1e-12);
    }
  }
}

TEST(Attention, WeightsSumToOne) {
  auto x = randn<float>({2, 7, 12}, 5);
  Tensor<float> w;
  attention_heads(x, x, x, 3, &w);
  for (std::int64_t r = 0; r < 2 * 3 * 7; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += w[r * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Attention, HeadCountMustDivideDim) {
  auto x = randn<float>({2, 3, 10}, 5);
  EXPECT_ERRC(attention_heads(x, x, x, 3), Errc::config);
}

TEST(Attention, MultiHeadGradientCheck) {
  AttentionWeights<double> w{Linear<double>(6, 6, true, Rng(1)), Linear<double>(6, 6, true, Rng(2)),
                             Linear<double>(6, 6, true, Rng(3)), Linear<double>(6, 6, true, Rng(4))};
  auto x = param({2, 4, 6}, 5);
  auto c = randn<double>({2, 3, 6}, 6);
  auto r = grad_check([&] { return mean(square(multi_head_attention(x, c, c, 2, w))); },
                      {x, w.query.weight, w.key.weight, w.value.bias, w.output.weight});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Sinusoid, ZeroIsAlternatingZeroOne) {
  auto e = sinusoidal_embed<double>(0.0, 8);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Sinusoid, FrequenciesFollowGeometricLadder) {
  const double v = 3.7;
  auto e = sinusoidal_embed<double>(v, 16);
  for (int i = 0; i < 8; ++i) {
    const double w = std::exp(-std::log(10000.0) * 2.0 * i / 16.0);
    EXPECT_NEAR(e[2 * i], std::sin(v * w), 1e-12);
    EXPECT_NEAR(e[2 * i + 1], std::cos(v * w), 1e-12);
  }
}

TEST(Sinusoid, TableRowsMatchEmbedding) {
  auto t = sinusoidal_table<double>(5, 4, 10);
  for (int r = 0; r < 4; ++r) {
    auto e = sinusoidal_embed<double>(5.0 + r, 10);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(t[r * 10 + i], e[i]);
  }
}

TEST(Sinusoid, OddDimRejected) {
  EXPECT_ERRC(sinusoidal_embed<float>(1.0, 7), Errc::invalid_shape);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto p = Tensor<double>::scalar(0.5, true);
  AdamW<double> opt({{"p", p}}, AdamWConfig{1e-5, 0.9, 0.999, 1e-8, 0.0});
  Tape<double> tape;
  Gradients<double> g;
  {
    auto on = tape.activate();
    g = tape.backward(sum(p));  // dL/dp = 1
  }
  opt.step(g);
  EXPECT_NEAR(p.item(), 0.5 - 1e-5 / (1.0 + 1e-8), 1e-15);
}

TEST(AdamW, ZeroGradientDecaysWeights) {
  auto p = Tensor<double>({3}, {1.0, -2.0, 4.0}, true);
  AdamWConfig c{1e-3, 0.9, 0.999, 1e-8, 0.1};
  AdamW<double> opt({{"p", p}}, c);
  Gradients<double> g;
  g.insert(p.id(), zeros_like(p));
  opt.step(g);
  const double f = 1.0 - 1e-3 * 0.1;
  EXPECT_DOUBLE_EQ(p[0], 1.0 * f);
  EXPECT_DOUBLE_EQ(p[1], -2.0 * f);
  EXPECT_DOUBLE_EQ(p[2], 4.0 * f);
}

TEST(AdamW, MatchesReferenceOverSeveralSteps) {
  auto p = Tensor<double>({2}, {0.3, -0.7}, true);
  AdamWConfig c{1e-2, 0.9, 0.999, 1e-8, 1e-2};
  AdamW<double> opt({{"p", p}}, c);
  double ref[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    Gradients<double> g;
    std::vector<double> gv = {std::sin(t * 1.0), std::cos(t * 2.0)};
    g.insert(p.id(), Tensor<double>({2}, gv));
    opt.step(g);
    for (int i = 0; i < 2; ++i) {
      ref[i] -= c.learning_rate * c.weight_decay * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * gv[i];
      v[i] = 0.999 * v[i] + 0.001 * gv[i] * gv[i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= c.learning_rate * mh / (std::sqrt(vh) + c.epsilon);
    }
  }
  EXPECT_NEAR(p[0], ref[0], 1e-14);
  EXPECT_NEAR(p[1], ref[1], 1e-14);
  EXPECT_EQ(opt.step_count(), 5);
}

TEST(AdamW, MissingGradientIsContractError) {
  auto a = Tensor<double>::scalar(1.0, true);
  auto b = Tensor<double>::scalar(2.0, true);
  AdamW<double> opt({{"a", a}, {"b", b}}, AdamWConfig{});
  Gradients<double> g;
  g.insert(a.id(), Tensor<double>::scalar(1.0));
  EXPECT_ERRC(opt.step(g), Errc::contract);
}

TEST(AdamW, ExtraGradientIsContractError) {
  auto a = Tensor<double>::scalar(1.0, true);
  auto stray = Tensor<double>::scalar(2.0, true);
  AdamW<double> opt({{"a", a}}, AdamWConfig{});
  Gradients<double> g;
  g.insert(a.id(), Tensor<double>::scalar(1.0));
  g.insert(stray.id(), Tensor<double>::scalar(1.0));
  EXPECT_ERRC(opt.step(g), Errc::contract);
}

TEST(AdamW, RegistrationOrderDoesNotMatter) {
  auto make = [] { return std::pair{Tensor<double>({2}, {0.1, 0.2}, true), Tensor<double>({3}, {1., 2., 3.}, true)}; };
  auto [a1, b1] = make();
  auto [a2, b2] = make();
  AdamW<double> o1({{"a", a1}, {"b", b1}}, AdamWConfig{1e-3});
  AdamW<double> o2({{"b", b2}, {"a", a2}}, AdamWConfig{1e-3});
  for (int s = 0; s < 3; ++s) {
    Gradients<double> g1, g2;
    g1.insert(a1.id(), Tensor<double>({2}, {0.5, -s * 1.0}));
    g1.insert(b1.id(), Tensor<double>({3}, {1.0, s * 0.1, -2.0}));
    g2.insert(a2.id(), Tensor<double>({2}, {0.5, -s * 1.0}));
    g2.insert(b2.id(), Tensor<double>({3}, {1.0, s * 0.1, -2.0}));
    o1.step(g1);
    o2.step(g2);
  }
  for (int i = 0; i < 2; ++i) EXPECT_EQ(a1[i], a2[i]);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(b1[i], b2[i]);
}

TEST(AdamW, TrainsLinearRegression) {
  Linear<double> l(3, 1, true, Rng(1));
  ParameterList<double> ps;
  l.collect("l", ps);
  AdamW<double> opt(ps, AdamWConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
  auto x = randn<double>({64, 3}, 2);
  std::vector<double> yv(64);
  for (int i = 0; i < 64; ++i) yv[static_cast<std::size_t>(i)] = 2 * x[i * 3] - x[i * 3 + 1] + 0.5;
  Tensor<double> y({64, 1}, yv);
  double first = 0, last = 0;
  for (int s = 0; s < 400; ++s) {
    Tape<double> tape;
    Gradients<double> g;
    double lv;
    {
      auto on = tape.activate();
      auto loss = mse(l.forward(x), y);
      lv = loss.item();
      g = tape.backward(loss);
    }
    if (s == 0) first = lv;
    last = lv;
    opt.step(g);
  }
  EXPECT_LT(last, 1e-3 * first);
}

TEST(Schedule, WarmupThenCosineToTenthOfBase) {
  auto s = LrSchedule::standard(1e-5, 1000);
  EXPECT_EQ(s.warmup_steps, 50);
  EXPECT_EQ(lr_at_step(s, 0), 0.0);
  EXPECT_NEAR(lr_at_step(s, 25), 0.5e-5, 1e-18);
  EXPECT_NEAR(lr_at_step(s, 50), 1e-5, 1e-18);
  EXPECT_NEAR(lr_at_step(s, 1000), 1e-6, 1e-18);
  EXPECT_NEAR(lr_at_step(s, 525), 0.55e-5, 1e-17);
  double prev = lr_at_step(s, 50);
  for (int k = 51; k <= 1000; ++k) {
    const double lr = lr_at_step(s, k);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  for (int k = 1; k <= 1000; ++k) EXPECT_GT(lr_at_step(s, k), 0.0);
}

TEST(Schedule, ConstantKind) {
  LrSchedule s{3e-4, 0, 10, ScheduleKind::constant};
  EXPECT_EQ(lr_at_step(s, 0), 3e-4);
  EXPECT_EQ(lr_at_step(s, 7), 3e-4);
}

TEST(Params, HashDetectsChange) {
  Linear<float> l(4, 4, true, Rng(1));
  ParameterList<float> ps;
  l.collect("l", ps);
  const auto h0 = parameter_hash(ps);
  EXPECT_EQ(h0, parameter_hash(ps));
  l.weight.mutable_data()[3] += 1e-3f;
  EXPECT_NE(h0, parameter_hash(ps));
}

}  // namespace
}  // namespace geneses::nn
