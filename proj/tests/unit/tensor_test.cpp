// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "geneses/ops.hpp"
#include "geneses/rng.hpp"
#include "geneses/tensor.hpp"
#include "support/gradcases.hpp"

namespace geneses {
namespace {

using testing::grad_check;
using T64 = Tensor<double>;

using testing::composite;
using testing::param;

TEST(Factories, ZerosHasShapeAndValues) {
  auto z = zeros<float>({2, 3});
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  ASSERT_EQ(z.numel(), 6);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Factories, ZeroExtentRejected) {
  try {
    zeros<float>({2, 0});
    FAIL() << "expected invalid-shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_shape);
  }
  EXPECT_THROW(randn<float>({0}, 1), Error);
}

TEST(Factories, RandnMomentsMatchStandardNormal) {
  auto x = randn<double>({100000}, 7);
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= static_cast<double>(x.numel());
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.numel() - 1);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Factories, RandnIsDeterministic) {
  auto a = randn<float>({64, 3}, 7);
  auto b = randn<float>({64, 3}, 7);
  auto c = randn<float>({64, 3}, 8);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Algebra, IdentityMatmul) {
  T64 eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto a = randn<double>({3, 3}, 3);
  auto y = matmul(eye, a);
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], a[i]);
}

TEST(Algebra, AdditiveIdentity) {
  auto x = randn<double>({4, 5}, 3);
  auto y = add(x, zeros_like(x));
  for (int i = 0; i < 20; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Algebra, ShapeMismatchNamesBothShapes) {
  auto a = zeros<float>({2, 3});
  auto b = zeros<float>({4, 5});
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_shape);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
  EXPECT_THROW(add(zeros<float>({2, 3}), zeros<float>({2})), Error);
}

TEST(Algebra, SuffixBroadcastOnly) {
  T64 x({2, 3}, {1, 2, 3, 4, 5, 6});
  T64 b({3}, {10, 20, 30});
  auto y = add(x, b);
  EXPECT_EQ(y[3], 14.0);
  EXPECT_EQ(y[5], 36.0);
  auto z = mul(b, x);
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  EXPECT_EQ(z[4], 100.0);
}

TEST(Algebra, SoftmaxOfEqualEntriesIsUniform) {
  auto x = T64::filled({2, 5}, 3.5);
  auto y = softmax(x, -1);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.2);
  auto yc = softmax(x, 0);
  for (double v : yc.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Algebra, MseOfIdenticalIsZero) {
  auto a = randn<double>({3, 4}, 1);
  EXPECT_EQ(mse(a, a).item(), 0.0);
}

TEST(Algebra, NonFiniteInputsRejected) {
  T64 x({2}, {1.0, std::nan("")});
  try {
    softmax(x, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::numeric_domain);
  }
  EXPECT_THROW(silu(x), Error);
  EXPECT_THROW(mse(x, x), Error);
}

TEST(Algebra, SiluAtZero) {
  EXPECT_EQ(silu(T64::scalar(0.0)).item(), 0.0);
  // finite-difference oracle for the slope
  const double h = 1e-5;
  const double fd = (silu(T64::scalar(h)).item() - silu(T64::scalar(-h)).item()) / (2 * h);
  EXPECT_NEAR(fd, 0.5, 1e-9);
  auto x = T64::scalar(0.0, true);
  Tape<double> tape;
  auto active = tape.activate();
  auto g = tape.backward(silu(x));
  EXPECT_NEAR(g[x].item(), fd, 1e-9);
}

TEST(ShapeAlgebra, ReshapeRoundTrip) {
  auto x = randn<double>({2, 3, 4}, 9);
  auto y = reshape(reshape(x, {6, -1}), {2, 3, 4});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(ShapeAlgebra, SplitConcatIdentity) {
  for (std::int64_t axis = 0; axis < 3; ++axis) {
    auto x = randn<double>({4, 6, 5}, 10 + static_cast<std::uint64_t>(axis));
    const auto n = x.dim(axis);
    auto parts = split(x, axis, {1, n - 3, 2});
    auto y = concat(parts, axis);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
}

TEST(ShapeAlgebra, PermuteInverse) {
  auto x = randn<double>({2, 3, 4, 5}, 4);
  auto y = permute(permute(x, {0, 2, 1, 3}), {0, 2, 1, 3});
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  auto t = transpose_last_two(T64({2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t[1], 4.0);
}

TEST(Backward, LinearCaseGradientIsInput) {
  auto w = param({5}, 1);
  T64 x({5}, {1, -2, 3, 0.5, 4});
  Tape<double> tape;
  auto active = tape.activate();
  auto g = tape.backward(sum(mul(w, x)));
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g[w][i], x[i]);
}

TEST(Backward, MatmulGradientIsRowSumsOfB) {
  auto a = param({3, 4}, 2);
  auto b = randn<double>({4, 5}, 3);
  Tape<double> tape;
  auto active = tape.activate();
  auto g = tape.backward(sum(matmul(a, b)));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      double rs = 0.0;
      for (int k = 0; k < 5; ++k) rs += b[j * 5 + k];
      EXPECT_NEAR(g[a][i * 4 + j], rs, 1e-12);
    }
  }
  auto res = grad_check([&] { return sum(matmul(a, b)); }, {a});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Backward, SecondBackwardOnConsumedTapeFails) {
  auto w = param({3}, 1);
  Tape<double> tape;
  auto active = tape.activate();
  auto loss = sum(square(w));
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  try {
    tape.backward(loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::contract);
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  auto w = param({3}, 1);
  Tape<double> tape;
  auto active = tape.activate();
  try {
    tape.backward(square(w));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::contract);
  }
}

TEST(Backward, DetachedLossIsEmptyGradientError) {
  auto x = randn<double>({3}, 1);  // no requires_grad
  Tape<double> tape;
  auto active = tape.activate();
  auto loss = sum(square(x));
  try {
    tape.backward(loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_gradient);
  }
  try {
    backward(loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_gradient);
  }
}

TEST(Backward, NoGradientForFrozenInputs) {
  auto w = param({3}, 1);
  auto frozen = param({3}, 2);
  frozen.set_requires_grad(false);
  Tape<double> tape;
  auto active = tape.activate();
  auto g = tape.backward(sum(mul(w, frozen)));
  EXPECT_TRUE(g.contains(w));
  EXPECT_FALSE(g.contains(frozen));
}

TEST(Backward, ParametersUntouched) {
  auto w = param({4}, 5);
  std::vector<double> before(w.data().begin(), w.data().end());
  Tape<double> tape;
  auto active = tape.activate();
  tape.backward(sum(square(w)));
  EXPECT_TRUE(std::equal(before.begin(), before.end(), w.data().begin()));
}

TEST(GradCheck, EveryPrimitive) {
  for (const auto& c : testing::primitive_cases()) EXPECT_LT(c.run(), 1e-4) << c.name;
}

TEST(GradCheck, RandomCompositeGraphs) {
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const auto res = testing::check_composite(seed);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_GT(res.entries, 0u);
  }
}

TEST(Determinism, ForwardAndGradientsBitIdentical) {
  auto run = [] {
    std::vector<T64> params = {param({3, 5}, 1), param({4, 5}, 2), param({4}, 3), param({4}, 4)};
    Tape<double> tape;
    auto active = tape.activate();
    auto loss = composite(77, params);
    auto g = tape.backward(loss);
    std::vector<double> out{loss.item()};
    for (const auto& p : params) {
      if (g.contains(p)) out.insert(out.end(), g[p].data().begin(), g[p].data().end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace geneses
