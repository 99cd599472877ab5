// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

// Shared gradient-check cases: one per primitive op plus seeded random
// composite graphs. Used by the unit tests and the acceptance binary.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geneses/ops.hpp"
#include "geneses/rng.hpp"
#include "geneses/tensor.hpp"
#include "support/gradcheck.hpp"

namespace geneses::testing {

using T64 = Tensor<double>;

inline T64 param(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  auto r = randn<double>(shape, seed);
  std::vector<double> v(r.data().begin(), r.data().end());
  for (auto& x : v) x *= scale;
  return T64(shape, std::move(v), true);
}

struct PrimitiveCase {
  std::string name;
  std::function<double()> run;  // returns max relative error
};

inline std::vector<PrimitiveCase> primitive_cases() {
  auto a = param({3, 4}, 11);
  auto b = param({3, 4}, 12);
  auto v = param({4}, 13);
  auto m = param({4, 5}, 14);
  auto pos = param({3, 4}, 15);
  {
    auto vals = pos.mutable_data();
    for (auto& x : vals) x = std::abs(x) + 0.5;
  }
  auto batch_a = param({2, 3, 4}, 16);
  auto batch_b = param({2, 4, 2}, 17);
  auto w = param({5, 4}, 18);
  auto bias = param({5}, 19);
  auto cx = param({2, 3, 9}, 20);
  auto cw = param({4, 3, 3}, 21);
  auto cb = param({4}, 22);
  auto tw = param({3, 2, 4}, 23);
  auto tb = param({2}, 24);
  auto col = param({3, 1}, 25);
  auto weights = randn<double>({3, 4}, 99);  // makes each loss sensitive to every entry
  auto wsum = [=](const T64& y) {
    if (y.shape() == weights.shape()) return sum(mul(y, weights));
    return sum(mul(y, randn<double>(y.shape(), 98)));
  };

  std::vector<PrimitiveCase> cases = {
      {"add", [=] { return grad_check([=] { return wsum(add(a, b)); }, {a, b}).max_rel_error; }},
      {"add_broadcast", [=] { return grad_check([=] { return wsum(add(a, v)); }, {a, v}).max_rel_error; }},
      {"sub", [=] { return grad_check([=] { return wsum(sub(a, v)); }, {a, v}).max_rel_error; }},
      {"mul", [=] { return grad_check([=] { return wsum(mul(a, b)); }, {a, b}).max_rel_error; }},
      {"neg", [=] { return grad_check([=] { return wsum(neg(a)); }, {a}).max_rel_error; }},
      {"scale", [=] { return grad_check([=] { return wsum(scale(a, 1.7)); }, {a}).max_rel_error; }},
      {"add_scalar", [=] { return grad_check([=] { return wsum(add_scalar(a, 0.3)); }, {a}).max_rel_error; }},
      {"square", [=] { return grad_check([=] { return wsum(square(a)); }, {a}).max_rel_error; }},
      {"sqrt", [=] { return grad_check([=] { return wsum(geneses::sqrt(pos)); }, {pos}).max_rel_error; }},
      {"exp", [=] { return grad_check([=] { return wsum(geneses::exp(a)); }, {a}).max_rel_error; }},
      {"log", [=] { return grad_check([=] { return wsum(geneses::log(pos)); }, {pos}).max_rel_error; }},
      {"abs", [=] { return grad_check([=] { return wsum(geneses::abs(a)); }, {a}).max_rel_error; }},
      {"sigmoid", [=] { return grad_check([=] { return wsum(sigmoid(a)); }, {a}).max_rel_error; }},
      {"tanh", [=] { return grad_check([=] { return wsum(geneses::tanh(a)); }, {a}).max_rel_error; }},
      {"silu", [=] { return grad_check([=] { return wsum(silu(a)); }, {a}).max_rel_error; }},
      {"matmul", [=] { return grad_check([=] { return wsum(matmul(a, m)); }, {a, m}).max_rel_error; }},
      {"matmul_batched",
       [=] { return grad_check([=] { return wsum(matmul(batch_a, batch_b)); }, {batch_a, batch_b}).max_rel_error; }},
      {"linear", [=] { return grad_check([=] { return wsum(linear(a, w, bias)); }, {a, w, bias}).max_rel_error; }},
      {"transpose_last_two", [=] { return grad_check([=] { return wsum(transpose_last_two(a)); }, {a}).max_rel_error; }},
      {"permute", [=] { return grad_check([=] { return wsum(permute(batch_a, {2, 0, 1})); }, {batch_a}).max_rel_error; }},
      {"reshape", [=] { return grad_check([=] { return wsum(reshape(a, {2, 6})); }, {a}).max_rel_error; }},
      {"concat", [=] { return grad_check([=] { return wsum(concat<double>({a, b}, 1)); }, {a, b}).max_rel_error; }},
      {"split",
       [=] {
         return grad_check([=] { auto p = split(a, 1, {1, 3}); return add(wsum(p[0]), wsum(square(p[1]))); }, {a})
             .max_rel_error;
       }},
      {"slice", [=] { return grad_check([=] { return wsum(slice(batch_a, 1, 1, 2)); }, {batch_a}).max_rel_error; }},
      {"expand", [=] { return grad_check([=] { return wsum(expand(col, {3, 4})); }, {col}).max_rel_error; }},
      {"softmax_last", [=] { return grad_check([=] { return wsum(softmax(a, -1)); }, {a}).max_rel_error; }},
      {"softmax_first", [=] { return grad_check([=] { return wsum(softmax(a, 0)); }, {a}).max_rel_error; }},
      {"rms_normalize", [=] { return grad_check([=] { return wsum(rms_normalize(a, 1e-6)); }, {a}).max_rel_error; }},
      {"sum", [=] { return grad_check([=] { return sum(mul(a, a)); }, {a}).max_rel_error; }},
      {"mean", [=] { return grad_check([=] { return mean(mul(a, b)); }, {a, b}).max_rel_error; }},
      {"reduce_sum", [=] { return grad_check([=] { return wsum(reduce_sum(batch_a, 1)); }, {batch_a}).max_rel_error; }},
      {"reduce_mean",
       [=] { return grad_check([=] { return wsum(reduce_mean(batch_a, -1, true)); }, {batch_a}).max_rel_error; }},
      {"mse", [=] { return grad_check([=] { return mse(a, b); }, {a, b}).max_rel_error; }},
      {"conv1d", [=] { return grad_check([=] { return wsum(conv1d(cx, cw, cb, 2, 1)); }, {cx, cw, cb}).max_rel_error; }},
      {"conv_transpose1d",
       [=] { return grad_check([=] { return wsum(conv_transpose1d(cx, tw, tb, 3)); }, {cx, tw, tb}).max_rel_error; }},
  };
  return cases;
}

// Random composite graphs over the primitive set, shapes up to [4, 8].
inline T64 composite(std::uint64_t seed, const std::vector<T64>& params) {
  Rng rng(seed);
  T64 h = linear(params[0], params[1], params[2]);  // [r, c]
  const int steps = 4 + static_cast<int>(rng.below(3));
  for (int s = 0; s < steps; ++s) {
    switch (rng.below(9)) {
      case 0: h = silu(h); break;
      case 1: h = geneses::tanh(h); break;
      case 2: h = softmax(h, -1); break;
      case 3: h = rms_normalize(h, 1e-6); break;
      case 4: h = mul(h, params[3]); break;
      case 5: h = add(h, square(h)); break;
      case 6: h = transpose_last_two(matmul(transpose_last_two(h), softmax(h, 0))); break;
      case 7: h = concat<double>({slice(h, 0, 0, 1), sigmoid(slice(h, 0, 1, h.dim(0) - 1))}, 0); break;
      default: h = sub(h, expand(reduce_mean(h, 1, true), h.shape())); break;
    }
  }
  return mean(mul(h, h));
}

/// Max relative error of the composite graph for `seed`.
inline GradCheckResult check_composite(std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t rows = 2 + static_cast<std::int64_t>(rng.below(3));  // <= 4
  const std::int64_t in = 2 + static_cast<std::int64_t>(rng.below(7));    // <= 8
  const std::int64_t out = 2 + static_cast<std::int64_t>(rng.below(7));   // <= 8
  std::vector<T64> params = {param({rows, in}, seed + 1), param({out, in}, seed + 2, 0.5), param({out}, seed + 3),
                             param({out}, seed + 4)};
  return grad_check([=] { return composite(seed, params); }, params);
}

}  // namespace geneses::testing
