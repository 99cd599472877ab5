// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "geneses/tensor.hpp"

// Differentiable primitives. Every op records itself on the active tape when
// any input requires gradients. Binary elementwise ops broadcast only when one
// operand's shape is a suffix of the other's (leading-axis expansion).

namespace geneses {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);

/// [..., m, k] x [k, n] (b shared across leading axes) or batched
/// [..., m, k] x [..., k, n] with identical leading extents.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x [..., in] * w[out, in]^T + bias[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T> Tensor<T> transpose_last_two(const Tensor<T>& x);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::int64_t>& perm);
/// One extent may be -1 and is inferred.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::int64_t axis);
template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x, std::int64_t axis, const std::vector<std::int64_t>& sizes);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::int64_t axis, std::int64_t start, std::int64_t length);
/// Repeats size-1 axes of `x` up to `shape` (same rank).
template <typename T> Tensor<T> expand(const Tensor<T>& x, const Shape& shape);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::int64_t axis);
/// x / sqrt(mean(x^2) + eps) over the last axis.
template <typename T> Tensor<T> rms_normalize(const Tensor<T>& x, T eps);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> reduce_sum(const Tensor<T>& x, std::int64_t axis, bool keepdim = false);
template <typename T> Tensor<T> reduce_mean(const Tensor<T>& x, std::int64_t axis, bool keepdim = false);
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// x [B, Cin, L], w [Cout, Cin, K], bias [Cout] or undefined.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t padding);
/// x [B, Cin, L], w [Cin, Cout, K] -> [B, Cout, (L-1)*stride + K] (uncropped).
template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::int64_t stride);

}  // namespace geneses
