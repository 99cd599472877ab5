// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace geneses {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

using Index = std::int64_t;

Index norm_axis(Index axis, Index rank, const char* op) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    fail(Errc::invalid_shape, std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                                  std::to_string(rank));
  }
  return a;
}

Index prod(const Shape& s, std::size_t from, std::size_t to) {
  Index n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

template <typename T>
void check_finite(const Tensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) fail(Errc::numeric_domain, std::string(op) + ": non-finite input");
  }
}

std::string two_shapes(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

struct Broadcast {
  Shape out;
  Index n = 0;
  Index na = 0;
  Index nb = 0;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {a, shape_numel(a), shape_numel(a), shape_numel(a)};
  if (is_suffix(b, a)) return {a, shape_numel(a), shape_numel(a), shape_numel(b)};
  if (is_suffix(a, b)) return {b, shape_numel(b), shape_numel(a), shape_numel(b)};
  fail(Errc::invalid_shape, two_shapes(op, a, b));
}

// Visits (i, ia, ib) for every output element under suffix broadcasting.
template <typename F>
void for_each_pair(const Broadcast& bc, F&& f) {
  const Index period = std::min(bc.na, bc.nb);
  if (period == 0) return;
  const bool a_full = bc.na == bc.n;
  const bool b_full = bc.nb == bc.n;
  for (Index o = 0; o < bc.n; o += period) {
    for (Index j = 0; j < period; ++j) {
      const Index i = o + j;
      f(i, a_full ? i : j, b_full ? i : j);
    }
  }
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F&& f, D&& deriv) {
  const auto src = x.data();
  Buffer<T> y(src.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(src[i]);
  Tensor<T> out(x.shape(), std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [x, out, deriv](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      const auto xs = x.data();
      const auto ys = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xs[i], ys[i]);
    });
  }
  return out;
}

// Copies src (shape `s`) permuted by `perm` into dst; with `reverse`, scatters
// a permuted-shape buffer back into src layout, accumulating.
template <typename T>
void permute_walk(const Shape& s, const std::vector<Index>& perm, const T* in, T* out, bool reverse) {
  const auto r = s.size();
  if (r == 0) {
    if (reverse) out[0] += in[0]; else out[0] = in[0];
    return;
  }
  std::vector<Index> stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) stride[i] = stride[i + 1] * s[i + 1];
  Shape d(r);
  std::vector<Index> dstride(r);
  for (std::size_t i = 0; i < r; ++i) {
    d[i] = s[static_cast<std::size_t>(perm[i])];
    dstride[i] = stride[static_cast<std::size_t>(perm[i])];
  }
  const Index total = shape_numel(s);
  if (total == 0) return;
  std::vector<Index> idx(r, 0);
  const Index inner = d[r - 1];
  const Index inner_stride = dstride[r - 1];
  Index lin = 0;
  Index off = 0;
  while (lin < total) {
    if (reverse) {
      for (Index j = 0; j < inner; ++j) out[off + j * inner_stride] += in[lin + j];
    } else {
      for (Index j = 0; j < inner; ++j) out[lin + j] = in[off + j * inner_stride];
    }
    lin += inner;
    // advance the outer multi-index
    for (std::size_t k = r - 1; k-- > 0;) {
      ++idx[k];
      off += dstride[k];
      if (idx[k] < d[k]) break;
      off -= dstride[k] * d[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

// ---- elementwise binary ---------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto bc = broadcast("add", a.shape(), b.shape());
  Buffer<T> y(static_cast<std::size_t>(bc.n));
  const auto pa = a.data();
  const auto pb = b.data();
  for_each_pair(bc, [&](Index i, Index ia, Index ib) { y[i] = pa[ia] + pb[ib]; });
  Tensor<T> out(bc.out, std::move(y));
  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(out, {a, b}, [bc](std::span<const T> g, GradSink<T>& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      for_each_pair(bc, [&](Index i, Index ia, Index ib) {
        if (!ga.empty()) ga[ia] += g[i];
        if (!gb.empty()) gb[ib] += g[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const auto bc = broadcast("sub", a.shape(), b.shape());
  Buffer<T> y(static_cast<std::size_t>(bc.n));
  const auto pa = a.data();
  const auto pb = b.data();
  for_each_pair(bc, [&](Index i, Index ia, Index ib) { y[i] = pa[ia] - pb[ib]; });
  Tensor<T> out(bc.out, std::move(y));
  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(out, {a, b}, [bc](std::span<const T> g, GradSink<T>& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      for_each_pair(bc, [&](Index i, Index ia, Index ib) {
        if (!ga.empty()) ga[ia] += g[i];
        if (!gb.empty()) gb[ib] -= g[i];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto bc = broadcast("mul", a.shape(), b.shape());
  Buffer<T> y(static_cast<std::size_t>(bc.n));
  const auto pa = a.data();
  const auto pb = b.data();
  for_each_pair(bc, [&](Index i, Index ia, Index ib) { y[i] = pa[ia] * pb[ib]; });
  Tensor<T> out(bc.out, std::move(y));
  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(out, {a, b}, [bc, a, b](std::span<const T> g, GradSink<T>& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      const auto va = a.data();
      const auto vb = b.data();
      for_each_pair(bc, [&](Index i, Index ia, Index ib) {
        if (!ga.empty()) ga[ia] += g[i] * vb[ib];
        if (!gb.empty()) gb[ib] += g[i] * va[ia];
      });
    });
  }
  return out;
}

// ---- elementwise unary ----------------------------------------------------

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v >= T(0))) fail(Errc::numeric_domain, "sqrt: negative or non-finite input");
  }
  return unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0)) || !std::isfinite(v)) fail(Errc::numeric_domain, "log: non-positive or non-finite input");
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  check_finite(x, "silu");
  return unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) fail(Errc::invalid_shape, two_shapes("matmul", a.shape(), b.shape()));
  const Index m = a.dim(-2);
  const Index k = a.dim(-1);
  if (b.dim(-2) != k) fail(Errc::invalid_shape, two_shapes("matmul", a.shape(), b.shape()));
  const Index n = b.dim(-1);
  Shape out_shape = a.shape();
  out_shape.back() = n;

  if (b.rank() == 2) {
    const Index rows = a.numel() / std::max<Index>(k, 1);
    Buffer<T> y(static_cast<std::size_t>(rows * n));
    if (k == 0) {
      std::fill(y.begin(), y.end(), T(0));
    } else {
      MMap<T>(y.data(), rows, n).noalias() = CMap<T>(a.ptr(), rows, k) * CMap<T>(b.ptr(), k, n);
    }
    Tensor<T> out(out_shape, std::move(y));
    if (auto* tape = recording_tape<T>({&a, &b})) {
      tape->record(out, {a, b}, [a, b, rows, k, n](std::span<const T> g, GradSink<T>& sink) {
        CMap<T> G(g.data(), rows, n);
        if (auto ga = sink(0); !ga.empty()) MMap<T>(ga.data(), rows, k).noalias() += G * CMap<T>(b.ptr(), k, n).transpose();
        if (auto gb = sink(1); !gb.empty()) MMap<T>(gb.data(), k, n).noalias() += CMap<T>(a.ptr(), rows, k).transpose() * G;
      });
    }
    return out;
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    fail(Errc::invalid_shape, two_shapes("matmul", a.shape(), b.shape()));
  }
  const Index batch = prod(a.shape(), 0, a.shape().size() - 2);
  Buffer<T> y(static_cast<std::size_t>(batch * m * n), T(0));
  if (k > 0) {
    for (Index i = 0; i < batch; ++i) {
      MMap<T>(y.data() + i * m * n, m, n).noalias() =
          CMap<T>(a.ptr() + i * m * k, m, k) * CMap<T>(b.ptr() + i * k * n, k, n);
    }
  }
  Tensor<T> out(out_shape, std::move(y));
  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(out, {a, b}, [a, b, batch, m, k, n](std::span<const T> g, GradSink<T>& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      for (Index i = 0; i < batch; ++i) {
        CMap<T> G(g.data() + i * m * n, m, n);
        if (!ga.empty()) {
          MMap<T>(ga.data() + i * m * k, m, k).noalias() += G * CMap<T>(b.ptr() + i * k * n, k, n).transpose();
        }
        if (!gb.empty()) {
          MMap<T>(gb.data() + i * k * n, k, n).noalias() += CMap<T>(a.ptr() + i * m * k, m, k).transpose() * G;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(1)) {
    fail(Errc::invalid_shape, two_shapes("linear", x.shape(), w.shape()));
  }
  const Index in = w.dim(1);
  const Index outf = w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    fail(Errc::invalid_shape, two_shapes("linear(bias)", w.shape(), bias.shape()));
  }
  const Index rows = in > 0 ? x.numel() / in : 0;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  Buffer<T> y(static_cast<std::size_t>(rows * outf), T(0));
  MMap<T> Y(y.data(), rows, outf);
  if (rows > 0 && in > 0) Y.noalias() = CMap<T>(x.ptr(), rows, in) * CMap<T>(w.ptr(), outf, in).transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.ptr(), outf);
    Y.rowwise() += bv;
  }
  Tensor<T> out(out_shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x, &w, &bias})) {
    std::vector<Tensor<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    tape->record(out, std::move(inputs), [x, w, rows, in, outf, has_bias](std::span<const T> g, GradSink<T>& sink) {
      CMap<T> G(g.data(), rows, outf);
      if (auto gx = sink(0); !gx.empty()) MMap<T>(gx.data(), rows, in).noalias() += G * CMap<T>(w.ptr(), outf, in);
      if (auto gw = sink(1); !gw.empty()) MMap<T>(gw.data(), outf, in).noalias() += G.transpose() * CMap<T>(x.ptr(), rows, in);
      if (has_bias) {
        if (auto gb = sink(2); !gb.empty()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), outf) += G.colwise().sum();
        }
      }
    });
  }
  return out;
}

// ---- shape manipulation ---------------------------------------------------

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<Index>& perm) {
  const auto r = static_cast<std::size_t>(x.rank());
  if (perm.size() != r) fail(Errc::invalid_shape, "permute: permutation rank mismatch for " + shape_str(x.shape()));
  std::vector<char> seen(r, 0);
  for (auto p : perm) {
    if (p < 0 || p >= static_cast<Index>(r) || seen[static_cast<std::size_t>(p)]) {
      fail(Errc::invalid_shape, "permute: invalid permutation for " + shape_str(x.shape()));
    }
    seen[static_cast<std::size_t>(p)] = 1;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[static_cast<std::size_t>(perm[i])];
  Buffer<T> y(static_cast<std::size_t>(x.numel()));
  permute_walk(x.shape(), perm, x.ptr(), y.data(), false);
  Tensor<T> out(out_shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [shape = x.shape(), perm](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      permute_walk(shape, perm, g.data(), gx.data(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last_two(const Tensor<T>& x) {
  if (x.rank() < 2) fail(Errc::invalid_shape, "transpose_last_two: rank < 2 for " + shape_str(x.shape()));
  std::vector<Index> perm(static_cast<std::size_t>(x.rank()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) fail(Errc::invalid_shape, "reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) fail(Errc::invalid_shape, two_shapes("reshape", x.shape(), shape));
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) fail(Errc::invalid_shape, two_shapes("reshape", x.shape(), shape));
  Buffer<T> y(x.data().begin(), x.data().end());
  Tensor<T> out(shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, Index axis) {
  if (parts.empty()) fail(Errc::invalid_shape, "concat: no inputs");
  const Shape& ref = parts[0].shape();
  const Index ax = norm_axis(axis, static_cast<Index>(ref.size()), "concat");
  Shape out_shape = ref;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (static_cast<Index>(i) == ax) || s[i] == ref[i];
    if (!ok) fail(Errc::invalid_shape, two_shapes("concat", ref, s));
    out_shape[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  const Index outer = prod(ref, 0, static_cast<std::size_t>(ax));
  const Index inner = prod(ref, static_cast<std::size_t>(ax) + 1, ref.size());
  const Index out_block = out_shape[static_cast<std::size_t>(ax)] * inner;
  Buffer<T> y(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    const Index block = p.dim(ax) * inner;
    offsets.push_back(off);
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(p.ptr() + o * block, block, y.data() + o * out_block + off);
    }
    off += block;
  }
  Tensor<T> out(out_shape, std::move(y));
  Tape<T>* tape = Tape<T>::active();
  bool any = false;
  for (const auto& p : parts) any |= p.requires_grad();
  if (tape != nullptr && any) {
    std::vector<Index> blocks;
    for (const auto& p : parts) blocks.push_back(p.dim(ax) * inner);
    tape->record(out, parts, [outer, out_block, offsets, blocks](std::span<const T> g, GradSink<T>& sink) {
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto gp = sink(i);
        if (gp.empty()) continue;
        for (Index o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_block + offsets[i];
          T* dst = gp.data() + o * blocks[i];
          for (Index j = 0; j < blocks[i]; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, Index axis, Index start, Index length) {
  const Index ax = norm_axis(axis, x.rank(), "slice");
  const Index extent = x.dim(ax);
  if (start < 0 || length < 0 || start + length > extent) {
    fail(Errc::invalid_shape, "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                  ") outside axis of " + shape_str(x.shape()));
  }
  const Index outer = prod(x.shape(), 0, static_cast<std::size_t>(ax));
  const Index inner = prod(x.shape(), static_cast<std::size_t>(ax) + 1, x.shape().size());
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  Buffer<T> y(static_cast<std::size_t>(outer * length * inner));
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(x.ptr() + (o * extent + start) * inner, length * inner, y.data() + o * length * inner);
  }
  Tensor<T> out(out_shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [outer, extent, start, length, inner](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      for (Index o = 0; o < outer; ++o) {
        const T* src = g.data() + o * length * inner;
        T* dst = gx.data() + (o * extent + start) * inner;
        for (Index j = 0; j < length * inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, Index axis, const std::vector<Index>& sizes) {
  const Index ax = norm_axis(axis, x.rank(), "split");
  Index total = 0;
  for (auto s : sizes) {
    if (s < 0) fail(Errc::invalid_shape, "split: negative size");
    total += s;
  }
  if (total != x.dim(ax)) {
    fail(Errc::invalid_shape, "split: sizes sum to " + std::to_string(total) + " but axis has " +
                                  std::to_string(x.dim(ax)) + " in " + shape_str(x.shape()));
  }
  std::vector<Tensor<T>> parts;
  Index start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, ax, start, s));
    start += s;
  }
  return parts;
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& shape) {
  const auto r = shape.size();
  if (static_cast<std::size_t>(x.rank()) != r) fail(Errc::invalid_shape, two_shapes("expand", x.shape(), shape));
  std::vector<Index> src_stride(r, 0);
  Index st = 1;
  for (std::size_t i = r; i-- > 0;) {
    const Index e = x.shape()[i];
    if (e != shape[i] && e != 1) fail(Errc::invalid_shape, two_shapes("expand", x.shape(), shape));
    src_stride[i] = (e == 1 && shape[i] != 1) ? 0 : st;
    st *= e;
  }
  const Index total = shape_numel(shape);
  // map from output linear index to source offset
  std::vector<Index> src_index(static_cast<std::size_t>(total));
  {
    std::vector<Index> idx(r, 0);
    Index off = 0;
    for (Index lin = 0; lin < total; ++lin) {
      src_index[static_cast<std::size_t>(lin)] = off;
      for (std::size_t k = r; k-- > 0;) {
        ++idx[k];
        off += src_stride[k];
        if (idx[k] < shape[k]) break;
        off -= src_stride[k] * shape[k];
        idx[k] = 0;
      }
    }
  }
  Buffer<T> y(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) y[static_cast<std::size_t>(i)] = x[src_index[static_cast<std::size_t>(i)]];
  Tensor<T> out(shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [src_index = std::move(src_index)](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      for (std::size_t i = 0; i < src_index.size(); ++i) gx[static_cast<std::size_t>(src_index[i])] += g[i];
    });
  }
  return out;
}

// ---- normalisation --------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Index axis) {
  check_finite(x, "softmax");
  const Index ax = norm_axis(axis, x.rank(), "softmax");
  const Index n = x.dim(ax);
  const Index outer = prod(x.shape(), 0, static_cast<std::size_t>(ax));
  const Index inner = prod(x.shape(), static_cast<std::size_t>(ax) + 1, x.shape().size());
  Buffer<T> y(static_cast<std::size_t>(x.numel()));
  const T* px = x.ptr();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index j = 0; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      T s = 0;
      for (Index j = 0; j < n; ++j) {
        const T e = std::exp(px[base + j * inner] - mx);
        y[static_cast<std::size_t>(base + j * inner)] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (Index j = 0; j < n; ++j) y[static_cast<std::size_t>(base + j * inner)] *= inv;
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [out, outer, n, inner](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      const T* py = out.ptr();
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const Index base = o * n * inner + i;
          T dot = 0;
          for (Index j = 0; j < n; ++j) dot += g[base + j * inner] * py[base + j * inner];
          for (Index j = 0; j < n; ++j) {
            const Index k = base + j * inner;
            gx[k] += py[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> rms_normalize(const Tensor<T>& x, T eps) {
  if (x.rank() < 1) fail(Errc::invalid_shape, "rms_normalize: scalar input");
  const Index d = x.dim(-1);
  const Index rows = d > 0 ? x.numel() / d : 0;
  Buffer<T> y(static_cast<std::size_t>(x.numel()));
  Buffer<T> inv_rms(static_cast<std::size_t>(rows));
  const T* px = x.ptr();
  for (Index r = 0; r < rows; ++r) {
    T ms = 0;
    for (Index j = 0; j < d; ++j) ms += px[r * d + j] * px[r * d + j];
    const T inv = T(1) / std::sqrt(ms / static_cast<T>(d) + eps);
    inv_rms[static_cast<std::size_t>(r)] = inv;
    for (Index j = 0; j < d; ++j) y[static_cast<std::size_t>(r * d + j)] = px[r * d + j] * inv;
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [out, inv_rms = std::move(inv_rms), rows, d](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      const T* py = out.ptr();
      for (Index r = 0; r < rows; ++r) {
        T dot = 0;
        for (Index j = 0; j < d; ++j) dot += g[r * d + j] * py[r * d + j];
        dot /= static_cast<T>(d);
        const T inv = inv_rms[static_cast<std::size_t>(r)];
        for (Index j = 0; j < d; ++j) gx[r * d + j] += (g[r * d + j] - py[r * d + j] * dot) * inv;
      }
    });
  }
  return out;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, Errc::invalid_shape, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, Index axis, bool keepdim) {
  const Index ax = norm_axis(axis, x.rank(), "reduce_sum");
  const Index n = x.dim(ax);
  const Index outer = prod(x.shape(), 0, static_cast<std::size_t>(ax));
  const Index inner = prod(x.shape(), static_cast<std::size_t>(ax) + 1, x.shape().size());
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(ax)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  Buffer<T> y(static_cast<std::size_t>(outer * inner), T(0));
  const T* px = x.ptr();
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < n; ++j) {
      const T* row = px + (o * n + j) * inner;
      T* dst = y.data() + o * inner;
      for (Index i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  Tensor<T> out(out_shape, std::move(y));
  if (auto* tape = recording_tape<T>({&x})) {
    tape->record(out, {x}, [outer, n, inner](std::span<const T> g, GradSink<T>& sink) {
      auto gx = sink(0);
      for (Index o = 0; o < outer; ++o) {
        for (Index j = 0; j < n; ++j) {
          T* row = gx.data() + (o * n + j) * inner;
          const T* src = g.data() + o * inner;
          for (Index i = 0; i < inner; ++i) row[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, Index axis, bool keepdim) {
  const Index n = x.dim(axis);
  require(n > 0, Errc::invalid_shape, "reduce_mean: empty axis in " + shape_str(x.shape()));
  return scale(reduce_sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) fail(Errc::invalid_shape, two_shapes("mse", a.shape(), b.shape()));
  require(a.numel() > 0, Errc::invalid_shape, "mse: empty tensors");
  check_finite(a, "mse");
  check_finite(b, "mse");
  const auto n = static_cast<std::size_t>(a.numel());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pa[i] - pb[i];
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
  if (auto* tape = recording_tape<T>({&a, &b})) {
    tape->record(out, {a, b}, [a, b, n](std::span<const T> g, GradSink<T>& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      const T c = T(2) * g[0] / static_cast<T>(n);
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      for (std::size_t i = 0; i < n; ++i) {
        const T d = c * (pa[i] - pb[i]);
        if (!ga.empty()) ga[i] += d;
        if (!gb.empty()) gb[i] -= d;
      }
    });
  }
  return out;
}

// ---- convolution ----------------------------------------------------------

namespace {

// col[(c*K + k) * Lout + l] = x[c, l*stride + k - pad] (zero outside).
template <typename T>
void im2col(const T* x, Index cin, Index len, Index k_size, Index stride, Index pad, Index lout, T* col) {
  for (Index c = 0; c < cin; ++c) {
    for (Index k = 0; k < k_size; ++k) {
      T* row = col + (c * k_size + k) * lout;
      const T* xc = x + c * len;
      for (Index l = 0; l < lout; ++l) {
        const Index p = l * stride + k - pad;
        row[l] = (p >= 0 && p < len) ? xc[p] : T(0);
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, Index cin, Index len, Index k_size, Index stride, Index pad, Index lout, T* x) {
  for (Index c = 0; c < cin; ++c) {
    for (Index k = 0; k < k_size; ++k) {
      const T* row = col + (c * k_size + k) * lout;
      T* xc = x + c * len;
      for (Index l = 0; l < lout; ++l) {
        const Index p = l * stride + k - pad;
        if (p >= 0 && p < len) xc[p] += row[l];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Index stride, Index padding) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1)) fail(Errc::invalid_shape, two_shapes("conv1d", x.shape(), w.shape()));
  require(stride >= 1 && padding >= 0, Errc::config, "conv1d: stride must be >= 1 and padding >= 0");
  const Index batch = x.dim(0);
  const Index cin = x.dim(1);
  const Index len = x.dim(2);
  const Index cout = w.dim(0);
  const Index ks = w.dim(2);
  if (len + 2 * padding < ks) fail(Errc::invalid_shape, two_shapes("conv1d", x.shape(), w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) fail(Errc::invalid_shape, two_shapes("conv1d(bias)", w.shape(), bias.shape()));
  const Index lout = (len + 2 * padding - ks) / stride + 1;
  const Index ck = cin * ks;
  Buffer<T> y(static_cast<std::size_t>(batch * cout * lout));
  Buffer<T> col(static_cast<std::size_t>(ck * lout));
  CMap<T> W(w.ptr(), cout, ck);
  for (Index b = 0; b < batch; ++b) {
    im2col(x.ptr() + b * cin * len, cin, len, ks, stride, padding, lout, col.data());
    MMap<T> Y(y.data() + b * cout * lout, cout, lout);
    Y.noalias() = W * CMap<T>(col.data(), ck, lout);
    if (bias.defined()) {
      Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.ptr(), cout);
    }
  }
  Tensor<T> out(Shape{batch, cout, lout}, std::move(y));
  if (auto* tape = recording_tape<T>({&x, &w, &bias})) {
    std::vector<Tensor<T>> inputs{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) inputs.push_back(bias);
    tape->record(out, std::move(inputs),
                 [x, w, batch, cin, len, cout, ks, stride, padding, lout, ck, has_bias](std::span<const T> g, GradSink<T>& sink) {
                   auto gx = sink(0);
                   auto gw = sink(1);
                   std::span<T> gb;
                   if (has_bias) gb = sink(2);
                   Buffer<T> col(static_cast<std::size_t>(ck * lout));
                   CMap<T> W(w.ptr(), cout, ck);
                   for (Index b = 0; b < batch; ++b) {
                     CMap<T> G(g.data() + b * cout * lout, cout, lout);
                     if (!gw.empty()) {
                       im2col(x.ptr() + b * cin * len, cin, len, ks, stride, padding, lout, col.data());
                       MMap<T>(gw.data(), cout, ck).noalias() += G * CMap<T>(col.data(), ck, lout).transpose();
                     }
                     if (!gx.empty()) {
                       MMap<T>(col.data(), ck, lout).noalias() = W.transpose() * G;
                       col2im_add(col.data(), cin, len, ks, stride, padding, lout, gx.data() + b * cin * len);
                     }
                     if (!gb.empty()) {
                       Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb.data(), cout) += G.rowwise().sum();
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Index stride) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(0)) {
    fail(Errc::invalid_shape, two_shapes("conv_transpose1d", x.shape(), w.shape()));
  }
  require(stride >= 1, Errc::config, "conv_transpose1d: stride must be >= 1");
  const Index batch = x.dim(0);
  const Index cin = x.dim(1);
  const Index len = x.dim(2);
  const Index cout = w.dim(1);
  const Index ks = w.dim(2);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    fail(Errc::invalid_shape, two_shapes("conv_transpose1d(bias)", w.shape(), bias.shape()));
  }
  const Index lout = (len - 1) * stride + ks;
  const Index ck = cout * ks;
  Buffer<T> y(static_cast<std::size_t>(batch * cout * lout), T(0));
  Buffer<T> col(static_cast<std::size_t>(ck * len));
  CMap<T> W(w.ptr(), cin, ck);
  for (Index b = 0; b < batch; ++b) {
    MMap<T>(col.data(), ck, len).noalias() = W.transpose() * CMap<T>(x.ptr() + b * cin * len, cin, len);
    // scatter: the transpose of im2col with zero padding
    col2im_add(col.data(), cout, lout, ks, stride, Index{0}, len, y.data() + b * cout * lout);
    if (bias.defined()) {
      MMap<T>(y.data() + b * cout * lout, cout, lout).colwise() +=
          Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.ptr(), cout);
    }
  }
  Tensor<T> out(Shape{batch, cout, lout}, std::move(y));
  if (auto* tape = recording_tape<T>({&x, &w, &bias})) {
    std::vector<Tensor<T>> inputs{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) inputs.push_back(bias);
    tape->record(out, std::move(inputs),
                 [x, w, batch, cin, len, cout, ks, stride, lout, ck, has_bias](std::span<const T> g, GradSink<T>& sink) {
                   auto gx = sink(0);
                   auto gw = sink(1);
                   std::span<T> gb;
                   if (has_bias) gb = sink(2);
                   Buffer<T> col(static_cast<std::size_t>(ck * len));
                   CMap<T> W(w.ptr(), cin, ck);
                   for (Index b = 0; b < batch; ++b) {
                     const T* gy = g.data() + b * cout * lout;
                     im2col(gy, cout, lout, ks, stride, Index{0}, len, col.data());
                     CMap<T> C(col.data(), ck, len);
                     if (!gx.empty()) MMap<T>(gx.data() + b * cin * len, cin, len).noalias() += W * C;
                     if (!gw.empty()) {
                       MMap<T>(gw.data(), cin, ck).noalias() += CMap<T>(x.ptr() + b * cin * len, cin, len) * C.transpose();
                     }
                     if (!gb.empty()) {
                       Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb.data(), cout) += CMap<T>(gy, cout, lout).rowwise().sum();
                     }
                   }
                 });
  }
  return out;
}

#define GENESES_OPS(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> neg(const Tensor<T>&);                                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                               \
  template Tensor<T> square(const Tensor<T>&);                                                      \
  template Tensor<T> sqrt(const Tensor<T>&);                                                        \
  template Tensor<T> exp(const Tensor<T>&);                                                         \
  template Tensor<T> log(const Tensor<T>&);                                                         \
  template Tensor<T> abs(const Tensor<T>&);                                                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                     \
  template Tensor<T> tanh(const Tensor<T>&);                                                        \
  template Tensor<T> silu(const Tensor<T>&);                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> transpose_last_two(const Tensor<T>&);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<Index>&);                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, Index);                                  \
  template std::vector<Tensor<T>> split(const Tensor<T>&, Index, const std::vector<Index>&);        \
  template Tensor<T> slice(const Tensor<T>&, Index, Index, Index);                                  \
  template Tensor<T> expand(const Tensor<T>&, const Shape&);                                        \
  template Tensor<T> softmax(const Tensor<T>&, Index);                                              \
  template Tensor<T> rms_normalize(const Tensor<T>&, T);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> reduce_sum(const Tensor<T>&, Index, bool);                                     \
  template Tensor<T> reduce_mean(const Tensor<T>&, Index, bool);                                    \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index, Index);    \
  template Tensor<T> conv_transpose1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index);

GENESES_OPS(float)
GENESES_OPS(double)

}  // namespace geneses
