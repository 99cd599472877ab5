// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geneses/error.hpp"

namespace geneses {

using Shape = std::vector<std::int64_t>;

/// Cache-line aligned allocator. Eigen picks its vectorised summation order
/// from pointer alignment, so storage must be aligned identically on every
/// run for results to be bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{alignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  Buffer<T> data;
  bool requires_grad = false;
  std::uint64_t tape_serial = 0;  // 0: not produced by a recorded op
  std::int64_t node = -1;
  std::uint64_t id = 0;
};

std::uint64_t next_tensor_id();

}  // namespace detail

/// Dense row-major array. Values are immutable once shared; the only
/// sanctioned writers are the optimizer and checkpoint loader, which touch
/// leaf parameters between steps.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  /// Adopts aligned storage without copying.
  template <typename A>
    requires std::same_as<A, AlignedAllocator<T>>
  Tensor(Shape shape, std::vector<T, A> data, bool requires_grad = false) {
    adopt(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor filled(Shape shape, T value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  /// Extent of `axis`; negative axes count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  std::span<const T> data() const { return impl_->data; }
  const T* ptr() const { return impl_->data.data(); }
  T operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  T item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool is_leaf() const { return impl_->node < 0; }
  std::uint64_t id() const { return impl_->id; }

  /// Toggle gradient participation; leaves only.
  void set_requires_grad(bool on);
  /// Copy of the values without tape membership or gradient participation.
  Tensor detach() const;
  /// Writable view of a leaf's values (optimizer / checkpoint loader only).
  std::span<T> mutable_data();

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  void adopt(Shape shape, Buffer<T> data, bool requires_grad);
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Gradient of a loss with respect to every parameter seen on a tape.
template <typename T>
class Gradients {
 public:
  bool contains(const Tensor<T>& param) const { return grads_.count(param.id()) != 0; }
  const Tensor<T>& operator[](const Tensor<T>& param) const;
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }
  void insert(std::uint64_t id, Tensor<T> grad) { grads_.insert_or_assign(id, std::move(grad)); }

 private:
  std::map<std::uint64_t, Tensor<T>> grads_;
};

/// Accumulation buffers handed to a node's backward function.
template <typename T>
class GradSink {
 public:
  /// Zero-initialised buffer for input `i` to add into; empty when that input
  /// does not take gradients.
  std::span<T> operator()(std::size_t i);
  bool wants(std::size_t i) const;

 private:
  friend class Tape<T>;
  GradSink(Tape<T>& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape<T>& tape_;
  std::size_t node_;
};

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, GradSink<T>& sink)>;

/// Single-use record of the operations of one training step.
template <typename T>
class Tape {
 public:
  class Activation {
   public:
    explicit Activation(Tape* tape);
    ~Activation();
    Activation(const Activation&) = delete;
    Activation& operator=(const Activation&) = delete;

   private:
    Tape* previous_;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes this the thread's recording tape until the guard is destroyed.
  [[nodiscard]] Activation activate() { return Activation(this); }
  /// Disables recording on this thread until the guard is destroyed.
  [[nodiscard]] static Activation suspend() { return Activation(nullptr); }

  /// Reverse sweep from `loss`. Consumes the tape.
  Gradients<T> backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t serial() const { return serial_; }

  static Tape* active();

  /// Registers `out` as produced from `inputs`. Called by primitive ops.
  void record(Tensor<T>& out, std::vector<Tensor<T>> inputs, BackwardFn<T> fn);

 private:
  friend class GradSink<T>;
  struct Node {
    std::vector<Tensor<T>> inputs;
    BackwardFn<T> backward;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> leaves_;
  std::unordered_map<std::uint64_t, std::size_t> leaf_index_;
  // backward-pass scratch
  std::vector<Buffer<T>> node_grads_;
  std::vector<char> node_reached_;
  std::vector<Buffer<T>> leaf_grads_;
  std::uint64_t serial_;
  bool consumed_ = false;
};

/// Tape that would record an op over `inputs`, or nullptr.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs);

template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

// Factories. Extents must be >= 1.
template <typename T>
Tensor<T> zeros(const Shape& shape);
template <typename T>
Tensor<T> zeros_like(const Tensor<T>& x);
template <typename T>
Tensor<T> ones(const Shape& shape);
template <typename T>
Tensor<T> randn(const Shape& shape, std::uint64_t seed);
template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, std::uint64_t seed);

}  // namespace geneses
