// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/tensor.hpp"

#include <atomic>
#include <sstream>

#include "geneses/rng.hpp"

namespace geneses {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_shape: return "invalid-shape";
    case Errc::config: return "config";
    case Errc::contract: return "contract";
    case Errc::numeric_domain: return "numeric-domain";
    case Errc::empty_gradient: return "empty-gradient";
    case Errc::sequence_length: return "sequence-length";
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::degenerate_power: return "degenerate-power";
    case Errc::data: return "data";
    case Errc::checkpoint_missing: return "checkpoint-missing";
    case Errc::checkpoint_corrupt: return "checkpoint-corrupt";
    case Errc::checkpoint_version: return "checkpoint-version";
  }
  return "unknown";
}

namespace detail {

std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

std::uint64_t next_tape_serial() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* active = nullptr;
  return active;
}

template <typename T>
std::unordered_map<std::uint64_t, Tape<T>*>& live_tapes() {
  thread_local std::unordered_map<std::uint64_t, Tape<T>*> tapes;
  return tapes;
}

void check_extents(const Shape& shape, const char* what) {
  for (auto e : shape) {
    if (e < 1) fail(Errc::invalid_shape, std::string(what) + ": extents must be >= 1, got " + shape_str(shape));
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  adopt(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad);
}

template <typename T>
void Tensor<T>::adopt(Shape shape, Buffer<T> data, bool requires_grad) {
  for (auto e : shape) {
    if (e < 0) fail(Errc::invalid_shape, "negative extent in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    fail(Errc::invalid_shape, "shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  impl_->id = detail::next_tensor_id();
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, Buffer<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value, bool requires_grad) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    fail(Errc::invalid_shape, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, Errc::invalid_shape, "item() on non-scalar " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  require(is_leaf(), Errc::contract, "set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  require(is_leaf(), Errc::contract, "mutable_data on a non-leaf tensor");
  return impl_->data;
}

// ---- Gradients ------------------------------------------------------------

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const Tensor<T>& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) fail(Errc::contract, "no gradient for parameter " + shape_str(param.shape()));
  return it->second;
}

// ---- GradSink -------------------------------------------------------------

template <typename T>
bool GradSink<T>::wants(std::size_t i) const {
  const auto& in = tape_.nodes_[node_].inputs[i];
  return in.requires_grad();
}

template <typename T>
std::span<T> GradSink<T>::operator()(std::size_t i) {
  const auto& in = tape_.nodes_[node_].inputs[i];
  const auto& impl = *in.impl();
  if (!impl.requires_grad) return {};
  const auto n = impl.data.size();
  if (impl.tape_serial == tape_.serial_ && impl.node >= 0) {
    auto k = static_cast<std::size_t>(impl.node);
    if (!tape_.node_reached_[k]) {
      tape_.node_grads_[k].assign(n, T(0));
      tape_.node_reached_[k] = 1;
    }
    return tape_.node_grads_[k];
  }
  auto& buf = tape_.leaf_grads_[tape_.leaf_index_.at(impl.id)];
  if (buf.empty()) buf.assign(n, T(0));
  return buf;
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Tape<T>::Activation::Activation(Tape* tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = tape;
}

template <typename T>
Tape<T>::Activation::~Activation() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
Tape<T>::Tape() : serial_(next_tape_serial()) {
  live_tapes<T>()[serial_] = this;
}

template <typename T>
Tape<T>::~Tape() {
  live_tapes<T>().erase(serial_);
  if (active_tape_slot<T>() == this) active_tape_slot<T>() = nullptr;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_tape_slot<T>();
}

template <typename T>
void Tape<T>::record(Tensor<T>& out, std::vector<Tensor<T>> inputs, BackwardFn<T> fn) {
  require(!consumed_, Errc::contract, "recording on a consumed tape");
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const auto& impl = *in.impl();
    if (impl.node >= 0) {
      require(impl.tape_serial == serial_, Errc::contract, "tensor was produced on a different tape");
    } else if (leaf_index_.emplace(impl.id, leaves_.size()).second) {
      leaves_.push_back(in);
    }
  }
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.tape_serial = serial_;
  impl.node = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{std::move(inputs), std::move(fn)});
}

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) {
  require(!consumed_, Errc::contract, "backward: tape already consumed");
  require(loss.defined(), Errc::contract, "backward: undefined loss");
  require(loss.numel() == 1, Errc::contract, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  const auto& limpl = *loss.impl();
  if (limpl.tape_serial != serial_ || limpl.node < 0 || leaves_.empty()) {
    fail(Errc::empty_gradient, "backward: loss is not connected to any parameter on this tape");
  }
  consumed_ = true;

  node_grads_.assign(nodes_.size(), {});
  node_reached_.assign(nodes_.size(), 0);
  leaf_grads_.assign(leaves_.size(), {});
  const auto root = static_cast<std::size_t>(limpl.node);
  node_grads_[root].assign(1, T(1));
  node_reached_[root] = 1;

  for (std::size_t k = root + 1; k-- > 0;) {
    if (!node_reached_[k]) continue;
    GradSink<T> sink(*this, k);
    nodes_[k].backward(std::span<const T>(node_grads_[k]), sink);
    Buffer<T>().swap(node_grads_[k]);
    // free saved activations as soon as the node is done
    nodes_[k] = Node{};
  }

  Gradients<T> out;
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto& leaf = leaves_[i];
    auto& buf = leaf_grads_[i];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(leaf.numel()), T(0));
    out.insert(leaf.id(), Tensor<T>(leaf.shape(), std::move(buf)));
  }
  nodes_.clear();
  leaves_.clear();
  leaf_index_.clear();
  node_grads_.clear();
  node_reached_.clear();
  leaf_grads_.clear();
  return out;
}

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* in : inputs) {
    if (in != nullptr && in->defined() && in->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
  require(loss.defined(), Errc::contract, "backward: undefined loss");
  require(loss.numel() == 1, Errc::contract, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto& tapes = live_tapes<T>();
  auto it = tapes.find(loss.impl()->tape_serial);
  if (it == tapes.end()) fail(Errc::empty_gradient, "backward: loss is not attached to a live tape");
  return it->second->backward(loss);
}

// ---- factories ------------------------------------------------------------

template <typename T>
Tensor<T> zeros(const Shape& shape) {
  check_extents(shape, "zeros");
  return Tensor<T>::filled(shape, T(0));
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& x) {
  return Tensor<T>::filled(x.shape(), T(0));
}

template <typename T>
Tensor<T> ones(const Shape& shape) {
  check_extents(shape, "ones");
  return Tensor<T>::filled(shape, T(1));
}

template <typename T>
Tensor<T> randn(const Shape& shape, std::uint64_t seed) {
  check_extents(shape, "randn");
  const auto key = Rng(seed).key();
  Buffer<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(Rng::normal_at(key, i));
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, std::uint64_t seed) {
  check_extents(shape, "uniform");
  const auto key = Rng(seed).key();
  Buffer<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<T>(lo + (hi - lo) * Rng::uniform_at(key, i));
  }
  return Tensor<T>(shape, std::move(v));
}

#define GENESES_INSTANTIATE(T)                                                  \
  template class Tensor<T>;                                                     \
  template class Gradients<T>;                                                  \
  template class GradSink<T>;                                                   \
  template class Tape<T>;                                                       \
  template Tape<T>* recording_tape<T>(std::initializer_list<const Tensor<T>*>); \
  template Gradients<T> backward<T>(const Tensor<T>&);                          \
  template Tensor<T> zeros<T>(const Shape&);                                    \
  template Tensor<T> zeros_like<T>(const Tensor<T>&);                           \
  template Tensor<T> ones<T>(const Shape&);                                     \
  template Tensor<T> randn<T>(const Shape&, std::uint64_t);                     \
  template Tensor<T> uniform<T>(const Shape&, T, T, std::uint64_t);

GENESES_INSTANTIATE(float)
GENESES_INSTANTIATE(double)

}  // namespace geneses
