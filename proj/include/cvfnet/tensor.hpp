// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvfnet/error.hpp"

namespace cvf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until touched; same length as value when present
  bool requires_grad = false;
};

// Dense row-major tensor handle. Copies are shallow (shared storage); every
// op returns a fresh tensor. Scalar type T is float or double and fixes the
// precision of the whole graph it participates in.
template <typename T>
class Tensor {
 public:
  Tensor() : s_(std::make_shared<TensorStorage<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.s_->value.assign(shape_numel(shape), T(0));
    t.s_->shape = std::move(shape);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.s_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(data);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->value.size(); }

  std::span<T> value() { return {s_->value.data(), s_->value.size()}; }
  std::span<const T> value() const { return {s_->value.data(), s_->value.size()}; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    if (!rg) s_->grad.clear();
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }

  // Gradient buffer; allocated zero-filled on first access.
  std::span<T> grad() {
    if (!s_->requires_grad)
      throw ContractError("grad() on a tensor with requires_grad=false");
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    return {s_->grad.data(), s_->grad.size()};
  }

  std::span<const T> grad() const {
    return {s_->grad.data(), s_->grad.size()};
  }

  void zero_grad() {
    if (!s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  std::shared_ptr<TensorStorage<T>> storage() const { return s_; }
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

template <typename T>
std::span<T> ensure_grad(const std::shared_ptr<TensorStorage<T>>& s) {
  if (s->grad.empty()) s->grad.assign(s->value.size(), T(0));
  return {s->grad.data(), s->grad.size()};
}

// Reverse-mode tape. Ops append one backward step per executed operation, in
// execution order; backward() seeds the loss gradient and replays the steps
// exactly once, in reverse. Single-threaded per training context.
template <typename T>
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> backward_step) {
    if (recording_) steps_.push_back(std::move(backward_step));
  }

  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(loss.shape()));
    if (loss.requires_grad()) ensure_grad(loss.storage())[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
};

// RAII guard that pauses tape recording (forward-only evaluation).
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace cvf
