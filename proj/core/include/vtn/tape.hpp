// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_TAPE_HPP_
#define VTN_TAPE_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

template <typename T>
class Tape;

// Handle to a node of a Tape. Cheap to copy; only valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(std::int64_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
};

// Trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Append-only record of a forward computation. Nodes are stored in creation
// order, which is a topological order, so backward is a single reverse sweep.
// A tape is single-threaded; use one tape per worker.
template <typename T>
class Tape {
 public:
  class Context;
  using BackwardFn = std::function<void(Context&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  // Leaf bound to `p`; backward adds d(loss)/d(p) into p.grad.
  Var<T> parameter(Parameter<T>& p);

  // Appends an op node. `backward` is dropped if no input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  void backward(Var<T> loss);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(check(v)).value; }
  // Gradient from the last backward call; zeros if the node received none.
  Tensor<T> grad(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_.at(check(v)).requires_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

  class Context {
   public:
    const Tensor<T>& grad_out() const { return *grad_out_; }
    const Tensor<T>& out() const { return node_->value; }
    const Tensor<T>& in(std::size_t k) const { return tape_->nodes_[node_->inputs[k]].value; }
    bool needs(std::size_t k) const { return tape_->nodes_[node_->inputs[k]].requires_grad; }
    // Gradient buffer of input k, zero-initialised on first access.
    Tensor<T>& grad_in(std::size_t k) { return tape_->grad_buffer(node_->inputs[k]); }

   private:
    friend class Tape;
    Tape* tape_ = nullptr;
    const typename Tape::Node* node_ = nullptr;
    const Tensor<T>* grad_out_ = nullptr;
  };

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };

  std::int32_t check(Var<T> v) const;
  Var<T> push(Node node);
  Tensor<T>& grad_buffer(std::int32_t id);

  std::deque<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<bool> has_grad_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vtn

#endif  // VTN_TAPE_HPP_
