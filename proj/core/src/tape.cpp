// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/tape.hpp"

namespace vtn {

template <typename T>
std::int32_t Tape<T>::check(Var<T> v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
  return v.id;
}

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    n.inputs.push_back(check(in));
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::int32_t id) {
  if (!has_grad_[id]) {
    grads_[id] = Tensor<T>(nodes_[id].value.shape());
    has_grad_[id] = true;
  }
  return grads_[id];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  const std::int32_t root = check(loss);
  if (nodes_[root].value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        to_string(nodes_[root].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor<T>());
  has_grad_.assign(nodes_.size(), false);
  grad_buffer(root).fill(T(1));

  Context ctx;
  ctx.tape_ = this;
  for (std::int32_t id = root; id >= 0; --id) {
    if (!has_grad_[id]) continue;
    const Node& node = nodes_[id];
    if (node.param != nullptr) {
      auto dst = node.param->grad.data();
      auto src = grads_[id].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (!node.backward) continue;
    ctx.node_ = &node;
    ctx.grad_out_ = &grads_[id];
    node.backward(ctx);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const std::int32_t id = check(v);
  if (static_cast<std::size_t>(id) < has_grad_.size() && has_grad_[id]) return grads_[id];
  return Tensor<T>(nodes_[id].value.shape());
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  grads_.clear();
  has_grad_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace vtn
