// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fastcf/errors.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(1, 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::full(Shape shape, float value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::scalar(float value) { return Tensor({}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng) {
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = static_cast<float>(rng.normal());
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const float> Tensor::data() const { return node_->value; }

std::span<float> Tensor::mutable_data() {
  if (!node_->is_leaf()) {
    throw ContractError("in-place mutation of a recorded tensor (op '" +
                        std::string(node_->op) + "')");
  }
  return node_->value;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) {
    throw ContractError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return node_->has_grad; }

std::span<const float> Tensor::grad() const {
  if (!node_->has_grad) throw ContractError("tensor has no populated grad");
  return node_->grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return Tensor(shape(), std::vector<float>(g.begin(), g.end()));
}

void Tensor::zero_grad() {
  node_->has_grad = false;
  node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

Tape::Tape(const Tensor& loss) : root_(loss.node()) {
  if (root_->value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(root_->shape));
  }
  if (!root_->requires_grad) {
    throw ContractError("loss does not depend on any requires_grad tensor");
  }
  // Iterative post-order DFS; inner diffusion chains make recursion deep.
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::backward() const {
  std::unordered_map<detail::Node*, std::vector<double>> grads;
  grads.reserve(order_.size());
  grads[root_.get()].assign(1, 1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const std::vector<double>& g = found->second;
    if (node->is_leaf()) {
      if (!node->has_grad) {
        node->grad.assign(node->value.size(), 0.0f);
        node->has_grad = true;
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        node->grad[i] += static_cast<float>(g[i]);
      }
      continue;
    }
    std::vector<std::vector<double>*> buffers(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      detail::Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->value.size(), 0.0);
      buffers[i] = &buf;
    }
    // unordered_map keeps element references stable across rehashing.
    detail::GradSink sink(std::move(buffers));
    node->backward(*node, g, sink);
  }
}

std::size_t Tape::size() const {
  return static_cast<std::size_t>(std::count_if(
      order_.begin(), order_.end(), [](const detail::Node* n) { return !n->is_leaf(); }));
}

std::size_t Tape::bytes() const {
  std::size_t b = 0;
  for (const detail::Node* n : order_) b += n->value.size() * sizeof(float);
  return b;
}

std::vector<std::string_view> Tape::ops() const {
  std::vector<std::string_view> out;
  for (const detail::Node* n : order_) {
    if (!n->is_leaf()) out.push_back(n->op);
  }
  return out;
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

}  // namespace fastcf
