// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fastcf {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;

// Gives a backward rule write access to the gradient buffers of its inputs.
// Buffers are float64; inputs that do not require grad have no buffer.
class GradSink {
 public:
  explicit GradSink(std::vector<std::vector<double>*> buffers)
      : buffers_(std::move(buffers)) {}

  bool wants(std::size_t input) const { return buffers_[input] != nullptr; }
  std::span<double> at(std::size_t input) { return *buffers_[input]; }

 private:
  std::vector<std::vector<double>*> buffers_;
};

// Backward rules see the node they belong to (its value and inputs) so they
// never need to capture it, which would create an ownership cycle.
using BackwardFn =
    std::function<void(const Node& self, std::span<const double> grad_out, GradSink& sink)>;

struct Node {
  Shape shape;
  std::vector<float> value;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<float> grad;
  // Only populated for recorded (non-leaf) nodes.
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::string_view op = "leaf";

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major float32 tensor. Copies share the underlying node, so a
/// Tensor behaves like a handle. Recorded (non-leaf) tensors are immutable;
/// leaves may be updated in place between tapes (parameter updates).
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor randn(Shape shape, Rng& rng);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float at(std::size_t i) const { return data()[i]; }
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Fresh leaf holding a copy of the values; never participates in a tape.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological record of the operations that produced a scalar loss.
/// Construction walks the graph once; backward() may be replayed any number
/// of times and accumulates into the grads of requires_grad leaves.
class Tape {
 public:
  explicit Tape(const Tensor& loss);

  void backward() const;

  /// Number of recorded primitive operations.
  std::size_t size() const;
  /// Bytes held by recorded values (a proxy for the tape's memory footprint).
  std::size_t bytes() const;
  std::vector<std::string_view> ops() const;

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;  // inputs before outputs
};

/// Builds a tape for `loss` and runs it once.
void backward(const Tensor& loss);

/// Zeroes the grads of every tensor in `params`.
void zero_grads(std::span<Tensor> params);

}  // namespace fastcf
