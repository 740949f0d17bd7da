// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiable tensor.
//
// A Tensor is a cheap handle onto a shared node holding a row-major contiguous
// buffer. Values are fixed once an op has produced them; only the gradient
// buffer accumulates. Ops record their inputs and a backward closure when any
// input requires a gradient and gradient recording is enabled.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s3f/error.hpp"

namespace s3f {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Gradient recording switch (thread-local). Teacher forwards and evaluation
// run under NoGradGuard so they leave no tape behind.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Extent of an axis; negative values count from the back.
  std::size_t dim(int axis) const;

  std::span<const T> data() const { return node_->data; }
  // Writable view for parameter updates and initialization. Never call on a
  // tensor that an op has already consumed if that graph will be replayed.
  std::span<T> mutable_data() { return node_->data; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Same values, no history; a fresh leaf.
  Tensor detach() const;
  // Deep copy keeping the requires_grad flag, without history.
  Tensor clone() const;

  // Populate grads of every reachable requires_grad tensor. `this` must be a
  // scalar.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Builds an op result. `parents` are recorded only when gradients flow.
  static Tensor make_result(const char* op, Shape shape, std::vector<T> data,
                            std::vector<Tensor> parents,
                            std::function<void(Node<T>&)> backward);

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

// Accumulate `g` into the gradient buffer of parent i of `self`.
template <typename T>
inline std::vector<T>& parent_grad(Node<T>& self, std::size_t i) {
  return self.parents[i]->grad_buffer();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace s3f
