// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over Tensor. Binary elementwise ops broadcast with
// trailing-axis alignment. Axis arguments accept negative values.
#pragma once

#include <cstddef>
#include <vector>

#include "s3f/tensor.hpp"

namespace s3f {

// Elementwise arithmetic (broadcasting).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);

// Elementwise nonlinearities.
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Exact x * Phi(x) with the erf-based Gaussian CDF.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
// max(a, lo); gradient passes only where a > lo.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T lo);

// Shape manipulation.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, int axis, const std::vector<std::size_t>& indices);
// out.flat[i] = a.flat[indices[i]], reshaped to `shape`. Gradient scatter-adds.
template <typename T>
Tensor<T> take(const Tensor<T>& a, const std::vector<std::size_t>& indices, Shape shape);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim = false);
// Max along an axis; the gradient goes to the first maximal element.
template <typename T> Tensor<T> max(const Tensor<T>& a, int axis, bool keepdim = false);

// (..., m, k) x (..., k, n). `b` may be rank 2 and is then shared by every batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x (..., in), weight (out, in), bias (out) -> (..., out).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight);
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis = -1);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a, int axis = -1);
// Normalizes over the last axis with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6));
// Mean cross-entropy of logits (R, K) against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

}  // namespace s3f
