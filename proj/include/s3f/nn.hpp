// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "s3f/ops.hpp"
#include "s3f/rng.hpp"
#include "s3f/tensor.hpp"

namespace s3f {

// Named parameter handles. Entries alias the model's storage.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> trunc_normal_param(Shape shape, double stddev, RngStream& rng) {
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> const_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out)

  static Linear init(std::size_t in, std::size_t out, double stddev, RngStream& rng) {
    return {trunc_normal_param<T>({out, in}, stddev, rng), const_param<T>({out}, T(0))};
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    return {const_param<T>({out, in}, T(0)), const_param<T>({out}, T(0))};
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams init(std::size_t dim) { return {const_param<T>({dim}, T(1)), const_param<T>({dim}, T(0))}; }

  Tensor<T> operator()(const Tensor<T>& x, T eps = T(1e-6)) const { return layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// Two linear layers with a ReLU between them.
template <typename T>
struct Mlp2 {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp2 init(std::size_t in, std::size_t hidden, std::size_t out, RngStream& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// He-normal initialization for ReLU stacks.
template <typename T>
Mlp2<T> Mlp2<T>::init(std::size_t in, std::size_t hidden, std::size_t out, RngStream& rng) {
  const double s1 = std::sqrt(2.0 / static_cast<double>(in));
  const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
  return {Linear<T>::init(in, hidden, s1, rng), Linear<T>::init(hidden, out, s2, rng)};
}

template <typename T>
void set_requires_grad(const ParamList<T>& params, bool on) {
  for (auto [name, t] : params) t.set_requires_grad(on);
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto [name, t] : params) t.zero_grad();
}

}  // namespace s3f
