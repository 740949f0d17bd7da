// SPDX-License-Identifier: Apache-2.0
#include "s3f/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Core>

namespace s3f {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Gradient buffer of parent i, or nullptr when that input does not need one.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->grad_buffer().data() : nullptr;
}

template <typename T>
const T* data_of(const Node<T>& self, std::size_t i) {
  return self.parents[i]->data.data();
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  check(a >= 0 && a < r, op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// View a shape as (outer, n, inner) around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    check(da == db || da == 1 || db == 1, op,
          "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// For every flat index of `to`, the flat index of `from` it reads. Empty when
// the shapes are identical.
std::vector<std::size_t> broadcast_index(const Shape& from, const Shape& to) {
  if (from == to) return {};
  const std::size_t r = to.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    const std::size_t ti = i + (r - from.size());
    stride[ti] = from[i] == 1 ? 0 : s;
    s *= from[i];
  }
  const std::size_t n = numel_of(to);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < to[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (to[d] - 1);
      counter[d] = 0;
    }
  }
  return idx;
}

inline std::size_t at(const std::vector<std::size_t>& idx, std::size_t k) { return idx.empty() ? k : idx[k]; }

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  auto ia = broadcast_index(a.shape(), out_shape);
  auto ib = broadcast_index(b.shape(), out_shape);
  const std::size_t n = numel_of(out_shape);
  std::vector<T> out(n);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t k = 0; k < n; ++k) out[k] = fwd(da[at(ia, k)], db[at(ib, k)]);
  return Tensor<T>::make_result(op, std::move(out_shape), std::move(out), {a, b},
                                [ia = std::move(ia), ib = std::move(ib), bwd](Node<T>& self) {
                                  const T* pa = data_of(self, 0);
                                  const T* pb = data_of(self, 1);
                                  T* ga = grad_of(self, 0);
                                  T* gb = grad_of(self, 1);
                                  const auto& g = self.grad;
                                  for (std::size_t k = 0; k < g.size(); ++k) {
                                    const std::size_t ka = at(ia, k), kb = at(ib, k);
                                    bwd(pa[ka], pb[kb], g[k], ga ? &ga[ka] : nullptr, gb ? &gb[kb] : nullptr);
                                  }
                                });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto da = a.data();
  std::vector<T> out(da.size());
  for (std::size_t k = 0; k < da.size(); ++k) out[k] = fwd(da[k]);
  return Tensor<T>::make_result(op, a.shape(), std::move(out), {a}, [deriv](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const T* pa = data_of(self, 0);
    const auto& g = self.grad;
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * deriv(pa[k], self.data[k]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T* ga, T* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T* ga, T* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T* ga, T* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T x : a.data()) check(x > T(0), "log", "non-positive input");
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return unary<T>(
      "clamp_min", a, [lo](T x) { return x > lo ? x : lo; }, [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check(numel_of(shape) == a.numel(), "reshape",
        "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t k = 0; k < self.grad.size(); ++k) ga[k] += self.grad[k];
  });
}

template <typename T>
Tensor<T> take(const Tensor<T>& a, const std::vector<std::size_t>& indices, Shape shape) {
  check(numel_of(shape) == indices.size(), "take",
        "shape " + shape_str(shape) + " does not match " + std::to_string(indices.size()) + " indices");
  const auto da = a.data();
  std::vector<T> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    check(indices[k] < da.size(), "take", "index " + std::to_string(indices[k]) + " out of range");
    out[k] = da[indices[k]];
  }
  return Tensor<T>::make_result("take", std::move(shape), std::move(out), {a}, [indices](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t k = 0; k < indices.size(); ++k) ga[indices[k]] += self.grad[k];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  check(perm.size() == in.size(), "permute", "permutation rank mismatch");
  std::vector<bool> used(in.size(), false);
  for (std::size_t p : perm) {
    check(p < in.size() && !used[p], "permute", "invalid permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_stride(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(in.size());
  std::vector<std::size_t> stride(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = a.numel();
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = off;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++counter[d] < out[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return take(a, idx, std::move(out));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1) {
  const std::size_t i = norm_axis(axis0, a.rank(), "transpose");
  const std::size_t j = norm_axis(axis1, a.rank(), "transpose");
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[i], perm[j]);
  return permute(a, perm);
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape) {
  check(broadcast_shape(a.shape(), shape, "broadcast_to") == shape, "broadcast_to",
        "cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto idx = broadcast_index(a.shape(), shape);
  if (idx.empty()) {
    idx.resize(a.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  return take(a, idx, shape);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  check(!parts.empty(), "concat", "no inputs");
  const std::size_t ax = norm_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    check(p.rank() == out_shape.size(), "concat", "rank mismatch");
    for (std::size_t d = 0; d < out_shape.size(); ++d)
      check(d == ax || p.shape()[d] == parts[0].shape()[d], "concat",
            "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<T> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.shape()[ax] * s.inner;
    const auto d = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(d.data() + o * block, block, out.data() + o * s.n * s.inner + off * s.inner);
    off += p.shape()[ax];
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.shape()[ax]);
  return Tensor<T>::make_result("concat", std::move(out_shape), std::move(out), parts,
                                [s, offsets, extents](Node<T>& self) {
                                  for (std::size_t i = 0; i < extents.size(); ++i) {
                                    T* gp = grad_of(self, i);
                                    if (!gp) continue;
                                    const std::size_t block = extents[i] * s.inner;
                                    for (std::size_t o = 0; o < s.outer; ++o) {
                                      const T* src = self.grad.data() + o * s.n * s.inner + offsets[i] * s.inner;
                                      T* dst = gp + o * block;
                                      for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, a.rank(), "slice");
  const AxisSplit s = split_at(a.shape(), ax);
  check(start + length <= s.n, "slice", "range out of bounds");
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<T> out(numel_of(out_shape));
  const auto d = a.data();
  const std::size_t block = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(d.data() + (o * s.n + start) * s.inner, block, out.data() + o * block);
  return Tensor<T>::make_result("slice", std::move(out_shape), std::move(out), {a}, [s, start, block](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = ga + (o * s.n + start) * s.inner;
      const T* src = self.grad.data() + o * block;
      for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
    }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, int axis, const std::vector<std::size_t>& indices) {
  const std::size_t ax = norm_axis(axis, a.rank(), "index_select");
  const AxisSplit s = split_at(a.shape(), ax);
  for (std::size_t i : indices)
    check(i < s.n, "index_select", "index " + std::to_string(i) + " out of range " + std::to_string(s.n));
  Shape out_shape = a.shape();
  out_shape[ax] = indices.size();
  const std::size_t m = indices.size();
  std::vector<T> out(numel_of(out_shape));
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(d.data() + (o * s.n + indices[j]) * s.inner, s.inner, out.data() + (o * m + j) * s.inner);
  return Tensor<T>::make_result("index_select", std::move(out_shape), std::move(out), {a},
                                [s, indices](Node<T>& self) {
                                  T* ga = grad_of(self, 0);
                                  if (!ga) return;
                                  const std::size_t m = indices.size();
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t j = 0; j < m; ++j) {
                                      T* dst = ga + (o * s.n + indices[j]) * s.inner;
                                      const T* src = self.grad.data() + (o * m + j) * s.inner;
                                      for (std::size_t k = 0; k < s.inner; ++k) dst[k] += src[k];
                                    }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.data()) acc += x;
  return Tensor<T>::make_result("sum", Shape{}, {acc}, {a}, [](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t k = 0; k < n; ++k) ga[k] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  check(a.numel() > 0, "mean", "empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank(), "sum");
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += d[(o * s.n + j) * s.inner + i];
  return Tensor<T>::make_result("sum_axis", std::move(out_shape), std::move(out), {a}, [s](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim) {
  const std::size_t n = a.dim(axis);
  check(n > 0, "mean", "zero-length axis");
  return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank(), "max");
  const AxisSplit s = split_at(a.shape(), ax);
  check(s.n > 0, "max", "zero-length axis");
  Shape out_shape = a.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = (o * s.n) * s.inner + i;
      for (std::size_t j = 1; j < s.n; ++j) {
        const std::size_t k = (o * s.n + j) * s.inner + i;
        if (d[k] > d[best]) best = k;
      }
      out[o * s.inner + i] = d[best];
      arg[o * s.inner + i] = best;
    }
  return Tensor<T>::make_result("max", std::move(out_shape), std::move(out), {a},
                                [arg = std::move(arg)](Node<T>& self) {
                                  T* ga = grad_of(self, 0);
                                  if (!ga) return;
                                  for (std::size_t k = 0; k < arg.size(); ++k) ga[arg[k]] += self.grad[k];
                                });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() >= 2 && b.rank() >= 2, "matmul", "operands must have rank >= 2");
  std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1), n = b.dim(-1);
  check(b.dim(-2) == k, "matmul", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool shared_b = b.rank() == 2;
  std::size_t batch = numel_of(Shape(a.shape().begin(), a.shape().end() - 2));
  if (!shared_b) {
    check(a.rank() == b.rank(), "matmul", "batch ranks differ");
    for (std::size_t d = 0; d + 2 < a.rank(); ++d)
      check(a.shape()[d] == b.shape()[d], "matmul", "batch extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(batch * m * n);
  if (shared_b) {
    // Fold the batch into the row dimension.
    m *= batch;
    batch = 1;
  }
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    MatMap<T> c(out.data() + i * m * n, m, n);
    c.noalias() = ConstMatMap<T>(pa + i * m * k, m, k) * ConstMatMap<T>(pb + i * k * n, k, n);
  }
  return Tensor<T>::make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                                [batch, m, k, n](Node<T>& self) {
                                  const T* pa = data_of(self, 0);
                                  const T* pb = data_of(self, 1);
                                  T* ga = grad_of(self, 0);
                                  T* gb = grad_of(self, 1);
                                  const T* g = self.grad.data();
                                  for (std::size_t i = 0; i < batch; ++i) {
                                    ConstMatMap<T> gc(g + i * m * n, m, n);
                                    if (ga) {
                                      MatMap<T> dst(ga + i * m * k, m, k);
                                      dst.noalias() += gc * ConstMatMap<T>(pb + i * k * n, k, n).transpose();
                                    }
                                    if (gb) {
                                      MatMap<T> dst(gb + i * k * n, k, n);
                                      dst.noalias() += ConstMatMap<T>(pa + i * m * k, m, k).transpose() * gc;
                                    }
                                  }
                                });
}

namespace {

template <typename T>
Tensor<T> linear_impl(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  check(x.rank() >= 1 && weight.rank() == 2, "linear", "expected x (..., in) and weight (out, in)");
  const std::size_t in = weight.dim(1), out_f = weight.dim(0);
  check(x.dim(-1) == in, "linear",
        "input width " + std::to_string(x.dim(-1)) + " does not match weight " + shape_str(weight.shape()));
  if (bias) check(bias->rank() == 1 && bias->dim(0) == out_f, "linear", "bias shape " + shape_str(bias->shape()));
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<T> out(rows * out_f);
  MatMap<T> y(out.data(), rows, out_f);
  y.noalias() = ConstMatMap<T>(x.data().data(), rows, in) * ConstMatMap<T>(weight.data().data(), out_f, in).transpose();
  if (bias) {
    const T* pb = bias->data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out_f; ++o) out[r * out_f + o] += pb[o];
  }
  std::vector<Tensor<T>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return Tensor<T>::make_result("linear", std::move(out_shape), std::move(out), std::move(parents),
                                [rows, in, out_f](Node<T>& self) {
                                  ConstMatMap<T> g(self.grad.data(), rows, out_f);
                                  if (T* gx = grad_of(self, 0)) {
                                    MatMap<T> dst(gx, rows, in);
                                    dst.noalias() += g * ConstMatMap<T>(data_of(self, 1), out_f, in);
                                  }
                                  if (T* gw = grad_of(self, 1)) {
                                    MatMap<T> dst(gw, out_f, in);
                                    dst.noalias() += g.transpose() * ConstMatMap<T>(data_of(self, 0), rows, in);
                                  }
                                  if (self.parents.size() > 2) {
                                    if (T* gb = grad_of(self, 2)) {
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t o = 0; o < out_f; ++o) gb[o] += self.grad[r * out_f + o];
                                    }
                                  }
                                });
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight) {
  return linear_impl<T>(x, weight, nullptr);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear_impl<T>(x, weight, &bias);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = norm_axis(axis, a.rank(), "softmax");
  const AxisSplit s = split_at(a.shape(), ax);
  const auto d = a.data();
  for (T x : d) check(std::isfinite(x), "softmax", "non-finite input");
  std::vector<T> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, d[base + j * s.inner]);
      T z = T(0);
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(d[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  return Tensor<T>::make_result("softmax", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T dot = T(0);
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          ga[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = norm_axis(axis, a.rank(), "log_softmax");
  const AxisSplit s = split_at(a.shape(), ax);
  const auto d = a.data();
  for (T x : d) check(std::isfinite(x), "log_softmax", "non-finite input");
  std::vector<T> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, d[base + j * s.inner]);
      T z = T(0);
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(d[base + j * s.inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = d[base + j * s.inner] - lse;
    }
  return Tensor<T>::make_result("log_softmax", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T gs = T(0);
        for (std::size_t j = 0; j < s.n; ++j) gs += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          ga[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  check(x.rank() >= 1 && x.dim(-1) > 0, "layer_norm", "zero-length normalization axis");
  check(eps > T(0), "layer_norm", "eps must be positive");
  const std::size_t d = x.dim(-1);
  check(gamma.numel() == d && beta.numel() == d, "layer_norm",
        "affine parameters must have " + std::to_string(d) + " entries");
  const std::size_t rows = x.numel() / d;
  const auto px = x.data();
  const auto pg = gamma.data();
  const auto pb = beta.data();
  std::vector<T> out(px.size());
  std::vector<T> xhat(px.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  return Tensor<T>::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const T* pg = data_of(self, 1);
        T* gx = grad_of(self, 0);
        T* gg = grad_of(self, 1);
        T* gb = grad_of(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* hr = xhat.data() + r * d;
          if (gg || gb)
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += gr[j] * hr[j];
              if (gb) gb[j] += gr[j];
            }
          if (gx) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gr[j] * pg[j];
              m1 += dh;
              m2 += dh * hr[j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd[r] * (gr[j] * pg[j] - m1 - hr[j] * m2);
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  check(logits.rank() == 2, "cross_entropy", "logits must be (rows, classes)");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  check(labels.size() == rows, "cross_entropy", "label count does not match rows");
  for (std::size_t l : labels) check(l < k, "cross_entropy", "label " + std::to_string(l) + " out of range");
  auto lsm = log_softmax(logits, -1);
  std::vector<std::size_t> picks(rows);
  for (std::size_t r = 0; r < rows; ++r) picks[r] = r * k + labels[r];
  return scale(sum(take(lsm, picks, Shape{rows})), T(-1) / static_cast<T>(rows));
}

#define S3F_INSTANTIATE(T)                                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template Tensor<T> exp(const Tensor<T>&);                                                         \
  template Tensor<T> log(const Tensor<T>&);                                                         \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                    \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                         \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                    \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                        \
  template Tensor<T> index_select(const Tensor<T>&, int, const std::vector<std::size_t>&);          \
  template Tensor<T> take(const Tensor<T>&, const std::vector<std::size_t>&, Shape);                \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                                              \
  template Tensor<T> mean(const Tensor<T>&, int, bool);                                             \
  template Tensor<T> max(const Tensor<T>&, int, bool);                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
