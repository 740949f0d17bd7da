// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "s3f/ops.hpp"
#include "support/common.hpp"
#include "support/gradcheck.hpp"

using namespace s3f;
using s3f::testing::random_tensor;

TEST_CASE("broadcast add aligns trailing axes") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK_THROWS_AS(add(a, Tensor<double>({2}, {1, 2})), Error);
}

TEST_CASE("matmul agrees with a triple loop") {
  auto a = random_tensor({3, 4, 5}, 1);
  auto b = random_tensor({3, 5, 2}, 2);
  auto c = matmul(a, b);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += a[(n * 4 + i) * 5 + k] * b[(n * 5 + k) * 2 + j];
        CHECK(c[(n * 4 + i) * 2 + j] == doctest::Approx(s).epsilon(1e-12));
      }
  CHECK_THROWS_AS(matmul(a, random_tensor({3, 4, 2}, 3)), Error);
}

TEST_CASE("linear uses (out, in) weights") {
  Tensor<double> x({1, 2}, {1, 2});
  Tensor<double> w({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor<double> b({3}, {0.5, 0, -1});
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y[0] == 1.5);
  CHECK(y[1] == 2);
  CHECK(y[2] == 2);
}

TEST_CASE("permute matches index arithmetic") {
  auto a = random_tensor({2, 3, 4}, 4);
  auto p = permute(a, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(p[(k * 2 + i) * 3 + j] == a[(i * 3 + j) * 4 + k]);
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
  auto s = softmax(random_tensor({4, 7}, 5, -30, 30));
  for (std::size_t r = 0; r < 4; ++r) {
    double t = 0;
    for (std::size_t c = 0; c < 7; ++c) t += s[r * 7 + c];
    CHECK(t == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(softmax(Tensor<double>({2}, {1, NAN})), Error);
}

TEST_CASE("layer norm gives zero mean and unit population variance") {
  auto x = random_tensor({3, 16}, 6, -4, 4);
  auto y = layer_norm(x, Tensor<double>::full({16}, 1), Tensor<double>::zeros({16}), 1e-300);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y[r * 16 + c];
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y[r * 16 + c] - m) * (y[r * 16 + c] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("cross entropy equals the mean negative log-likelihood") {
  auto logits = random_tensor({3, 4}, 7, -2, 2);
  std::vector<std::size_t> labels{0, 3, 2};
  double expect = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits[r * 4 + c]);
    expect -= logits[r * 4 + labels[r]] - std::log(z);
  }
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx(expect / 3).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(logits, {0, 4, 1}), Error);
}

TEST_CASE("gelu is the exact erf form") {
  Tensor<double> x({3}, {-1.5, 0.0, 2.0});
  auto y = gelu(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(0.5 * x[i] * (1 + std::erf(x[i] / std::sqrt(2.0)))));
}

TEST_CASE("backward requires a scalar and accumulates through shared inputs") {
  Tensor<double> x({2}, {1, 2}, true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), Error);
  sum(add(y, x)).backward();
  CHECK(x.grad()[0] == 3);
  CHECK(x.grad()[1] == 5);
}

TEST_CASE("no-grad guard records no history") {
  Tensor<double> x({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard g;
    y = sum(mul(x, x));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("log rejects non-positive input") { CHECK_THROWS_AS(log(Tensor<double>({2}, {1, 0})), Error); }

TEST_CASE("max routes gradient to the first maximum") {
  Tensor<double> x({1, 3}, {2, 5, 5}, true);
  sum(max(x, 1)).backward();
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[1] == 1);
  CHECK(x.grad()[2] == 0);
}

TEST_CASE("take scatters gradients back to repeated sources") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  sum(take(x, {0, 0, 2}, {3})).backward();
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 0);
  CHECK(x.grad()[2] == 1);
}

TEST_CASE("op gradients in double") {
  using s3f::testing::check_gradients;
  using s3f::testing::Problem;
  auto unary = [](auto op, Shape shape, double lo, double hi) {
    return [=]<typename T>() {
      auto x = random_tensor<T>(shape, 11, lo, hi);
      auto w = random_tensor<T>(shape, 12);
      return Problem<T>{{{"x", x}}, [=] { return sum(mul(op(x), w)); }};
    };
  };
  CHECK(check_gradients(unary([](auto x) { return exp(x); }, {3, 4}, -1, 1), false).max_rel < 1e-6);
  CHECK(check_gradients(unary([](auto x) { return log(x); }, {3, 4}, 0.5, 2), false).max_rel < 1e-6);
  CHECK(check_gradients(unary([](auto x) { return gelu(x); }, {3, 4}, -2, 2), false).max_rel < 1e-6);
  CHECK(check_gradients(unary([](auto x) { return softmax(x, 0); }, {3, 4}, -2, 2), false).max_rel < 1e-6);
  CHECK(check_gradients(unary([](auto x) { return log_softmax(x, 1); }, {3, 4}, -2, 2), false).max_rel < 1e-6);
  CHECK(check_gradients(unary([](auto x) { return permute(x, {1, 0}); }, {4, 4}, -2, 2), false).max_rel < 1e-6);
  auto mm = []<typename T>() {
    auto a = random_tensor<T>({2, 3, 4}, 13);
    auto b = random_tensor<T>({4, 5}, 14);
    return Problem<T>{{{"a", a}, {"b", b}}, [=] { return sum(mul(matmul(a, b), matmul(a, b))); }};
  };
  CHECK(check_gradients(mm, false).max_rel < 1e-6);
  auto ln = []<typename T>() {
    auto x = random_tensor<T>({3, 6}, 15, -2, 2);
    auto g = random_tensor<T>({6}, 16, 0.5, 1.5);
    auto b = random_tensor<T>({6}, 17);
    auto w = random_tensor<T>({3, 6}, 18);
    return Problem<T>{{{"x", x}, {"gamma", g}, {"beta", b}}, [=] { return sum(mul(layer_norm(x, g, b), w)); }};
  };
  CHECK(check_gradients(ln, false).max_rel < 1e-6);
  CHECK(check_gradients(ln, true).max_rel < 1e-4);
}
