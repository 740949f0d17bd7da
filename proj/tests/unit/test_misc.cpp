// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "doctest.h"
#include "s3f/metrics.hpp"
#include "s3f/ops.hpp"
#include "s3f/optim.hpp"
#include "s3f/rng.hpp"
#include "s3f/synthetic.hpp"
#include "support/common.hpp"

using namespace s3f;

TEST_CASE("rng streams are pure functions of seed, key and counter") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, 7);
  c.set_counter(50);
  RngStream d(42, 7);
  for (int i = 0; i < 50; ++i) d.next_u64();
  CHECK(c.next_u64() == d.next_u64());
  CHECK(RngStream(42, 7).next_u64() != RngStream(42, 8).next_u64());
  CHECK(RngStream(42, 7).fork(1).next_u64() != RngStream(42, 7).fork(2).next_u64());
  // Known value pins the sequence across platforms.
  CHECK(RngStream::mix(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("rng distributions") {
  RngStream r(1);
  double m = 0, v = 0;
  const int n = 20000;
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(r.normal());
  for (double x : xs) m += x;
  m /= n;
  for (double x : xs) v += (x - m) * (x - m);
  v /= n;
  CHECK(std::abs(m) < 0.03);
  CHECK(std::abs(v - 1) < 0.05);
  for (int i = 0; i < 1000; ++i) {
    CHECK(std::abs(r.truncated_normal(0.5)) <= 1.0);
    CHECK(r.below(7) < 7);
    const double u = r.uniform();
    CHECK((u >= 0 && u < 1));
  }
  auto p = r.permutation(50);
  CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == 50);
  CHECK(*std::max_element(p.begin(), p.end()) == 49);
}

TEST_CASE("synthetic voxels") {
  SyntheticSpec s;
  s.resolution = 8;
  s.shape = ShapeKind::Cube;
  auto cube = make_voxels<double>(s);
  CHECK(cube.values.shape() == Shape{8, 8, 8, 1});
  double total = 0;
  for (double x : cube.values.data()) total += x;
  CHECK(total == 64);
  // Brute-force count for the sphere at r = 16.
  s.resolution = 16;
  s.shape = ShapeKind::Sphere;
  auto sphere = make_voxels<double>(s);
  std::size_t expect = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int k = 0; k < 16; ++k) {
        const double dx = i + 0.5 - 8, dy = j + 0.5 - 8, dz = k + 0.5 - 8;
        expect += dx * dx + dy * dy + dz * dz <= 36.0;
      }
  total = 0;
  for (double x : sphere.values.data()) total += x;
  CHECK(total == static_cast<double>(expect));
  // Symmetric under axis swaps.
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int k = 0; k < 16; ++k)
        CHECK(sphere.values[(i * 16 + j) * 16 + k] == sphere.values[(k * 16 + i) * 16 + j]);
  s.jitter = 1.0;
  s.seed = 3;
  auto j1 = make_voxels<double>(s), j2 = make_voxels<double>(s);
  CHECK(s3f::testing::bit_equal(j1.values.data(), j2.values.data()));
  s.seed = 4;
  CHECK_FALSE(s3f::testing::bit_equal(j1.values.data(), make_voxels<double>(s).values.data()));
  s.resolution = 3;
  CHECK_THROWS_AS(make_voxels<double>(s), Error);
  CHECK(parse_shape("cylinder") == ShapeKind::Cylinder);
  CHECK_THROWS_AS(parse_shape("torus"), Error);
}

TEST_CASE("synthetic points and hemispheres") {
  SyntheticSpec s;
  s.points = 100;
  auto pc = make_points<double>(s, 4);
  CHECK(pc.coords.shape() == Shape{100, 3});
  CHECK(pc.feats.shape() == Shape{100, 4});
  for (std::size_t i = 0; i < 100; ++i) {
    const double r = std::hypot(pc.coords[i * 3], pc.coords[i * 3 + 1], pc.coords[i * 3 + 2]);
    CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto h = make_hemispheres<double>(s, 2);
  for (std::size_t i = 0; i < 100; ++i) CHECK(h.labels[i] == (h.cloud.coords[i * 3 + 2] > 0 ? 1 : 0));
}

TEST_CASE("classification metrics") {
  std::vector<int> t{0, 0, 0, 1, 2, 2};
  auto perfect = classification_metrics(t, t, 3);
  CHECK(perfect.oa == 100.0);
  CHECK(perfect.macc == 100.0);
  std::vector<int> p{0, 0, 1, 1, 0, 0};
  auto m = classification_metrics(p, t, 3);
  CHECK(m.oa == doctest::Approx(50.0));
  CHECK(m.macc == doctest::Approx((200.0 / 3 + 100 + 0) / 3));
  RngStream r(5);
  std::vector<int> rp, rt;
  for (int i = 0; i < 4000; ++i) rp.push_back(static_cast<int>(r.below(2))), rt.push_back(static_cast<int>(r.below(2)));
  CHECK(std::abs(classification_metrics(rp, rt, 2).oa - 50) < 5);
  CHECK_THROWS_AS(classification_metrics(p, std::vector<int>{0}, 3), Error);
}

TEST_CASE("segmentation metrics") {
  std::vector<int> t{0, 0, 1, 1};
  std::vector<int> parts{0, 1};
  CHECK(shape_iou(t, t, parts) == 1.0);
  CHECK(shape_iou(std::vector<int>{1, 1, 0, 0}, t, parts) == 0.0);
  // Part 2 absent from both counts as 1.
  CHECK(shape_iou(t, t, std::vector<int>{0, 1, 2}) == 1.0);
  CHECK(shape_iou(std::vector<int>{0, 1, 1, 1}, t, parts) == doctest::Approx((0.5 + 2.0 / 3) / 2));
  std::vector<SegmentedShape> shapes{{t, t, 0}, {{1, 1, 0, 0}, t, 0}, {t, t, 1}};
  auto m = segmentation_metrics(shapes, {{0, 1}, {0, 1}});
  CHECK(m.ins_miou == doctest::Approx(200.0 / 3));
  CHECK(m.cat_miou == doctest::Approx(75.0));
  CHECK(m.oa == doctest::Approx(200.0 / 3));
}

TEST_CASE("learning-rate schedule") {
  auto adam = OptimizerSpec::defaults(OptimizerKind::Adam);
  CHECK(adam.lr_at(0, 0) == 0.01);
  CHECK(adam.lr_at(0, 20) == 0.005);
  CHECK(adam.lr_at(0, 45) == 0.0025);
  auto sgd = OptimizerSpec::defaults(OptimizerKind::Sgd);
  CHECK(sgd.lr_at(0, 100) == doctest::Approx(0.005));
  adam.warmup_steps = 4;
  CHECK(adam.lr_at(0, 0) == doctest::Approx(0.0025));
  CHECK(adam.lr_at(3, 0) == doctest::Approx(0.01));
  CHECK(adam.lr_at(10, 0) == 0.01);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), Error);
}

TEST_CASE("adam matches a scalar reference and state survives a round trip") {
  auto spec = OptimizerSpec::defaults(OptimizerKind::Adam);
  auto w = Tensor<double>::full({1}, 1.0, true);
  ParamList<double> params{{"w", w}};
  Optimizer<double> opt(spec);
  double ref = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    w.zero_grad();
    auto loss = sum(mul(w, w));
    loss.backward();
    opt.step(params, 0.1);
    const double g = 2 * ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(w[0] == doctest::Approx(ref).epsilon(1e-12));
  }
  NamedTensorArchive a;
  opt.save(a);
  Optimizer<double> restored(spec);
  restored.load(a);
  CHECK(restored.steps() == 5);
  Tensor<double> w2({1}, {w[0]}, true);
  ParamList<double> p2{{"w", w2}};
  for (auto* pl : {&params, &p2}) {
    auto& x = (*pl)[0].second;
    x.zero_grad();
    sum(mul(x, x)).backward();
  }
  opt.step(params, 0.1);
  restored.step(p2, 0.1);
  CHECK(w[0] == w2[0]);
}

TEST_CASE("sgd with momentum and frozen parameters") {
  OptimizerSpec spec = OptimizerSpec::defaults(OptimizerKind::Sgd);
  auto w = Tensor<double>::full({2}, 1.0, true);
  auto frozen = Tensor<double>::full({2}, 1.0, false);
  ParamList<double> params{{"w", w}, {"f", frozen}};
  Optimizer<double> opt(spec);
  sum(add(w, frozen)).backward();
  opt.step(params, 0.5);
  CHECK(w[0] == 0.5);
  CHECK(frozen[0] == 1.0);
  opt.step(params, 0.5);
  // Velocity 0.9 * 1 + 1 = 1.9.
  CHECK(w[0] == doctest::Approx(0.5 - 0.95));
}
