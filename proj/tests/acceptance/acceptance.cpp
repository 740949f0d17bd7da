// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "s3f/archive.hpp"
#include "s3f/binvox.hpp"
#include "s3f/models.hpp"
#include "s3f/ops.hpp"
#include "s3f/optim.hpp"
#include "s3f/run.hpp"
#include "s3f/synthetic.hpp"
#include "s3f/transfer.hpp"
#include "support/common.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace s3f;
using s3f::testing::bit_equal;
using s3f::testing::check_gradients;
using s3f::testing::max_abs_diff;
using s3f::testing::Problem;
using s3f::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      else detail.str("");
      pass = false;
      detail << what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

BackboneConfig toy_backbone(std::size_t dim = 8, std::size_t depth = 2, std::size_t heads = 2) {
  BackboneConfig c;
  c.dim = dim;
  c.depth = depth;
  c.heads = heads;
  return c;
}

// ---------------------------------------------------------------------------
// Gradients

struct GradCase {
  std::string name;
  std::function<s3f::testing::GradReport(bool)> run;
};

template <typename Op>
auto unary_case(Op op, Shape shape, double lo, double hi, double min_abs = 0.0) {
  return [=]<typename T>() {
    auto x = random_tensor<T>(shape, 11, lo, hi);
    if (min_abs > 0)
      for (auto& v : x.mutable_data())
        if (std::abs(v) < min_abs) v = static_cast<T>(v < 0 ? -min_abs : min_abs);
    auto w = random_tensor<T>(op(x).shape(), 12);
    return Problem<T>{{{"x", x}}, [=] { return sum(mul(op(x), w)); }};
  };
}

template <typename Op>
auto binary_case(Op op, Shape sa, Shape sb) {
  return [=]<typename T>() {
    auto a = random_tensor<T>(sa, 21, 0.5, 1.5);
    auto b = random_tensor<T>(sb, 22, -1.5, 1.5);
    auto w = random_tensor<T>(op(a, b).shape(), 23);
    return Problem<T>{{{"a", a}, {"b", b}}, [=] { return sum(mul(op(a, b), w)); }};
  };
}

template <typename Build>
GradCase grad_case(std::string name, Build b) {
  return {std::move(name), [b](bool f32) { return check_gradients(b, f32); }};
}

std::vector<std::size_t> toy_labels(std::size_t n, std::size_t classes) {
  std::vector<std::size_t> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = (i * 7 + 3) % classes;
  return l;
}

// Initialization is deliberately small; spread the parameters out so every
// path carries a gradient well above finite-difference noise.
template <typename T>
ParamList<T> spread(ParamList<T> params, std::uint64_t seed) {
  RngStream rng(seed, 0x737072);
  for (auto& [name, t] : params)
    for (auto& v : t.mutable_data()) v += static_cast<T>(rng.uniform(-0.3, 0.3));
  return params;
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> c;
  c.push_back(grad_case("add", binary_case([](auto a, auto b) { return add(a, b); }, {3, 4}, {4})));
  c.push_back(grad_case("sub", binary_case([](auto a, auto b) { return sub(a, b); }, {2, 1, 4}, {3, 1})));
  c.push_back(grad_case("mul", binary_case([](auto a, auto b) { return mul(a, b); }, {3, 4}, {3, 1})));
  c.push_back(grad_case("scale", unary_case([](auto x) { return scale(x, std::remove_cvref_t<decltype(x[0])>(0.7)); }, {5}, -1, 1)));
  c.push_back(
      grad_case("add_scalar", unary_case([](auto x) { return add_scalar(x, std::remove_cvref_t<decltype(x[0])>(0.3)); }, {5}, -1, 1)));
  c.push_back(grad_case("relu", unary_case([](auto x) { return relu(x); }, {3, 4}, -1, 1, 0.05)));
  c.push_back(grad_case("gelu", unary_case([](auto x) { return gelu(x); }, {3, 4}, -3, 3)));
  c.push_back(grad_case("exp", unary_case([](auto x) { return exp(x); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("log", unary_case([](auto x) { return log(x); }, {3, 4}, 0.5, 2)));
  c.push_back(grad_case("clamp_min", unary_case([](auto x) { return clamp_min(x, std::remove_cvref_t<decltype(x[0])>(0)); }, {3, 4}, -1,
                                                1, 0.05)));
  c.push_back(grad_case("reshape", unary_case([](auto x) { return reshape(x, {4, 3}); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("permute", unary_case([](auto x) { return permute(x, {2, 0, 1}); }, {2, 3, 4}, -1, 1)));
  c.push_back(grad_case("transpose", unary_case([](auto x) { return transpose(x, 0, 2); }, {2, 3, 4}, -1, 1)));
  c.push_back(grad_case("broadcast_to", unary_case([](auto x) { return broadcast_to(x, {2, 3, 4}); }, {3, 1}, -1, 1)));
  c.push_back(grad_case("concat", binary_case([](auto a, auto b) { return concat(std::vector{a, b, a}, 1); },
                                              {2, 3}, {2, 2})));
  c.push_back(grad_case("slice", unary_case([](auto x) { return slice(x, 1, 1, 2); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("index_select", unary_case([](auto x) { return index_select(x, 0, {2, 0, 2, 1}); }, {3, 4},
                                                   -1, 1)));
  c.push_back(grad_case("take", unary_case([](auto x) { return take(x, {5, 0, 5, 11, 3, 3}, {2, 3}); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("sum", unary_case([](auto x) { return sum(x); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("mean", unary_case([](auto x) { return mean(x); }, {3, 4}, -1, 1)));
  c.push_back(grad_case("sum_axis", unary_case([](auto x) { return sum(x, 1, true); }, {2, 3, 4}, -1, 1)));
  c.push_back(grad_case("mean_axis", unary_case([](auto x) { return mean(x, -1); }, {2, 3, 4}, -1, 1)));
  c.push_back(grad_case("max_axis", unary_case([](auto x) { return max(x, 1); }, {3, 5}, -1, 1)));
  c.push_back(grad_case("matmul", binary_case([](auto a, auto b) { return matmul(a, b); }, {2, 3, 4}, {4, 5})));
  c.push_back(grad_case("linear", []<typename T>() {
    auto x = random_tensor<T>({2, 3, 4}, 31), w = random_tensor<T>({5, 4}, 32), b = random_tensor<T>({5}, 33);
    auto r = random_tensor<T>({2, 3, 5}, 34);
    return Problem<T>{{{"x", x}, {"weight", w}, {"bias", b}}, [=] { return sum(mul(linear(x, w, b), r)); }};
  }));
  c.push_back(grad_case("softmax", unary_case([](auto x) { return softmax(x, 0); }, {3, 4}, -2, 2)));
  c.push_back(grad_case("log_softmax", unary_case([](auto x) { return log_softmax(x); }, {3, 4}, -2, 2)));
  c.push_back(grad_case("layer_norm", []<typename T>() {
    auto x = random_tensor<T>({3, 8}, 41, -2, 2), g = random_tensor<T>({8}, 42, 0.5, 1.5);
    auto b = random_tensor<T>({8}, 43), r = random_tensor<T>({3, 8}, 44);
    return Problem<T>{{{"x", x}, {"gamma", g}, {"beta", b}}, [=] { return sum(mul(layer_norm(x, g, b), r)); }};
  }));
  c.push_back(grad_case("cross_entropy", []<typename T>() {
    auto x = random_tensor<T>({5, 3}, 51, -2, 2);
    return Problem<T>{{{"logits", x}}, [=] { return cross_entropy(x, toy_labels(5, 3)); }};
  }));
  c.push_back(grad_case("kl_divergence", []<typename T>() {
    auto p = softmax(random_tensor<T>({3, 5}, 61, -2, 2));
    auto z = random_tensor<T>({3, 5}, 62, -2, 2);
    return Problem<T>{{{"student_logits", z}}, [=] { return kl_divergence(p, softmax(z)); }};
  }));
  c.push_back(grad_case("attention", []<typename T>() {
    RngStream rng(71);
    auto p = AttentionParams<T>::init(8, rng);
    auto z = random_tensor<T>({2, 5, 8}, 72);
    auto r = random_tensor<T>({2, 5, 8}, 73);
    return Problem<T>{{{"z", z}, {"q", p.q.weight}, {"k", p.k.weight}, {"v", p.v.weight}, {"out", p.out.weight}},
                      [=] { return sum(mul(multi_head_self_attention(z, p, 2), r)); }};
  }));
  c.push_back(grad_case("transformer_block", []<typename T>() {
    RngStream rng(81);
    auto p = BlockParams<T>::init(8, 4, rng);
    auto z = random_tensor<T>({2, 4, 8}, 82);
    auto r = random_tensor<T>({2, 4, 8}, 83);
    ParamList<T> in{{"z", z}};
    p.collect("block", in);
    return Problem<T>{spread(in, 84), [=] { return sum(mul(transformer_block(z, p, 2), r)); }};
  }));
  for (auto scheme : {VoxelScheme::Naive, VoxelScheme::Projection, VoxelScheme::Group}) {
    c.push_back(grad_case("voxel classifier (" + to_string(scheme) + ")", [scheme]<typename T>() {
      RngStream rng(91);
      VoxelTokenizerConfig tok;
      tok.scheme = scheme;
      tok.cell = 2;
      tok.dim = 8;
      tok.group_heads = 2;
      auto m = VoxelClassifier<T>::init(toy_backbone(), tok, {4, 4, 4}, 3, rng);
      auto grids = random_tensor<T>({3, 4, 4, 4, 1}, 92, 0, 1);
      return Problem<T>{spread(m.params(), 93), [=] { return cross_entropy(m.forward(grids), toy_labels(3, 3)); }};
    }));
  }
  c.push_back(grad_case("point segmentation", []<typename T>() {
    RngStream rng(101);
    PointPipelineConfig cfg;
    cfg.dim = 8;
    cfg.channels = 2;
    cfg.k = 4;
    cfg.classes = 3;
    auto m = PointModel<T>::init(toy_backbone(), cfg, rng);
    std::vector<PointCloud<T>> clouds{{random_tensor<T>({16, 3}, 102), random_tensor<T>({16, 2}, 103)},
                                      {random_tensor<T>({16, 3}, 104), random_tensor<T>({16, 2}, 105)}};
    return Problem<T>{spread(m.params(), 106), [=] { return cross_entropy(m.forward(clouds), toy_labels(32, 3)); }};
  }));
  c.push_back(grad_case("retention objective", []<typename T>() {
    RngStream rng(111);
    auto teacher = Vit2D<T>::init(toy_backbone(), 8, 4, 3, 4, rng);
    ParamList<T> tp;
    teacher.collect(tp);
    spread(tp, 114);
    auto bundle = TeacherBundle<T>::freeze(teacher, 0.1, 2);
    auto student = Backbone<T>::init(toy_backbone(), rng);
    auto images = random_tensor<T>({2, 8, 8, 3}, 112, 0, 1);
    ParamList<T> in;
    for (std::size_t i = 0; i < student.blocks.size(); ++i) student.blocks[i].collect("blocks." + std::to_string(i), in);
    return Problem<T>{spread(in, 113), [=] {
                        return retention_kl(bundle, std::span<const BlockParams<T>>(student.blocks), images);
                      }};
  }));
  return c;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst32 = 0, worst64 = 0;
  std::size_t checked = 0;
  const auto cases = gradient_cases();
  for (const auto& gc : cases) {
    const auto r64 = gc.run(false);
    const auto r32 = gc.run(true);
    checked += r64.checked;
    worst64 = std::max(worst64, r64.max_rel);
    worst32 = std::max(worst32, r32.max_rel);
    o.require(r64.max_rel <= 1e-6, gc.name + " f64 rel " + std::to_string(r64.max_rel) + " at " + r64.worst);
    o.require(r32.max_rel <= 1e-4, gc.name + " f32 rel " + std::to_string(r32.max_rel) + " at " + r32.worst);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60, "took " + std::to_string(secs) + " s");
  if (o.pass)
    o.detail << cases.size() << " cases, " << checked << " coordinates; worst rel f64 " << worst64 << ", f32 "
             << worst32;
  return o;
}

// ---------------------------------------------------------------------------
// Voxel tokenizer

VoxelTokenizerConfig tok_cfg(VoxelScheme s, AxisOrdering ord, std::size_t t) {
  VoxelTokenizerConfig c;
  c.scheme = s;
  c.ordering = ord;
  c.cell = t;
  c.dim = 4;
  c.group_heads = 2;
  return c;
}

Outcome tokenizer_laws() {
  Outcome o;
  std::size_t sweep = 0;
  RngStream rng(5);
  // Sequence lengths.
  for (std::size_t t : {1, 2, 3, 4})
    for (std::size_t h : {1, 2, 3})
      for (std::size_t w : {1, 2})
        for (std::size_t z : {1, 3}) {
          const std::size_t H = h * t, W = w * t, Z = z * t;
          auto grids = random_tensor<double>({1, H, W, Z, 1}, 1000 + sweep, 0, 1);
          for (auto s : {VoxelScheme::Naive, VoxelScheme::Projection, VoxelScheme::Group}) {
            const auto cfg = tok_cfg(s, AxisOrdering::XYZ, t);
            const std::size_t expect = s == VoxelScheme::Naive ? 1 + H * W * Z / (t * t * t) : 1 + H * W / (t * t);
            const auto p = VoxelTokenizerParams<double>::init(cfg, H, W, Z, rng);
            const auto len = tokenize_voxels(grids, cfg, p).length();
            o.require(len == expect, "length " + std::to_string(len) + " != " + std::to_string(expect) + " for " +
                                         to_string(s) + " " + std::to_string(H) + "x" + std::to_string(W) + "x" +
                                         std::to_string(Z) + " T" + std::to_string(t));
            o.require(token_count(cfg, H, W, Z) + 1 == expect, "token_count disagrees");
            ++sweep;
          }
        }

  const std::size_t t = 2, H = 4, W = 6, Z = 8;
  auto grids = random_tensor<double>({2, H, W, Z, 1}, 7, 0, 1);

  // Projection is invariant to reordering whole cubes along the column.
  {
    const auto cfg = tok_cfg(VoxelScheme::Projection, AxisOrdering::XYZ, t);
    const auto p = VoxelTokenizerParams<double>::init(cfg, H, W, Z, rng);
    const std::vector<std::size_t> block_perm{2, 0, 3, 1};
    std::vector<std::size_t> zidx;
    for (std::size_t b : block_perm)
      for (std::size_t i = 0; i < t; ++i) zidx.push_back(b * t + i);
    const auto shuffled = index_select(grids, 3, zidx);
    const double diff = max_abs_diff(tokenize_voxels(grids, cfg, p).tokens.data(),
                                     tokenize_voxels(shuffled, cfg, p).tokens.data());
    o.require(diff <= 1e-12, "projection changed under column block permutation by " + std::to_string(diff));
  }

  // Projection tokens are column means of naive tokens with a shared embedding.
  {
    auto ncfg = tok_cfg(VoxelScheme::Naive, AxisOrdering::XYZ, t);
    auto pcfg = tok_cfg(VoxelScheme::Projection, AxisOrdering::XYZ, t);
    auto np = VoxelTokenizerParams<double>::init(ncfg, H, W, Z, rng);
    auto pp = VoxelTokenizerParams<double>::init(pcfg, H, W, Z, rng);
    pp.embed_weight = np.embed_weight;
    pp.embed_bias = np.embed_bias;
    pp.cls_token = np.cls_token;
    np.pos_embed = Tensor<double>::zeros(np.pos_embed.shape());
    pp.pos_embed = Tensor<double>::zeros(pp.pos_embed.shape());
    const auto naive = tokenize_voxels(grids, ncfg, np).tokens;
    const auto proj = tokenize_voxels(grids, pcfg, pp).tokens;
    const std::size_t cols = (H / t) * (W / t), depth = Z / t, d = 4;
    double diff = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t k = 0; k < d; ++k) {
          double m = 0;
          for (std::size_t j = 0; j < depth; ++j) m += naive[(b * (1 + cols * depth) + 1 + c * depth + j) * d + k];
          m /= static_cast<double>(depth);
          diff = std::max(diff, std::abs(m - proj[(b * (1 + cols) + 1 + c) * d + k]));
        }
    o.require(diff <= 1e-12, "projection differs from averaged naive tokens by " + std::to_string(diff));
  }

  // Each axis ordering equals XYZ applied to the explicitly permuted grid.
  // Naive keeps every cube, so it ignores the ordering.
  for (auto s : {VoxelScheme::Naive, VoxelScheme::Projection, VoxelScheme::Group})
    for (auto [ord, perm] : {std::pair{AxisOrdering::YZX, std::vector<std::size_t>{0, 2, 3, 1, 4}},
                             std::pair{AxisOrdering::ZXY, std::vector<std::size_t>{0, 3, 1, 2, 4}}}) {
      const auto cfg = tok_cfg(s, ord, t);
      const auto base = tok_cfg(s, AxisOrdering::XYZ, t);
      const auto moved = s == VoxelScheme::Naive ? grids : permute(grids, perm);
      const auto p = VoxelTokenizerParams<double>::init(cfg, H, W, Z, rng);
      const auto a = tokenize_voxels(grids, cfg, p).tokens;
      const auto b = tokenize_voxels(moved, base, p).tokens;
      o.require(bit_equal(a.data(), b.data()),
                to_string(s) + " " + to_string(ord) + " is not XYZ on the permuted grid");
    }
  if (o.pass) o.detail << sweep << " length cases, permutation, averaging and ordering identities exact";
  return o;
}

// ---------------------------------------------------------------------------
// Point pipeline

Outcome oracle_suite() {
  Outcome o;
  RngStream rng(17);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(31), m = 1 + rng.below(n), k = 1 + rng.below(n);
    std::vector<double> xyz(n * 3);
    // Every other instance sits on a coarse lattice so ties are common.
    for (auto& v : xyz) v = inst % 2 ? static_cast<double>(rng.below(3)) : rng.uniform(-1, 1);
    const std::size_t q = 1 + rng.below(8);
    std::vector<double> query(q * 3);
    for (auto& v : query) v = inst % 2 ? static_cast<double>(rng.below(3)) : rng.uniform(-1, 1);
    o.require(farthest_point_sample<double>(xyz, m) == s3f::testing::fps_oracle(xyz, m),
              "fps mismatch on instance " + std::to_string(inst));
    o.require(knn<double>(query, xyz, k) == s3f::testing::knn_oracle(query, xyz, k),
              "knn mismatch on instance " + std::to_string(inst));
  }

  double tu = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t coarse = 3 + rng.below(10), fine = 4 + rng.below(28);
    auto cref = random_tensor({2 * coarse, 3}, 200 + inst), fq = random_tensor({2 * fine, 3}, 300 + inst);
    // Per-cloud weights, laid out back to back.
    IdwWeights<double> w;
    w.k = 3;
    for (std::size_t b = 0; b < 2; ++b) {
      auto part = idw_weights<double>(std::span<const double>(fq.data()).subspan(b * fine * 3, fine * 3),
                                      std::span<const double>(cref.data()).subspan(b * coarse * 3, coarse * 3));
      w.index.insert(w.index.end(), part.index.begin(), part.index.end());
      w.weight.insert(w.weight.end(), part.weight.begin(), part.weight.end());
    }
    const double c = rng.uniform(-5, 5);
    auto out = interpolate(Tensor<double>::full({2 * coarse, 6}, c), w, 2, coarse);
    for (double v : out.data()) tu = std::max(tu, std::abs(v - c));
  }
  o.require(tu <= 1e-6, "constant field moved by " + std::to_string(tu));

  for (std::size_t n : {16, 33, 64, 100, 128}) {
    PointPipelineConfig cfg;
    cfg.dim = 16;
    cfg.channels = 4;
    cfg.k = 4;
    auto p = PointPipelineParams<double>::init(cfg, rng);
    std::vector<PointCloud<double>> clouds{{random_tensor({n, 3}, n), random_tensor({n, 4}, n + 1)},
                                           {random_tensor({n, 3}, n + 2), random_tensor({n, 4}, n + 3)}};
    const auto toks = tokenize_pointcloud(clouds, cfg, p);
    const std::size_t n0 = (n + 3) / 4, n1 = (n0 + 3) / 4;
    o.require(toks.level0.count == n0 && toks.level1.count == n1, "TD counts wrong for N=" + std::to_string(n));
    o.require(toks.input.feats.dim(1) == 4 && toks.level0.feats.dim(1) == 8 && toks.level1.feats.dim(1) == 16,
              "TD widths wrong for N=" + std::to_string(n));
    o.require(toks.tokens.tokens.shape() == Shape{2, 1 + n1, 16}, "token shape wrong for N=" + std::to_string(n));
  }
  if (o.pass) o.detail << "100 fps/knn instances exact, constant field error " << tu << ", TD ladder exact";
  return o;
}

// ---------------------------------------------------------------------------
// Retention objective

struct ToyRetention {
  Vit2D<double> source;
  TeacherBundle<double> bundle;
  VoxelClassifier<double> student;
  Tensor<double> grids;
  std::vector<std::size_t> labels;
  Tensor<double> images;
};

ToyRetention toy_retention(double lambda) {
  RngStream rng(23);
  auto source = Vit2D<double>::init(toy_backbone(), 8, 4, 3, 4, rng);
  auto bundle = TeacherBundle<double>::freeze(source, lambda, 2);
  VoxelTokenizerConfig tok;
  tok.cell = 2;
  tok.dim = 8;
  auto student = VoxelClassifier<double>::init(toy_backbone(), tok, {4, 4, 4}, 2, rng);
  return {source, bundle, student, random_tensor({4, 4, 4, 4, 1}, 24, 0, 1), toy_labels(4, 2),
          random_tensor({2, 8, 8, 3}, 25, 0, 1)};
}

Outcome kl_laws() {
  Outcome o;
  RngStream rng(29);
  double self = 0, min_kl = INFINITY;
  for (int i = 0; i < 50; ++i) {
    auto p = softmax(random_tensor({4, 7}, 400 + i, -4, 4)), q = softmax(random_tensor({4, 7}, 500 + i, -4, 4));
    self = std::max(self, std::abs(kl_divergence(p, p).item()));
    min_kl = std::min(min_kl, kl_divergence(p, q).item());
  }
  o.require(self == 0.0, "KL(p||p) = " + std::to_string(self));
  o.require(min_kl >= 0.0, "negative KL " + std::to_string(min_kl));

  // lambda = 0 reduces to the task loss: same loss bits and same trajectory.
  {
    auto with = toy_retention(0.0), without = toy_retention(0.0);
    Optimizer<double> oa(OptimizerSpec::defaults(OptimizerKind::Adam)), ob(oa.spec());
    const auto pa = with.student.params(), pb = without.student.params();
    bool same_loss = true;
    for (int step = 0; step < 20; ++step) {
      auto ta = cross_entropy(with.student.forward(with.grids), with.labels);
      auto total = combined_loss(ta, with.bundle, std::span<const BlockParams<double>>(with.student.backbone.blocks),
                                 with.images)
                       .total;
      auto tb = cross_entropy(without.student.forward(without.grids), without.labels);
      same_loss = same_loss && total.item() == tb.item();
      for (auto* ps : {&pa, &pb})
        for (const auto& [n, t] : *ps) Tensor<double>(t).zero_grad();
      total.backward();
      tb.backward();
      oa.step(pa, 1e-3);
      ob.step(pb, 1e-3);
    }
    bool same_params = true;
    for (std::size_t i = 0; i < pa.size(); ++i) same_params = same_params && bit_equal(pa[i].second.data(), pb[i].second.data());
    o.require(same_loss && same_params, "lambda = 0 run differs from the task-only run");
  }

  // Teacher weights are untouched by 100 optimizer steps.
  {
    auto r = toy_retention(0.1);
    ParamList<double> teacher;
    r.bundle.teacher.collect(teacher);
    std::vector<std::vector<double>> before;
    for (const auto& [n, t] : teacher) before.emplace_back(t.data().begin(), t.data().end());
    auto params = r.student.params();
    // Teacher tensors go to the optimizer too; freezing must hold regardless.
    params.insert(params.end(), teacher.begin(), teacher.end());
    Optimizer<double> opt(OptimizerSpec::defaults(OptimizerKind::Adam));
    bool kl_moved = false;
    for (int step = 0; step < 100; ++step) {
      auto task = cross_entropy(r.student.forward(r.grids), r.labels);
      auto out =
          combined_loss(task, r.bundle, std::span<const BlockParams<double>>(r.student.backbone.blocks), r.images);
      kl_moved = kl_moved || out.kl.item() > 0;
      for (const auto& [n, t] : params) Tensor<double>(t).zero_grad();
      out.total.backward();
      opt.step(params, 1e-3);
    }
    bool frozen = kl_moved;
    for (std::size_t i = 0; i < teacher.size(); ++i)
      frozen = frozen && bit_equal<double>(teacher[i].second.data(), before[i]) && !teacher[i].second.has_grad();
    o.require(frozen, "teacher changed during training");
  }

  // Student blocks identical to the teacher's give a zero retention term.
  {
    auto r = toy_retention(0.1);
    const double kl =
        retention_kl(r.bundle, std::span<const BlockParams<double>>(r.bundle.teacher.backbone.blocks), r.images).item();
    o.require(kl == 0.0, "KL with teacher blocks = " + std::to_string(kl));
  }
  if (o.pass) o.detail << "KL(p||p)=0, min KL " << min_kl << ", lambda=0 bit-exact, teacher bit-frozen over 100 steps";
  return o;
}

// ---------------------------------------------------------------------------
// Overfitting

struct OverfitRun {
  std::string name;
  RunConfig cfg;
  double target;
  std::size_t budget;
};

std::vector<OverfitRun> overfit_runs(const std::filesystem::path& root) {
  std::vector<OverfitRun> runs;
  for (const char* scheme : {"naive", "projection", "group"}) {
    RunConfig c;
    c.task = Task::ClsVoxel;
    c.scheme = scheme;
    c.backbone = "nano";
    c.resolution = 16;
    c.T = 4;
    c.samples_per_class = 64;
    c.batch = 16;
    c.lr = 4e-3;
    c.warmup_steps = 20;
    c.clip_norm = 1;
    c.epochs = 1000;
    c.max_steps = 300;
    c.eval_every = 8;
    c.stop_at_accuracy = 95;
    c.seed = 1;
    c.quiet = true;
    c.out = (root / scheme).string();
    runs.push_back({std::string("voxel ") + scheme, c, 95, 300});
  }
  RunConfig s;
  s.task = Task::SegPoint;
  s.backbone = "nano";
  s.points = 256;
  s.k = 16;
  s.samples_per_class = 16;
  s.batch = 8;
  s.lr = 4e-3;
  s.warmup_steps = 20;
  s.clip_norm = 1;
  s.epochs = 1000;
  s.max_steps = 500;
  s.eval_every = 10;
  s.stop_at_accuracy = 90;
  s.seed = 1;
  s.quiet = true;
  s.out = (root / "seg").string();
  runs.push_back({"point segmentation", s, 90, 500});
  return runs;
}

Outcome overfit() {
  Outcome o;
  const auto root = s3f::testing::temp_dir("acceptance_overfit");
  std::ostringstream summary;
  for (const auto& run : overfit_runs(root)) {
    const auto t0 = Clock::now();
    const auto r = train(run.cfg, Precision::F32);
    const double secs = seconds_since(t0);
    double best = 0;
    std::size_t at = 0;
    for (const auto& [step, acc] : r.train_accuracy)
      if (step <= run.budget && acc > best) best = acc, at = step;
    o.require(best >= run.target, run.name + " reached only " + std::to_string(best) + "%");
    if (run.cfg.task == Task::ClsVoxel) o.require(secs < 300, run.name + " took " + std::to_string(secs) + " s");
    summary << (summary.tellp() > 0 ? "; " : "") << run.name << " " << best << "% at step " << at << " ("
            << static_cast<int>(secs) << " s)";
  }
  if (o.pass) o.detail << summary.str();
  return o;
}

// ---------------------------------------------------------------------------
// Retention effect

double retention_run(std::uint64_t seed, double lambda, std::size_t steps) {
  RngStream rng(seed, 0x726574);
  const auto bb = toy_backbone(16, 2, 2);
  const auto source = Vit2D<float>::init(bb, 16, 4, 3, 10, rng);
  const auto bundle = TeacherBundle<float>::freeze(source, lambda, 4);
  NamedTensorArchive archive;
  ParamList<float> sp;
  source.collect(sp);
  archive.put_all(sp);

  VoxelTokenizerConfig tok;
  tok.cell = 4;
  tok.dim = 16;
  auto student = VoxelClassifier<float>::init(bb, tok, {16, 16, 16}, 2, rng);
  load_pretrained(archive, student);

  // Spheres vs cubes, and a pool of random images for the 2D path.
  std::vector<float> grid_data;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 32; ++i) {
    SyntheticSpec s{i % 2 ? ShapeKind::Cube : ShapeKind::Sphere, 16, 0, 1.0, seed * 1000 + i};
    const auto g = make_voxels<float>(s);
    grid_data.insert(grid_data.end(), g.values.data().begin(), g.values.data().end());
    labels.push_back(i % 2);
  }
  const Tensor<float> grids({32, 16, 16, 16, 1}, std::move(grid_data));
  const auto pool = random_tensor<float>({64, 16, 16, 3}, seed + 77, 0, 1);
  const auto probe = random_tensor<float>({16, 16, 16, 3}, seed + 78, 0, 1);

  const auto params = student.params();
  Optimizer<float> opt(OptimizerSpec::defaults(OptimizerKind::Adam));
  RngStream pick(seed, 0x7069636b);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> bi, ii;
    for (int j = 0; j < 8; ++j) bi.push_back(pick.below(32));
    for (int j = 0; j < 4; ++j) ii.push_back(pick.below(64));
    std::vector<std::size_t> lb;
    for (auto i : bi) lb.push_back(labels[i]);
    auto task = cross_entropy(student.forward(index_select(grids, 0, bi)), lb);
    auto out = combined_loss(task, bundle, std::span<const BlockParams<float>>(student.backbone.blocks),
                             index_select(pool, 0, ii));
    for (const auto& [n, t] : params) Tensor<float>(t).zero_grad();
    out.total.backward();
    opt.step(params, 1e-3);
  }
  NoGradGuard guard;
  auto probe_bundle = bundle;
  probe_bundle.kl_mean = true;
  return retention_kl(probe_bundle, std::span<const BlockParams<float>>(student.backbone.blocks), probe).item();
}

Outcome retention_effect() {
  Outcome o;
  int wins = 0;
  std::ostringstream pairs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double with = retention_run(seed, 0.1, 500), without = retention_run(seed, 0.0, 500);
    wins += with < without;
    pairs << (seed > 1 ? ", " : "") << with << " vs " << without;
  }
  o.require(wins >= 4, "retention won only " + std::to_string(wins) + "/5 seeds: " + pairs.str());
  if (o.pass) o.detail << wins << "/5 seeds; KL lambda=0.1 vs 0: " << pairs.str();
  return o;
}

// ---------------------------------------------------------------------------
// Formats

Outcome formats() {
  Outcome o;
  RngStream rng(31);
  std::size_t files = 0;
  for (int i = 0; i < 300; ++i) {
    BinvoxFile f;
    f.dim = 1 + rng.below(40);
    f.translate = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    f.scale = rng.uniform(0.01, 10);
    // Mix of dense noise and long runs.
    const double p = rng.uniform();
    const std::size_t run = 1 + rng.below(600);
    std::uint8_t cur = 0;
    for (std::size_t j = 0; j < f.dim * f.dim * f.dim; ++j) {
      if (i % 2 ? rng.uniform() < p : j % run == 0) cur = i % 2 ? 1 : static_cast<std::uint8_t>(rng.below(2));
      f.voxels.push_back(i % 2 ? static_cast<std::uint8_t>(rng.uniform() < p) : cur);
    }
    const auto bytes = encode_binvox(f);
    const auto g = decode_binvox(bytes);
    const bool ok = g.dim == f.dim && g.voxels == f.voxels && g.translate == f.translate && g.scale == f.scale &&
                    encode_binvox(g) == bytes;
    o.require(ok, "binvox round trip failed for file " + std::to_string(i));
    ++files;
  }

  const auto dir = s3f::testing::temp_dir("acceptance_archive");
  for (int i = 0; i < 50; ++i) {
    NamedTensorArchive a;
    const std::size_t n = 1 + rng.below(6);
    for (std::size_t j = 0; j < n; ++j) {
      Shape s;
      for (std::size_t r = rng.below(4); r > 0; --r) s.push_back(rng.below(5));
      const std::string name = "t" + std::to_string(rng.below(1000)) + ".w";
      if (rng.below(2))
        a.put(name, random_tensor<float>(s, rng.next_u64(), -1e6, 1e6));
      else
        a.put(name, random_tensor<double>(s, rng.next_u64(), -1e-6, 1e-6));
    }
    a.metadata()["k" + std::to_string(i)] = "value \"" + std::to_string(i) + "\"";
    const auto bytes = a.serialize();
    a.save(dir / "a.nta");
    const auto b = NamedTensorArchive::load(dir / "a.nta");
    bool same = b.serialize() == bytes && b.names() == a.names() && b.metadata() == a.metadata();
    for (const auto& name : a.names())
      same = same && b.entry(name).bytes == a.entry(name).bytes && b.entry(name).shape == a.entry(name).shape &&
             b.entry(name).dtype == a.entry(name).dtype;
    o.require(same, "archive round trip failed for archive " + std::to_string(i));
  }

  for (double c : {0.1, -3.75, 1e-7, 12345.678}) {
    auto pos = Tensor<double>::full({1, 1 + 14 * 14, 6}, c);
    auto out = resample_pos_embed(pos, 8, 8);
    bool ok = out.shape() == Shape{1, 65, 6};
    for (double v : out.data()) ok = ok && v == c;
    auto pos32 = Tensor<float>::full({1, 1 + 14 * 14, 6}, static_cast<float>(c));
    const auto out32 = resample_pos_embed(pos32, 8, 8);
    for (float v : out32.data()) ok = ok && v == static_cast<float>(c);
    o.require(ok, "constant positional table changed under 14x14 -> 8x8 resampling");
  }
  if (o.pass) o.detail << files << " binvox files and 50 archives bit-exact; 14x14 -> 8x8 constant fields exact";
  return o;
}

}  // namespace

// Optional arguments select criteria by substring.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},   {"tokenizer laws", tokenizer_laws}, {"point oracles", oracle_suite},
      {"retention objective laws", kl_laws}, {"overfit runs", overfit},         {"retention effect", retention_effect},
      {"formats", formats},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    bool selected = argc == 1;
    for (int i = 1; i < argc; ++i) selected = selected || name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail.str(std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s  %-26s %6.1f s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  if (argc == 1) std::printf("SKIP  %-26s %6.1f s  %s\n", "converter parity", 0.0, "needs the optional Python converter");
  return failed ? 1 : 0;
}
