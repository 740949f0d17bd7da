// SPDX-License-Identifier: Apache-2.0
#include "s3f/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace s3f {

template <typename T>
void PointCloud<T>::validate() const {
  check(coords.rank() == 2 && coords.dim(1) == 3, "pointcloud", "coords must be (N, 3), got " + shape_str(coords.shape()));
  check(coords.dim(0) >= 1, "pointcloud", "empty point cloud");
  check(feats.rank() == 2 && feats.dim(0) == coords.dim(0), "pointcloud",
        "feature rows " + shape_str(feats.shape()) + " do not align with " + std::to_string(coords.dim(0)) + " points");
  for (T v : coords.data()) check(std::isfinite(v), "pointcloud", "non-finite coordinate");
}

namespace {

template <typename T>
T sq_dist(const T* a, const T* b) {
  const T dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

template <typename T>
std::vector<std::size_t> fps_from(std::span<const T> xyz, std::size_t m, std::size_t start) {
  const std::size_t n = xyz.size() / 3;
  std::vector<std::size_t> out;
  out.reserve(m);
  std::vector<T> mind(n, std::numeric_limits<T>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t cur = start;
  for (std::size_t it = 0; it < m; ++it) {
    out.push_back(cur);
    taken[cur] = 1;
    const T* c = xyz.data() + cur * 3;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      const T d = sq_dist(xyz.data() + i * 3, c);
      if (d < mind[i]) mind[i] = d;
      if (!taken[i] && (best == n || mind[i] > mind[best])) best = i;
    }
    cur = best;
  }
  return out;
}

void check_fps_args(std::size_t n, std::size_t m) {
  check(n >= 1, "farthest_point_sample", "empty point set");
  check(m >= 1, "farthest_point_sample", "must select at least one point");
  check(m <= n, "farthest_point_sample",
        "cannot select " + std::to_string(m) + " of " + std::to_string(n) + " points");
}

}  // namespace

template <typename T>
std::vector<std::size_t> farthest_point_sample(std::span<const T> xyz, std::size_t m) {
  check(xyz.size() % 3 == 0, "farthest_point_sample", "coordinates must be N x 3");
  check_fps_args(xyz.size() / 3, m);
  return fps_from(xyz, m, 0);
}

template <typename T>
std::vector<std::size_t> farthest_point_sample(std::span<const T> xyz, std::size_t m, RngStream& rng) {
  check(xyz.size() % 3 == 0, "farthest_point_sample", "coordinates must be N x 3");
  check_fps_args(xyz.size() / 3, m);
  return fps_from(xyz, m, static_cast<std::size_t>(rng.below(xyz.size() / 3)));
}

template <typename T>
std::vector<std::size_t> knn(std::span<const T> query, std::span<const T> ref, std::size_t k) {
  check(query.size() % 3 == 0 && ref.size() % 3 == 0, "knn", "coordinates must be rows of 3");
  const std::size_t m = query.size() / 3, n = ref.size() / 3;
  check(k >= 1, "knn", "k must be positive");
  check(k <= n, "knn", "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " reference points");
  std::vector<std::size_t> out(m * k);
  std::vector<std::pair<T, std::size_t>> d(n);
  for (std::size_t q = 0; q < m; ++q) {
    const T* qp = query.data() + q * 3;
    for (std::size_t i = 0; i < n; ++i) d[i] = {sq_dist(ref.data() + i * 3, qp), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t j = 0; j < k; ++j) out[q * k + j] = d[j].second;
  }
  return out;
}

template <typename T>
IdwWeights<T> idw_weights(std::span<const T> query, std::span<const T> ref, std::size_t k) {
  const std::size_t n = ref.size() / 3;
  check(n >= 1, "transition_up", "empty coarse point set");
  IdwWeights<T> w;
  w.k = std::min(k, n);
  w.index = knn(query, ref, w.k);
  w.weight.resize(w.index.size());
  const std::size_t m = query.size() / 3;
  for (std::size_t q = 0; q < m; ++q) {
    const T* qp = query.data() + q * 3;
    T* wr = w.weight.data() + q * w.k;
    const std::size_t* ir = w.index.data() + q * w.k;
    if (sq_dist(ref.data() + ir[0] * 3, qp) == T(0)) {
      std::fill(wr, wr + w.k, T(0));
      wr[0] = T(1);
      continue;
    }
    T total = T(0);
    for (std::size_t j = 0; j < w.k; ++j) {
      wr[j] = T(1) / std::sqrt(sq_dist(ref.data() + ir[j] * 3, qp));
      total += wr[j];
    }
    for (std::size_t j = 0; j < w.k; ++j) wr[j] /= total;
  }
  return w;
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& feats, const IdwWeights<T>& w, std::size_t batch, std::size_t ref_per_cloud) {
  check(feats.rank() == 2 && feats.dim(0) == batch * ref_per_cloud, "interpolate",
        "features " + shape_str(feats.shape()) + " do not match " + std::to_string(batch) + " clouds of " +
            std::to_string(ref_per_cloud) + " points");
  check(w.k > 0 && w.weight.size() == w.index.size(), "interpolate", "malformed interpolation weights");
  const std::size_t rows = w.index.size() / w.k;
  check(rows % batch == 0, "interpolate", "query rows do not split evenly over the batch");
  const std::size_t per_cloud = rows / batch, c = feats.dim(1);
  std::vector<std::size_t> global(w.index.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w.k; ++j) global[r * w.k + j] = (r / per_cloud) * ref_per_cloud + w.index[r * w.k + j];
  auto gathered = reshape(index_select(feats, 0, global), {rows, w.k, c});
  Tensor<T> weights({rows, w.k, 1}, w.weight);
  return sum(mul(gathered, weights), 1);
}

template <typename T>
TransitionDownParams<T> TransitionDownParams<T>::init(std::size_t in, std::size_t out, RngStream& rng) {
  return {Mlp2<T>::init(in + 3, out, out, rng)};
}

template <typename T>
void TransitionDownParams<T>::collect(const std::string& prefix, ParamList<T>& list) const {
  mlp.collect(prefix, list);
}

template <typename T>
TransitionUpParams<T> TransitionUpParams<T>::init(std::size_t coarse_width, std::size_t fine_width, RngStream& rng) {
  return {Linear<T>::init(coarse_width, fine_width, std::sqrt(2.0 / static_cast<double>(coarse_width)), rng),
          Linear<T>::init(fine_width, fine_width, std::sqrt(2.0 / static_cast<double>(fine_width)), rng)};
}

template <typename T>
void TransitionUpParams<T>::collect(const std::string& prefix, ParamList<T>& list) const {
  coarse.collect(prefix + ".coarse", list);
  fine.collect(prefix + ".fine", list);
}

template <typename T>
PointLevel<T> transition_down(const PointLevel<T>& in, const TransitionDownParams<T>& p, std::size_t centers,
                              std::size_t k) {
  check(in.count >= 4, "transition_down", "needs at least 4 points, got " + std::to_string(in.count));
  check(k <= in.count, "transition_down",
        "k = " + std::to_string(k) + " exceeds " + std::to_string(in.count) + " points");
  check(in.feats.rank() == 2 && in.feats.dim(1) == p.in_width(), "transition_down",
        "feature width " + std::to_string(in.feats.dim(-1)) + " does not match layer input " + std::to_string(p.in_width()));
  PointLevel<T> out;
  out.batch = in.batch;
  out.count = centers;
  out.coords.reserve(in.batch * centers * 3);
  std::vector<std::size_t> gather;
  gather.reserve(in.batch * centers * k);
  std::vector<T> rel;
  rel.reserve(in.batch * centers * k * 3);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const auto xyz = in.cloud_coords(b);
    const auto chosen = farthest_point_sample(xyz, centers);
    std::vector<T> cxyz;
    cxyz.reserve(centers * 3);
    for (std::size_t c : chosen) cxyz.insert(cxyz.end(), xyz.begin() + c * 3, xyz.begin() + c * 3 + 3);
    const auto nbr = knn<T>(cxyz, xyz, k);
    for (std::size_t c = 0; c < centers; ++c)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = nbr[c * k + j];
        gather.push_back(b * in.count + i);
        for (std::size_t a = 0; a < 3; ++a) rel.push_back(xyz[i * 3 + a] - cxyz[c * 3 + a]);
      }
    out.coords.insert(out.coords.end(), cxyz.begin(), cxyz.end());
  }
  const std::size_t rows = in.batch * centers * k;
  Tensor<T> offsets({rows, 3}, std::move(rel));
  auto grouped = concat<T>({offsets, index_select(in.feats, 0, gather)}, 1);
  auto h = relu(p.mlp.fc2(relu(p.mlp.fc1(grouped))));
  out.feats = max(reshape(h, {in.batch * centers, k, p.out_width()}), 1);
  return out;
}

template <typename T>
Tensor<T> transition_up(const PointLevel<T>& coarse, const PointLevel<T>& fine, const TransitionUpParams<T>& p) {
  check(coarse.count >= 1, "transition_up", "empty coarse point set");
  check(coarse.batch == fine.batch, "transition_up", "batch sizes differ");
  const std::size_t c_coarse = coarse.feats.dim(1), c_fine = fine.feats.dim(1);
  check(c_coarse == 2 * c_fine, "transition_up",
        "coarse width " + std::to_string(c_coarse) + " is not twice the fine width " + std::to_string(c_fine));
  check(p.coarse.in_features() == c_coarse && p.coarse.out_features() == c_fine && p.fine.in_features() == c_fine,
        "transition_up", "layer widths do not match the point features");
  IdwWeights<T> w;
  for (std::size_t b = 0; b < coarse.batch; ++b) {
    auto wb = idw_weights(fine.cloud_coords(b), coarse.cloud_coords(b), 3);
    w.k = wb.k;
    w.index.insert(w.index.end(), wb.index.begin(), wb.index.end());
    w.weight.insert(w.weight.end(), wb.weight.begin(), wb.weight.end());
  }
  auto up = interpolate(relu(p.coarse(coarse.feats)), w, coarse.batch, coarse.count);
  return add(up, relu(p.fine(fine.feats)));
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "inner") return FusionMode::Inner;
  if (s == "outer") return FusionMode::Outer;
  throw Error("pointcloud", "unknown fusion '" + s + "' (expected inner or outer)");
}

TdSizing parse_td_sizing(const std::string& s) {
  if (s == "quarter") return TdSizing::Quarter;
  if (s == "snippet") return TdSizing::Snippet;
  throw Error("pointcloud", "unknown td sizing '" + s + "' (expected quarter or snippet)");
}

std::string to_string(FusionMode f) { return f == FusionMode::Inner ? "inner" : "outer"; }

std::array<std::size_t, 2> td_counts(const PointPipelineConfig& cfg, std::size_t n) {
  if (cfg.sizing == TdSizing::Snippet) return {n, std::max<std::size_t>(1, n / 4)};
  const std::size_t c0 = (n + 3) / 4;
  return {c0, (c0 + 3) / 4};
}

template <typename T>
PointPipelineParams<T> PointPipelineParams<T>::init(const PointPipelineConfig& cfg, RngStream& rng) {
  check(cfg.dim % 4 == 0, "pointcloud", "width must be divisible by 4");
  const std::size_t q = cfg.dim / 4;
  PointPipelineParams p;
  p.mlp1 = Mlp2<T>::init(3, q, q, rng);
  p.mlp2 = Mlp2<T>::init(cfg.channels, q, q, rng);
  p.td[0] = TransitionDownParams<T>::init(q, 2 * q, rng);
  p.td[1] = TransitionDownParams<T>::init(2 * q, 4 * q, rng);
  p.tu[0] = TransitionUpParams<T>::init(4 * q, 2 * q, rng);
  p.tu[1] = TransitionUpParams<T>::init(2 * q, q, rng);
  p.cls_token = trunc_normal_param<T>({1, 1, cfg.dim}, 0.02, rng);
  p.seg_head = Mlp2<T>::init(q, q, cfg.classes, rng);
  p.cls_head = Linear<T>::init(cfg.dim, cfg.classes, 0.02, rng);
  return p;
}

template <typename T>
void PointPipelineParams<T>::collect(const PointPipelineConfig& cfg, ParamList<T>& list) const {
  mlp1.collect("point.mlp1", list);
  mlp2.collect("point.mlp2", list);
  for (int i = 0; i < 2; ++i) td[i].collect("point.td." + std::to_string(i), list);
  list.emplace_back("cls_token", cls_token);
  if (cfg.head == PointHead::Segmentation) {
    for (int i = 0; i < 2; ++i) tu[i].collect("point.tu." + std::to_string(i), list);
    seg_head.collect("seg_head", list);
  } else {
    cls_head.collect("head", list);
  }
}

template <typename T>
PointLevel<T> stack_clouds(const std::vector<PointCloud<T>>& clouds) {
  check(!clouds.empty(), "pointcloud", "empty batch");
  PointLevel<T> level;
  level.batch = clouds.size();
  level.count = clouds[0].size();
  std::vector<Tensor<T>> feats;
  for (const auto& c : clouds) {
    c.validate();
    check(c.size() == level.count, "pointcloud", "clouds in a batch must have equal size");
    check(c.channels() == clouds[0].channels(), "pointcloud", "clouds in a batch must have equal feature width");
    level.coords.insert(level.coords.end(), c.coords.data().begin(), c.coords.data().end());
    feats.push_back(c.feats);
  }
  level.feats = feats.size() == 1 ? feats[0] : concat(feats, 0);
  return level;
}

template <typename T>
PointTokens<T> tokenize_pointcloud(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                                   const PointPipelineParams<T>& p) {
  PointLevel<T> input = stack_clouds(clouds);
  const std::size_t n = input.count;
  check(n >= 16, "tokenize_pointcloud", "needs at least 16 points, got " + std::to_string(n));
  const std::size_t c = input.feats.dim(1);
  check(c == p.mlp2.fc1.in_features(), "tokenize_pointcloud",
        "feature width " + std::to_string(c) + " does not match MLP2 input " + std::to_string(p.mlp2.fc1.in_features()));

  Tensor<T> xyz({input.batch * n, 3}, input.coords);
  auto pos = p.mlp1(xyz);
  if (cfg.fusion == FusionMode::Inner) {
    check(pos.dim(1) == c, "tokenize_pointcloud",
          "MLP1 output width " + std::to_string(pos.dim(1)) + " cannot be added to features of width " +
              std::to_string(c) + " (use outer fusion)");
    input.feats = p.mlp2(add(input.feats, pos));
  } else {
    check(pos.dim(1) == p.mlp2.fc2.out_features(), "tokenize_pointcloud", "MLP1 and MLP2 output widths differ");
    input.feats = add(p.mlp2(input.feats), pos);
  }

  const auto counts = td_counts(cfg, n);
  PointTokens<T> out;
  out.level0 = transition_down(input, p.td[0], counts[0], std::min(cfg.k, n));
  out.level1 = transition_down(out.level0, p.td[1], counts[1], std::min(cfg.k, counts[0]));
  const std::size_t d = out.level1.feats.dim(1);
  out.tokens = {with_class_token(reshape(out.level1.feats, {input.batch, counts[1], d}), p.cls_token,
                                 static_cast<const Tensor<T>*>(nullptr))};
  out.input = std::move(input);
  return out;
}

template <typename T>
Tensor<T> segment_forward(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                          const PointPipelineParams<T>& p, const Backbone<T>& backbone) {
  auto pt = tokenize_pointcloud(clouds, cfg, p);
  const T eps = static_cast<T>(backbone.config.ln_eps);
  auto z = backbone.norm(encode(pt.tokens.tokens, std::span<const BlockParams<T>>(backbone.blocks),
                                backbone.config.heads, eps),
                         eps);
  const std::size_t b = z.dim(0), n1 = z.dim(1) - 1, d = z.dim(2);
  PointLevel<T> coarse = pt.level1;
  coarse.feats = reshape(slice(z, 1, 1, n1), {b * n1, d});
  PointLevel<T> mid = pt.level0;
  mid.feats = transition_up(coarse, pt.level0, p.tu[0]);
  auto dense = transition_up(mid, pt.input, p.tu[1]);
  return p.seg_head(dense);
}

template <typename T>
Tensor<T> classify_points(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                          const PointPipelineParams<T>& p, const Backbone<T>& backbone) {
  auto pt = tokenize_pointcloud(clouds, cfg, p);
  const T eps = static_cast<T>(backbone.config.ln_eps);
  auto z = encode(pt.tokens.tokens, std::span<const BlockParams<T>>(backbone.blocks), backbone.config.heads, eps);
  if (cfg.head == PointHead::MeanPool) {
    auto normed = backbone.norm(z, eps);
    return p.cls_head(mean(slice(normed, 1, 1, z.dim(1) - 1), 1));
  }
  return classify(z, backbone.norm, p.cls_head, eps);
}

#define S3F_INSTANTIATE(T)                                                                                          \
  template struct PointCloud<T>;                                                                                    \
  template struct TransitionDownParams<T>;                                                                          \
  template struct TransitionUpParams<T>;                                                                            \
  template struct PointPipelineParams<T>;                                                                           \
  template std::vector<std::size_t> farthest_point_sample(std::span<const T>, std::size_t);                         \
  template std::vector<std::size_t> farthest_point_sample(std::span<const T>, std::size_t, RngStream&);             \
  template std::vector<std::size_t> knn(std::span<const T>, std::span<const T>, std::size_t);                       \
  template IdwWeights<T> idw_weights(std::span<const T>, std::span<const T>, std::size_t);                          \
  template Tensor<T> interpolate(const Tensor<T>&, const IdwWeights<T>&, std::size_t, std::size_t);                 \
  template PointLevel<T> transition_down(const PointLevel<T>&, const TransitionDownParams<T>&, std::size_t,         \
                                         std::size_t);                                                              \
  template Tensor<T> transition_up(const PointLevel<T>&, const PointLevel<T>&, const TransitionUpParams<T>&);       \
  template PointLevel<T> stack_clouds(const std::vector<PointCloud<T>>&);                                           \
  template PointTokens<T> tokenize_pointcloud(const std::vector<PointCloud<T>>&, const PointPipelineConfig&,        \
                                              const PointPipelineParams<T>&);                                       \
  template Tensor<T> segment_forward(const std::vector<PointCloud<T>>&, const PointPipelineConfig&,                 \
                                     const PointPipelineParams<T>&, const Backbone<T>&);                            \
  template Tensor<T> classify_points(const std::vector<PointCloud<T>>&, const PointPipelineConfig&,                 \
                                     const PointPipelineParams<T>&, const Backbone<T>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
