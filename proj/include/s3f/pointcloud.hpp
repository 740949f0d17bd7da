// SPDX-License-Identifier: Apache-2.0
//
// Point-cloud front end and dense head around the unchanged ViT encoder.
//
//   f      = fuse(P, X)                       per-point features of width D/4
//   level0 = TD(X, f)                         N/4 points, width D/2
//   level1 = TD(level0)                       N/16 points, width D
//   z      = encode([cls; level1])
//   up0    = TU(LN(z)[1:], level1 -> level0)  width D/2
//   up1    = TU(up0, level0 -> (X, f))        width D/4
//   logits = head(up1)                        (N, K)
//
// Point sets in a batch share the same cardinality and are processed with
// per-cloud index arithmetic over flattened (B * n, C) feature tensors.
#pragma once

#include <string>
#include <vector>

#include "s3f/vit.hpp"

namespace s3f {

template <typename T>
struct PointCloud {
  Tensor<T> coords;  // (N, 3)
  Tensor<T> feats;   // (N, C)

  std::size_t size() const { return coords.dim(0); }
  std::size_t channels() const { return feats.dim(1); }
  // Throws unless coords are finite, N >= 1 and rows align.
  void validate() const;
};

// Greedy max-min selection starting from index 0. Ties go to the lowest index.
// `xyz` holds N rows of 3 coordinates.
template <typename T>
std::vector<std::size_t> farthest_point_sample(std::span<const T> xyz, std::size_t m);

// Seeded-random start instead of index 0, for augmentation.
template <typename T>
std::vector<std::size_t> farthest_point_sample(std::span<const T> xyz, std::size_t m, RngStream& rng);

// The k nearest `ref` rows of each `query` row, ascending by Euclidean
// distance, ties by lowest index. Result is M * k indices.
template <typename T>
std::vector<std::size_t> knn(std::span<const T> query, std::span<const T> ref, std::size_t k);

// Inverse-distance weights over the min(k, |ref|) nearest ref rows. A query
// coincident with a ref row puts weight 1 on it.
template <typename T>
struct IdwWeights {
  std::size_t k = 0;
  std::vector<std::size_t> index;  // M * k
  std::vector<T> weight;           // M * k, rows sum to 1
};

template <typename T>
IdwWeights<T> idw_weights(std::span<const T> query, std::span<const T> ref, std::size_t k = 3);

// Interpolate feats (n_ref, C) onto the queries: out[i] = sum_j w_ij feats[idx_ij].
// `batch` clouds are laid out back to back; indices are local to each cloud.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& feats, const IdwWeights<T>& w, std::size_t batch, std::size_t ref_per_cloud);

// A batch of equally sized point sets.
template <typename T>
struct PointLevel {
  std::size_t batch = 0;
  std::size_t count = 0;   // points per cloud
  std::vector<T> coords;   // batch * count * 3
  Tensor<T> feats;         // (batch * count, C)

  std::span<const T> cloud_coords(std::size_t b) const {
    return std::span<const T>(coords).subspan(b * count * 3, count * 3);
  }
};

template <typename T>
struct TransitionDownParams {
  Mlp2<T> mlp;  // (3 + C_in) -> C_out -> C_out, ReLU after each layer

  static TransitionDownParams init(std::size_t in, std::size_t out, RngStream& rng);
  std::size_t in_width() const { return mlp.fc1.in_features() - 3; }
  std::size_t out_width() const { return mlp.fc2.out_features(); }
  void collect(const std::string& prefix, ParamList<T>& list) const;
};

template <typename T>
struct TransitionUpParams {
  Linear<T> coarse;  // C_coarse -> C_fine, then ReLU
  Linear<T> fine;    // C_fine -> C_fine, then ReLU

  static TransitionUpParams init(std::size_t coarse_width, std::size_t fine_width, RngStream& rng);
  void collect(const std::string& prefix, ParamList<T>& list) const;
};

// FPS picks `centers` points per cloud; each center max-pools the transformed
// [neighbor - center, neighbor feature] rows of its k nearest neighbors.
template <typename T>
PointLevel<T> transition_down(const PointLevel<T>& in, const TransitionDownParams<T>& p, std::size_t centers,
                              std::size_t k);

// Features on `fine` points: IDW(relu(coarse_fc(coarse))) + relu(fine_fc(fine)).
template <typename T>
Tensor<T> transition_up(const PointLevel<T>& coarse, const PointLevel<T>& fine, const TransitionUpParams<T>& p);

enum class FusionMode {
  Inner,  // MLP2(P + MLP1(X)); P must already have width D/4
  Outer,  // MLP2(P) + MLP1(X)
};
enum class TdSizing {
  Quarter,   // each TD keeps ceil(n / 4) points
  Snippet,   // first TD keeps n, second n / 4
};
enum class PointHead { Segmentation, ClassToken, MeanPool };

struct PointPipelineConfig {
  std::size_t dim = 64;       // D
  std::size_t channels = 16;  // C
  std::size_t k = 16;
  FusionMode fusion = FusionMode::Inner;
  TdSizing sizing = TdSizing::Quarter;
  PointHead head = PointHead::Segmentation;
  std::size_t classes = 2;
};

FusionMode parse_fusion(const std::string& s);
TdSizing parse_td_sizing(const std::string& s);
std::string to_string(FusionMode f);

template <typename T>
struct PointPipelineParams {
  Mlp2<T> mlp1;  // 3 -> D/4
  Mlp2<T> mlp2;  // C -> D/4
  TransitionDownParams<T> td[2];
  TransitionUpParams<T> tu[2];
  Tensor<T> cls_token;  // (1, 1, D)
  Mlp2<T> seg_head;     // D/4 -> D/4 -> K
  Linear<T> cls_head;   // D -> K

  static PointPipelineParams init(const PointPipelineConfig& cfg, RngStream& rng);
  void collect(const PointPipelineConfig& cfg, ParamList<T>& list) const;
};

// Cardinalities after each TD for clouds of n points.
std::array<std::size_t, 2> td_counts(const PointPipelineConfig& cfg, std::size_t n);

// Everything the dense head needs from the front end.
template <typename T>
struct PointTokens {
  TokenSequence<T> tokens;  // (B, 1 + n1, D), no positional table
  PointLevel<T> input;      // (X, fused features)
  PointLevel<T> level0;
  PointLevel<T> level1;
};

template <typename T>
PointLevel<T> stack_clouds(const std::vector<PointCloud<T>>& clouds);

template <typename T>
PointTokens<T> tokenize_pointcloud(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                                   const PointPipelineParams<T>& p);

// Per-point logits (B * N, K). The class-token slot is dropped before the
// first TU.
template <typename T>
Tensor<T> segment_forward(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                          const PointPipelineParams<T>& p, const Backbone<T>& backbone);

// Shape logits (B, K) from the class token or the mean of point tokens.
template <typename T>
Tensor<T> classify_points(const std::vector<PointCloud<T>>& clouds, const PointPipelineConfig& cfg,
                          const PointPipelineParams<T>& p, const Backbone<T>& backbone);

}  // namespace s3f
