// SPDX-License-Identifier: Apache-2.0
#include "s3f/models.hpp"

#include <algorithm>

namespace s3f {

Task parse_task(const std::string& s) {
  if (s == "cls-voxel") return Task::ClsVoxel;
  if (s == "cls-point") return Task::ClsPoint;
  if (s == "seg-point") return Task::SegPoint;
  throw Error("config", "unknown task '" + s + "' (expected cls-voxel, cls-point or seg-point)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::ClsVoxel: return "cls-voxel";
    case Task::ClsPoint: return "cls-point";
    case Task::SegPoint: return "seg-point";
  }
  return "?";
}

template <typename T>
VoxelClassifier<T> VoxelClassifier<T>::init(const BackboneConfig& bb, VoxelTokenizerConfig tok,
                                            std::array<std::size_t, 3> grid, std::size_t classes, RngStream& rng) {
  VoxelClassifier m;
  tok.dim = bb.dim;
  m.tokenizer_config = tok;
  m.grid = grid;
  m.tokenizer = VoxelTokenizerParams<T>::init(tok, grid[0], grid[1], grid[2], rng);
  m.backbone = Backbone<T>::init(bb, rng);
  m.head = Linear<T>::init(bb.dim, classes, 0.02, rng);
  return m;
}

template <typename T>
Tensor<T> VoxelClassifier<T>::forward(const Tensor<T>& grids) const {
  const T eps = static_cast<T>(backbone.config.ln_eps);
  auto z0 = tokenize_voxels(grids, tokenizer_config, tokenizer);
  auto zl = encode(z0.tokens, std::span<const BlockParams<T>>(backbone.blocks), backbone.config.heads, eps);
  return classify(zl, backbone.norm, head, eps);
}

template <typename T>
ParamList<T> VoxelClassifier<T>::params() const {
  ParamList<T> list;
  tokenizer.collect(list);
  backbone.collect(list);
  head.collect("head", list);
  return list;
}

template <typename T>
PointModel<T> PointModel<T>::init(const BackboneConfig& bb, PointPipelineConfig cfg, RngStream& rng) {
  PointModel m;
  cfg.dim = bb.dim;
  m.config = cfg;
  m.pipeline = PointPipelineParams<T>::init(cfg, rng);
  m.backbone = Backbone<T>::init(bb, rng);
  return m;
}

template <typename T>
Tensor<T> PointModel<T>::forward(const std::vector<PointCloud<T>>& clouds) const {
  if (config.head == PointHead::Segmentation) return segment_forward(clouds, config, pipeline, backbone);
  return classify_points(clouds, config, pipeline, backbone);
}

template <typename T>
ParamList<T> PointModel<T>::params() const {
  ParamList<T> list;
  pipeline.collect(config, list);
  backbone.collect(list);
  return list;
}

template <typename T>
void copy_param_values(const ParamList<T>& src, const ParamList<T>& dst) {
  check(src.size() == dst.size(), "params", "parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    check(src[i].first == dst[i].first && src[i].second.shape() == dst[i].second.shape(), "params",
          "parameter '" + src[i].first + "' does not match '" + dst[i].first + "'");
    Tensor<T> d = dst[i].second;
    std::copy(src[i].second.data().begin(), src[i].second.data().end(), d.mutable_data().begin());
  }
}

template <typename T>
Vit2D<T> clone_vit(const Vit2D<T>& v) {
  RngStream scratch(0);
  Vit2D<T> out = Vit2D<T>::init(v.backbone.config, v.image_size, v.patch_embed.patch(), v.patch_embed.channels(),
                                v.head.out_features(), scratch);
  ParamList<T> src, dst;
  v.collect(src);
  out.collect(dst);
  copy_param_values(src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.set_requires_grad(src[i].second.requires_grad());
  return out;
}

#define S3F_INSTANTIATE(T)                                                      \
  template struct VoxelClassifier<T>;                                           \
  template struct PointModel<T>;                                                \
  template void copy_param_values(const ParamList<T>&, const ParamList<T>&);    \
  template Vit2D<T> clone_vit(const Vit2D<T>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
