// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "s3f/pointcloud.hpp"
#include "s3f/voxel.hpp"

namespace s3f {

enum class Task { ClsVoxel, ClsPoint, SegPoint };

Task parse_task(const std::string& s);
std::string to_string(Task t);

// Voxel tokenizer + backbone + linear head on the class token.
template <typename T>
struct VoxelClassifier {
  VoxelTokenizerConfig tokenizer_config;
  std::array<std::size_t, 3> grid{};
  VoxelTokenizerParams<T> tokenizer;
  Backbone<T> backbone;
  Linear<T> head;

  static VoxelClassifier init(const BackboneConfig& bb, VoxelTokenizerConfig tok, std::array<std::size_t, 3> grid,
                              std::size_t classes, RngStream& rng);
  // grids (B, H, W, Z, C) -> logits (B, K)
  Tensor<T> forward(const Tensor<T>& grids) const;
  ParamList<T> params() const;
};

// Point tokenizer + backbone + dense or shape head.
template <typename T>
struct PointModel {
  PointPipelineConfig config;
  PointPipelineParams<T> pipeline;
  Backbone<T> backbone;

  static PointModel init(const BackboneConfig& bb, PointPipelineConfig cfg, RngStream& rng);
  // (B * N, K) for segmentation, (B, K) otherwise.
  Tensor<T> forward(const std::vector<PointCloud<T>>& clouds) const;
  ParamList<T> params() const;
};

// Pairwise copy of values between two parameter lists of identical layout.
template <typename T>
void copy_param_values(const ParamList<T>& src, const ParamList<T>& dst);

// Independent deep copy of a 2D ViT.
template <typename T>
Vit2D<T> clone_vit(const Vit2D<T>& v);

}  // namespace s3f
