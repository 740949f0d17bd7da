// SPDX-License-Identifier: Apache-2.0
//
// Voxel tokenizers. A grid (H, W, Z, C) is tessellated into T^3 cubes, each
// cube is embedded by one shared affine map (a kernel-T stride-T convolution),
// and the cube embeddings become tokens in one of three ways:
//
//   naive       every cube is a token, x-major then y then z
//   projection  cubes of one (x, y) column are averaged into one token
//   group       each column runs through a one-layer encoder with a readout
//               token; the readout slot becomes the token
//
// The axis ordering picks which grid axis plays the role of the column axis:
// XYZ columns along Z, YZX along X, ZXY along Y.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "s3f/vit.hpp"

namespace s3f {

enum class VoxelScheme { Naive, Projection, Group };
enum class AxisOrdering { XYZ, YZX, ZXY };
enum class GroupReadout { Token, MeanPool };

VoxelScheme parse_scheme(const std::string& s);
AxisOrdering parse_ordering(const std::string& s);
std::string to_string(VoxelScheme s);
std::string to_string(AxisOrdering o);
// Grid axes (0 = H, 1 = W, 2 = Z) in permuted order; the last is the column axis.
std::array<std::size_t, 3> ordering_axes(AxisOrdering o);

template <typename T>
struct VoxelGrid {
  Tensor<T> values;  // (H, W, Z, C)
  std::size_t cell = 1;

  std::size_t extent(std::size_t axis) const { return values.dim(static_cast<int>(axis)); }
  std::size_t channels() const { return values.dim(3); }
};

struct VoxelTokenizerConfig {
  VoxelScheme scheme = VoxelScheme::Projection;
  AxisOrdering ordering = AxisOrdering::XYZ;
  std::size_t cell = 6;      // T
  std::size_t dim = 64;      // D
  std::size_t channels = 1;  // C
  GroupReadout readout = GroupReadout::Token;
  std::size_t group_heads = 4;
  std::size_t group_mlp_ratio = 4;
};

// Cube counts along the permuted axes (first, second, column).
struct CubeLayout {
  std::size_t first = 0, second = 0, column = 0;

  std::size_t cubes() const { return first * second * column; }
  std::size_t columns() const { return first * second; }
};

// Throws unless every extent is divisible by the cell size.
CubeLayout cube_layout(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w, std::size_t z);
// Tokens excluding the class token: HWZ/T^3 for naive, HW/T^2 (in permuted
// axes) otherwise.
std::size_t token_count(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w, std::size_t z);
// For each non-class token, the (x, y, z) cube coordinates it aggregates.
std::vector<std::vector<std::array<std::size_t, 3>>> token_cube_map(const VoxelTokenizerConfig& cfg, std::size_t h,
                                                                    std::size_t w, std::size_t z);

template <typename T>
struct GroupEncoderParams {
  Tensor<T> readout;  // (1, 1, D)
  Tensor<T> pos;      // (1, column + 1, D)
  BlockParams<T> block;

  void collect(const std::string& prefix, ParamList<T>& list) const;
};

template <typename T>
struct VoxelTokenizerParams {
  Tensor<T> embed_weight;  // (D, C, T, T, T)
  Tensor<T> embed_bias;    // (D)
  Tensor<T> cls_token;     // (1, 1, D)
  Tensor<T> pos_embed;     // (1, 1 + N, D)
  std::optional<GroupEncoderParams<T>> group;

  static VoxelTokenizerParams init(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w, std::size_t z,
                                   RngStream& rng);
  void collect(ParamList<T>& list) const;
};

// One cube (T, T, T, C) -> (D).
template <typename T>
Tensor<T> voxel_embed(const Tensor<T>& cube, const Tensor<T>& weight, const Tensor<T>& bias);

// Grids (B, H, W, Z, C) -> cube embeddings (B, first, second, column, D) in
// permuted axes, before class token and positional table.
template <typename T>
Tensor<T> embed_cubes(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg, const Tensor<T>& weight,
                      const Tensor<T>& bias);

// Each takes grids (B, H, W, Z, C) and returns (B, 1 + N, D).
template <typename T>
TokenSequence<T> tokenize_naive(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                const VoxelTokenizerParams<T>& p);
template <typename T>
TokenSequence<T> tokenize_projection(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                     const VoxelTokenizerParams<T>& p);
template <typename T>
TokenSequence<T> tokenize_group(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                const VoxelTokenizerParams<T>& p);
template <typename T>
TokenSequence<T> tokenize_voxels(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                 const VoxelTokenizerParams<T>& p);

// Single-grid convenience.
template <typename T>
TokenSequence<T> tokenize_voxels(const VoxelGrid<T>& grid, const VoxelTokenizerConfig& cfg,
                                 const VoxelTokenizerParams<T>& p);

}  // namespace s3f
