// SPDX-License-Identifier: Apache-2.0
#include "s3f/voxel.hpp"

#include <cctype>

namespace s3f {

VoxelScheme parse_scheme(const std::string& s) {
  if (s == "naive") return VoxelScheme::Naive;
  if (s == "projection") return VoxelScheme::Projection;
  if (s == "group") return VoxelScheme::Group;
  throw Error("voxel", "unknown scheme '" + s + "' (expected naive, projection or group)");
}

AxisOrdering parse_ordering(const std::string& name) {
  std::string s = name;
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "XYZ") return AxisOrdering::XYZ;
  if (s == "YZX") return AxisOrdering::YZX;
  if (s == "ZXY") return AxisOrdering::ZXY;
  throw Error("voxel", "unknown ordering '" + name + "' (expected XYZ, YZX or ZXY)");
}

std::string to_string(VoxelScheme s) {
  switch (s) {
    case VoxelScheme::Naive: return "naive";
    case VoxelScheme::Projection: return "projection";
    case VoxelScheme::Group: return "group";
  }
  return "?";
}

std::string to_string(AxisOrdering o) {
  switch (o) {
    case AxisOrdering::XYZ: return "XYZ";
    case AxisOrdering::YZX: return "YZX";
    case AxisOrdering::ZXY: return "ZXY";
  }
  return "?";
}

std::array<std::size_t, 3> ordering_axes(AxisOrdering o) {
  switch (o) {
    case AxisOrdering::XYZ: return {0, 1, 2};
    case AxisOrdering::YZX: return {1, 2, 0};
    case AxisOrdering::ZXY: return {2, 0, 1};
  }
  return {0, 1, 2};
}

namespace {

// Naive inflation always walks x, y, z.
AxisOrdering effective_ordering(const VoxelTokenizerConfig& cfg) {
  return cfg.scheme == VoxelScheme::Naive ? AxisOrdering::XYZ : cfg.ordering;
}

}  // namespace

CubeLayout cube_layout(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w, std::size_t z) {
  const std::size_t t = cfg.cell;
  check(t > 0, "voxel", "cell size must be positive");
  check(h % t == 0 && w % t == 0 && z % t == 0, "voxel",
        "grid " + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(z) +
            " is not divisible by cell size " + std::to_string(t));
  const std::array<std::size_t, 3> ext{h / t, w / t, z / t};
  const auto ax = ordering_axes(effective_ordering(cfg));
  return {ext[ax[0]], ext[ax[1]], ext[ax[2]]};
}

std::size_t token_count(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w, std::size_t z) {
  const CubeLayout l = cube_layout(cfg, h, w, z);
  return cfg.scheme == VoxelScheme::Naive ? l.cubes() : l.columns();
}

std::vector<std::vector<std::array<std::size_t, 3>>> token_cube_map(const VoxelTokenizerConfig& cfg, std::size_t h,
                                                                    std::size_t w, std::size_t z) {
  const CubeLayout l = cube_layout(cfg, h, w, z);
  const auto ax = ordering_axes(effective_ordering(cfg));
  std::vector<std::vector<std::array<std::size_t, 3>>> map;
  for (std::size_t a = 0; a < l.first; ++a)
    for (std::size_t b = 0; b < l.second; ++b) {
      std::vector<std::array<std::size_t, 3>> column;
      for (std::size_t c = 0; c < l.column; ++c) {
        std::array<std::size_t, 3> xyz{};
        xyz[ax[0]] = a;
        xyz[ax[1]] = b;
        xyz[ax[2]] = c;
        if (cfg.scheme == VoxelScheme::Naive) map.push_back({xyz});
        else column.push_back(xyz);
      }
      if (cfg.scheme != VoxelScheme::Naive) map.push_back(std::move(column));
    }
  return map;
}

template <typename T>
void GroupEncoderParams<T>::collect(const std::string& prefix, ParamList<T>& list) const {
  list.emplace_back(prefix + ".readout", readout);
  list.emplace_back(prefix + ".pos", pos);
  block.collect(prefix + ".block", list);
}

template <typename T>
VoxelTokenizerParams<T> VoxelTokenizerParams<T>::init(const VoxelTokenizerConfig& cfg, std::size_t h, std::size_t w,
                                                      std::size_t z, RngStream& rng) {
  const CubeLayout l = cube_layout(cfg, h, w, z);
  const std::size_t d = cfg.dim, t = cfg.cell;
  VoxelTokenizerParams p;
  p.embed_weight = trunc_normal_param<T>({d, cfg.channels, t, t, t}, 0.02, rng);
  p.embed_bias = const_param<T>({d}, T(0));
  p.cls_token = trunc_normal_param<T>({1, 1, d}, 0.02, rng);
  p.pos_embed = trunc_normal_param<T>({1, 1 + token_count(cfg, h, w, z), d}, 0.02, rng);
  if (cfg.scheme == VoxelScheme::Group) {
    check(d % cfg.group_heads == 0, "voxel", "group encoder heads must divide the width");
    GroupEncoderParams<T> g;
    g.readout = trunc_normal_param<T>({1, 1, d}, 0.02, rng);
    g.pos = trunc_normal_param<T>({1, l.column + 1, d}, 0.02, rng);
    g.block = BlockParams<T>::init(d, cfg.group_mlp_ratio, rng);
    p.group = std::move(g);
  }
  return p;
}

template <typename T>
void VoxelTokenizerParams<T>::collect(ParamList<T>& list) const {
  list.emplace_back("voxel_embed.weight", embed_weight);
  list.emplace_back("voxel_embed.bias", embed_bias);
  list.emplace_back("cls_token", cls_token);
  list.emplace_back("pos_embed", pos_embed);
  if (group) group->collect("group", list);
}

template <typename T>
Tensor<T> voxel_embed(const Tensor<T>& cube, const Tensor<T>& weight, const Tensor<T>& bias) {
  check(cube.rank() == 4 && weight.rank() == 5, "voxel_embed", "expected cube (T, T, T, C) and weight (D, C, T, T, T)");
  const std::size_t t = cube.dim(0), c = cube.dim(3), d = weight.dim(0);
  check(cube.dim(1) == t && cube.dim(2) == t && weight.dim(1) == c && weight.dim(2) == t && weight.dim(3) == t &&
            weight.dim(4) == t,
        "voxel_embed", "cube " + shape_str(cube.shape()) + " does not match weight " + shape_str(weight.shape()));
  auto flat = reshape(permute(cube, {3, 0, 1, 2}), {1, c * t * t * t});
  return reshape(linear(flat, reshape(weight, {d, c * t * t * t}), bias), {d});
}

template <typename T>
Tensor<T> embed_cubes(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg, const Tensor<T>& weight,
                      const Tensor<T>& bias) {
  check(grids.rank() == 5, "voxel", "expected grids (B, H, W, Z, C), got " + shape_str(grids.shape()));
  const std::size_t b = grids.dim(0), t = cfg.cell, c = grids.dim(4), d = weight.dim(0);
  const std::array<std::size_t, 3> ext{grids.dim(1), grids.dim(2), grids.dim(3)};
  const CubeLayout l = cube_layout(cfg, ext[0], ext[1], ext[2]);
  check(weight.rank() == 5 && weight.dim(1) == c && weight.dim(2) == t, "voxel",
        "embedding " + shape_str(weight.shape()) + " does not match cell " + std::to_string(t) + " with " +
            std::to_string(c) + " channels");
  const auto ax = ordering_axes(effective_ordering(cfg));
  const std::array<std::size_t, 3> stride{ext[1] * ext[2] * c, ext[2] * c, c};
  const std::size_t grid_size = ext[0] * ext[1] * ext[2] * c;
  const std::size_t flat = c * t * t * t;

  // Gather each cube in (c, i, j, k) order where i, j, k walk the permuted
  // axes, matching a (D, C, T, T, T) kernel applied to the permuted grid.
  std::vector<std::size_t> idx;
  idx.reserve(b * l.cubes() * flat);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t u0 = 0; u0 < l.first; ++u0)
      for (std::size_t u1 = 0; u1 < l.second; ++u1)
        for (std::size_t u2 = 0; u2 < l.column; ++u2)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < t; ++i)
              for (std::size_t j = 0; j < t; ++j)
                for (std::size_t k = 0; k < t; ++k)
                  idx.push_back(bi * grid_size + (u0 * t + i) * stride[ax[0]] + (u1 * t + j) * stride[ax[1]] +
                                (u2 * t + k) * stride[ax[2]] + ch);
  auto cubes = take(grids, idx, {b, l.cubes(), flat});
  auto emb = linear(cubes, reshape(weight, {d, flat}), bias);
  return reshape(emb, {b, l.first, l.second, l.column, d});
}

template <typename T>
TokenSequence<T> tokenize_naive(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                const VoxelTokenizerParams<T>& p) {
  auto emb = embed_cubes(grids, cfg, p.embed_weight, p.embed_bias);
  const std::size_t b = emb.dim(0), d = emb.dim(4);
  const std::size_t n = emb.numel() / (b * d);
  return {with_class_token(reshape(emb, {b, n, d}), p.cls_token, &p.pos_embed)};
}

template <typename T>
TokenSequence<T> tokenize_projection(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                     const VoxelTokenizerParams<T>& p) {
  auto emb = embed_cubes(grids, cfg, p.embed_weight, p.embed_bias);
  const std::size_t b = emb.dim(0), d = emb.dim(4), n = emb.dim(1) * emb.dim(2);
  auto avg = mean(reshape(emb, {b, n, emb.dim(3), d}), 2);
  return {with_class_token(avg, p.cls_token, &p.pos_embed)};
}

template <typename T>
TokenSequence<T> tokenize_group(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                const VoxelTokenizerParams<T>& p) {
  check(p.group.has_value(), "voxel", "group scheme requires group encoder parameters");
  const auto& g = *p.group;
  auto emb = embed_cubes(grids, cfg, p.embed_weight, p.embed_bias);
  const std::size_t b = emb.dim(0), d = emb.dim(4), n = emb.dim(1) * emb.dim(2), s = emb.dim(3);
  check(g.pos.numel() == (s + 1) * d, "voxel",
        "group positional table " + shape_str(g.pos.shape()) + " does not match column length " + std::to_string(s));
  // Every column becomes one sequence [readout; cubes] for the encoder layer.
  auto columns = reshape(emb, {b * n, s, d});
  auto seq = with_class_token(columns, g.readout, &g.pos);
  auto out = transformer_block(seq, g.block, cfg.group_heads);
  Tensor<T> tokens = cfg.readout == GroupReadout::Token ? slice(out, 1, 0, 1) : mean(slice(out, 1, 1, s), 1, true);
  return {with_class_token(reshape(tokens, {b, n, d}), p.cls_token, &p.pos_embed)};
}

template <typename T>
TokenSequence<T> tokenize_voxels(const Tensor<T>& grids, const VoxelTokenizerConfig& cfg,
                                 const VoxelTokenizerParams<T>& p) {
  switch (cfg.scheme) {
    case VoxelScheme::Naive: return tokenize_naive(grids, cfg, p);
    case VoxelScheme::Projection: return tokenize_projection(grids, cfg, p);
    case VoxelScheme::Group: return tokenize_group(grids, cfg, p);
  }
  throw Error("voxel", "unknown scheme");
}

template <typename T>
TokenSequence<T> tokenize_voxels(const VoxelGrid<T>& grid, const VoxelTokenizerConfig& cfg,
                                 const VoxelTokenizerParams<T>& p) {
  check(grid.values.rank() == 4, "voxel", "expected grid (H, W, Z, C)");
  check(grid.cell == cfg.cell, "voxel", "grid cell size does not match tokenizer");
  Shape s = grid.values.shape();
  s.insert(s.begin(), 1);
  return tokenize_voxels(reshape(grid.values, s), cfg, p);
}

#define S3F_INSTANTIATE(T)                                                                                        \
  template struct GroupEncoderParams<T>;                                                                          \
  template struct VoxelTokenizerParams<T>;                                                                        \
  template Tensor<T> voxel_embed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> embed_cubes(const Tensor<T>&, const VoxelTokenizerConfig&, const Tensor<T>&,                 \
                                 const Tensor<T>&);                                                               \
  template TokenSequence<T> tokenize_naive(const Tensor<T>&, const VoxelTokenizerConfig&,                         \
                                           const VoxelTokenizerParams<T>&);                                       \
  template TokenSequence<T> tokenize_projection(const Tensor<T>&, const VoxelTokenizerConfig&,                    \
                                                const VoxelTokenizerParams<T>&);                                  \
  template TokenSequence<T> tokenize_group(const Tensor<T>&, const VoxelTokenizerConfig&,                         \
                                           const VoxelTokenizerParams<T>&);                                       \
  template TokenSequence<T> tokenize_voxels(const Tensor<T>&, const VoxelTokenizerConfig&,                        \
                                            const VoxelTokenizerParams<T>&);                                      \
  template TokenSequence<T> tokenize_voxels(const VoxelGrid<T>&, const VoxelTokenizerConfig&,                     \
                                            const VoxelTokenizerParams<T>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
