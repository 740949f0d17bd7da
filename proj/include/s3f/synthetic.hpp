// SPDX-License-Identifier: Apache-2.0
//
// Seeded toy shapes for tests and overfit runs.
#pragma once

#include <cstdint>
#include <string>

#include "s3f/io.hpp"
#include "s3f/voxel.hpp"

namespace s3f {

enum class ShapeKind { Sphere, Cube, Cylinder };

ShapeKind parse_shape(const std::string& s);
std::string to_string(ShapeKind k);

struct SyntheticSpec {
  ShapeKind shape = ShapeKind::Sphere;
  std::size_t resolution = 16;  // voxel edge
  std::size_t points = 256;
  double jitter = 0.0;  // voxels: std of center/size perturbation in cells; points: coordinate noise std
  std::uint64_t seed = 0;
};

// Occupancy (r, r, r, 1) with cell centers at i + 0.5. Without jitter:
// sphere of radius 3r/8 about the center, cube of side r/2, z-aligned
// cylinder of radius 3r/8 and height r/2.
template <typename T>
VoxelGrid<T> make_voxels(const SyntheticSpec& spec);

// Surface samples of the unit-scale shape plus Gaussian noise. Features are
// `channels` zero columns.
template <typename T>
PointCloud<T> make_points(const SyntheticSpec& spec, std::size_t channels);

// Sphere surface split at z = 0: label 1 above, 0 below.
template <typename T>
LabeledCloud<T> make_hemispheres(const SyntheticSpec& spec, std::size_t channels);

}  // namespace s3f
