// SPDX-License-Identifier: Apache-2.0
#include "s3f/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace s3f {

ShapeKind parse_shape(const std::string& s) {
  if (s == "sphere") return ShapeKind::Sphere;
  if (s == "cube") return ShapeKind::Cube;
  if (s == "cylinder") return ShapeKind::Cylinder;
  throw Error("synthetic", "unknown shape '" + s + "'");
}

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Cube: return "cube";
    case ShapeKind::Cylinder: return "cylinder";
  }
  return "?";
}

template <typename T>
VoxelGrid<T> make_voxels(const SyntheticSpec& spec) {
  const std::size_t r = spec.resolution;
  check(r >= 4, "synthetic", "resolution must be at least 4, got " + std::to_string(r));
  const double rd = static_cast<double>(r);
  double c[3] = {rd / 2, rd / 2, rd / 2};
  double radius = 3 * rd / 8, half = rd / 4;
  if (spec.jitter > 0) {
    RngStream rng(spec.seed, 0x766f78);
    for (double& v : c) v += spec.jitter * rng.normal();
    radius = std::max(1.0, radius + 0.5 * spec.jitter * rng.normal());
    half = std::max(1.0, half + 0.5 * spec.jitter * rng.normal());
  }
  std::vector<T> v(r * r * r, T(0));
  for (std::size_t x = 0; x < r; ++x)
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t z = 0; z < r; ++z) {
        const double dx = x + 0.5 - c[0], dy = y + 0.5 - c[1], dz = z + 0.5 - c[2];
        bool in = false;
        switch (spec.shape) {
          case ShapeKind::Sphere: in = dx * dx + dy * dy + dz * dz <= radius * radius; break;
          case ShapeKind::Cube: in = std::abs(dx) < half && std::abs(dy) < half && std::abs(dz) < half; break;
          case ShapeKind::Cylinder: in = dx * dx + dy * dy <= radius * radius && std::abs(dz) < half; break;
        }
        if (in) v[(x * r + y) * r + z] = T(1);
      }
  return {Tensor<T>({r, r, r, 1}, std::move(v)), 1};
}

namespace {

void surface_point(ShapeKind shape, RngStream& rng, double p[3]) {
  switch (shape) {
    case ShapeKind::Sphere: {
      double n = 0;
      do {
        for (int i = 0; i < 3; ++i) p[i] = rng.normal();
        n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      } while (n < 1e-9);
      for (int i = 0; i < 3; ++i) p[i] /= n;
      return;
    }
    case ShapeKind::Cube: {
      const auto face = rng.below(6);
      for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-0.8, 0.8);
      p[face / 2] = face % 2 ? 0.8 : -0.8;
      return;
    }
    case ShapeKind::Cylinder: {
      // Side area 2*pi*r*h vs caps 2*pi*r^2 with r = 0.8, h = 1.6.
      const double a = rng.uniform(0, 2 * std::numbers::pi);
      if (rng.uniform() < 1.6 / 2.4) {
        p[0] = 0.8 * std::cos(a);
        p[1] = 0.8 * std::sin(a);
        p[2] = rng.uniform(-0.8, 0.8);
      } else {
        const double rr = 0.8 * std::sqrt(rng.uniform());
        p[0] = rr * std::cos(a);
        p[1] = rr * std::sin(a);
        p[2] = rng.uniform() < 0.5 ? -0.8 : 0.8;
      }
      return;
    }
  }
}

}  // namespace

template <typename T>
PointCloud<T> make_points(const SyntheticSpec& spec, std::size_t channels) {
  check(spec.points > 0, "synthetic", "point count must be positive");
  RngStream rng(spec.seed, 0x707473);
  std::vector<T> xyz(spec.points * 3);
  for (std::size_t i = 0; i < spec.points; ++i) {
    double p[3];
    surface_point(spec.shape, rng, p);
    for (int j = 0; j < 3; ++j) xyz[i * 3 + j] = static_cast<T>(p[j] + spec.jitter * rng.normal());
  }
  return {Tensor<T>({spec.points, 3}, std::move(xyz)), Tensor<T>::zeros({spec.points, channels})};
}

template <typename T>
LabeledCloud<T> make_hemispheres(const SyntheticSpec& spec, std::size_t channels) {
  SyntheticSpec s = spec;
  s.shape = ShapeKind::Sphere;
  LabeledCloud<T> out;
  out.cloud = make_points<T>(s, channels);
  const auto xyz = out.cloud.coords.data();
  for (std::size_t i = 0; i < s.points; ++i) out.labels.push_back(xyz[i * 3 + 2] > T(0) ? 1 : 0);
  return out;
}

#define S3F_INSTANTIATE(T)                                                    \
  template VoxelGrid<T> make_voxels(const SyntheticSpec&);                    \
  template PointCloud<T> make_points(const SyntheticSpec&, std::size_t);      \
  template LabeledCloud<T> make_hemispheres(const SyntheticSpec&, std::size_t);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
