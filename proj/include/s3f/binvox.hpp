// SPDX-License-Identifier: Apache-2.0
//
// binvox v1 reader/writer.
//
//   #binvox 1
//   dim d d d
//   translate tx ty tz
//   scale s
//   data
//   <(value, count) byte pairs>
//
// Voxels are stored with y running fastest, then z, then x:
// index = x * d * d + z * d + y. Decoded grids use (H, W, Z) = (x, y, z).
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "s3f/voxel.hpp"

namespace s3f {

enum class BinvoxErrorKind { BadMagic, BadHeader, Truncated, Overflow, BadRun };

class BinvoxError : public Error {
 public:
  BinvoxError(BinvoxErrorKind kind, const std::string& what, std::size_t offset)
      : Error("binvox", what + " at byte " + std::to_string(offset)), kind_(kind), offset_(offset) {}

  BinvoxErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  BinvoxErrorKind kind_;
  std::size_t offset_;
};

struct BinvoxFile {
  std::size_t dim = 0;
  std::array<double, 3> translate{0, 0, 0};
  double scale = 1.0;
  std::vector<std::uint8_t> voxels;  // d^3 occupancy in file order

  std::size_t file_index(std::size_t x, std::size_t y, std::size_t z) const { return (x * dim + z) * dim + y; }
};

// Largest accepted edge; keeps fuzzed headers from requesting huge buffers.
inline constexpr std::size_t kBinvoxMaxDim = 512;

BinvoxFile decode_binvox(std::span<const std::uint8_t> bytes);
// Canonical output: runs of at most 255, shortest round-trip decimals.
std::vector<std::uint8_t> encode_binvox(const BinvoxFile& file);

template <typename T>
VoxelGrid<T> to_grid(const BinvoxFile& file);
// Cells above 0.5 in channel 0 are occupied. The grid must be cubic.
template <typename T>
BinvoxFile from_grid(const VoxelGrid<T>& grid);

template <typename T>
VoxelGrid<T> read_binvox(const std::filesystem::path& path);

}  // namespace s3f
