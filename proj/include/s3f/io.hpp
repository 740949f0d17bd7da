// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "s3f/pointcloud.hpp"

namespace s3f {

class FormatError : public Error {
 public:
  FormatError(std::string op, const std::string& what, std::size_t offset)
      : Error(std::move(op), what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Whitespace-separated rows "x y z [c1 ... cC]". Blank lines and lines
// starting with '#' are skipped.
struct XyzTable {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
};

XyzTable parse_xyz(std::string_view text);
std::string format_xyz(const XyzTable& table);

template <typename T>
struct LabeledCloud {
  PointCloud<T> cloud;
  std::vector<int> labels;  // per point, or empty
};

// Columns 3.. become features. With `label_column` the last column is
// an integer per-point label instead.
template <typename T>
LabeledCloud<T> to_cloud(const XyzTable& table, bool label_column);
template <typename T>
XyzTable from_cloud(const PointCloud<T>& cloud, const std::vector<int>& labels = {});

template <typename T>
LabeledCloud<T> read_xyz(const std::filesystem::path& path, bool label_column);

// Binary PGM/PPM (P5/P6, maxval <= 255) as (H, W, C) in [0, 1].
template <typename T>
Tensor<T> parse_pnm(std::span<const std::uint8_t> bytes);
template <typename T>
std::vector<std::uint8_t> encode_pnm(const Tensor<T>& image);
template <typename T>
Tensor<T> read_pnm(const std::filesystem::path& path);

template <typename T>
struct SampledCloud {
  PointCloud<T> cloud;
  std::vector<std::size_t> index;  // source row of each sampled point
  bool with_replacement = false;
};

// n <= N draws n distinct rows; n > N keeps every row once and fills the rest
// with uniform draws, setting `with_replacement`.
template <typename T>
SampledCloud<T> sample_points(const PointCloud<T>& pc, std::size_t n, std::uint64_t seed);

}  // namespace s3f
