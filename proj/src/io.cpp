// SPDX-License-Identifier: Apache-2.0
#include "s3f/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "s3f/archive.hpp"

namespace s3f {

XyzTable parse_xyz(std::string_view text) {
  XyzTable t;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    const std::size_t line_start = pos;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::size_t i = 0, cols = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i == line.size() || line[i] == '#') continue;
    while (i < line.size()) {
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      double v = 0;
      auto [p, ec] = std::from_chars(line.data() + i, line.data() + j, v);
      if (ec != std::errc() || p != line.data() + j || !std::isfinite(v))
        throw FormatError("xyz", "line " + std::to_string(line_no) + ": bad number '" +
                                     std::string(line.substr(i, j - i)) + "'",
                          line_start + i);
      t.values.push_back(v);
      ++cols;
      i = j;
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    }
    if (t.rows == 0) {
      if (cols < 3) throw FormatError("xyz", "line " + std::to_string(line_no) + ": fewer than 3 columns", line_start);
      t.cols = cols;
    } else if (cols != t.cols) {
      throw FormatError("xyz",
                        "line " + std::to_string(line_no) + ": " + std::to_string(cols) + " columns, expected " +
                            std::to_string(t.cols),
                        line_start);
    }
    ++t.rows;
  }
  if (t.rows == 0) throw FormatError("xyz", "no points", text.size());
  return t;
}

std::string format_xyz(const XyzTable& t) {
  std::string out;
  char buf[64];
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, t.values[r * t.cols + c]);
      if (c) out += ' ';
      out.append(buf, p);
    }
    out += '\n';
  }
  return out;
}

template <typename T>
LabeledCloud<T> to_cloud(const XyzTable& t, bool label_column) {
  check(t.cols >= (label_column ? 4u : 3u), "xyz", "too few columns for coordinates" + std::string(label_column ? " and label" : ""));
  const std::size_t c = t.cols - 3 - (label_column ? 1 : 0);
  std::vector<T> xyz(t.rows * 3), feats(t.rows * c);
  LabeledCloud<T> out;
  for (std::size_t r = 0; r < t.rows; ++r) {
    const double* row = t.values.data() + r * t.cols;
    for (std::size_t j = 0; j < 3; ++j) xyz[r * 3 + j] = static_cast<T>(row[j]);
    for (std::size_t j = 0; j < c; ++j) feats[r * c + j] = static_cast<T>(row[3 + j]);
    if (label_column) {
      const double l = row[t.cols - 1];
      check(l >= 0 && l == std::floor(l) && l < 1e6, "xyz", "row " + std::to_string(r + 1) + ": label is not a small non-negative integer");
      out.labels.push_back(static_cast<int>(l));
    }
  }
  out.cloud = {Tensor<T>({t.rows, 3}, std::move(xyz)), Tensor<T>({t.rows, c}, std::move(feats))};
  return out;
}

template <typename T>
XyzTable from_cloud(const PointCloud<T>& pc, const std::vector<int>& labels) {
  const std::size_t n = pc.size(), c = pc.channels();
  check(labels.empty() || labels.size() == n, "xyz", "label count does not match point count");
  XyzTable t;
  t.rows = n;
  t.cols = 3 + c + (labels.empty() ? 0 : 1);
  const auto xyz = pc.coords.data();
  const auto f = pc.feats.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < 3; ++j) t.values.push_back(static_cast<double>(xyz[r * 3 + j]));
    for (std::size_t j = 0; j < c; ++j) t.values.push_back(static_cast<double>(f[r * c + j]));
    if (!labels.empty()) t.values.push_back(labels[r]);
  }
  return t;
}

template <typename T>
LabeledCloud<T> read_xyz(const std::filesystem::path& path, bool label_column) {
  const auto bytes = read_file(path);
  return to_cloud<T>(parse_xyz(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())),
                     label_column);
}

template <typename T>
Tensor<T> parse_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        return;
      }
    }
  };
  auto number = [&] {
    skip();
    const std::size_t at = pos;
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(reinterpret_cast<const char*>(bytes.data()) + pos,
                                   reinterpret_cast<const char*>(bytes.data()) + bytes.size(), v);
    if (ec != std::errc()) throw FormatError("pnm", "expected a number", at);
    pos = static_cast<std::size_t>(p - reinterpret_cast<const char*>(bytes.data()));
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("pnm", "not a binary PGM/PPM", 0);
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0 || w > 1 << 14 || h > 1 << 14) throw FormatError("pnm", "bad image size", pos);
  if (maxval == 0 || maxval > 255) throw FormatError("pnm", "maxval must be in 1..255", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pnm", "missing separator", pos);
  ++pos;
  const std::size_t n = w * h * c;
  if (bytes.size() - pos < n) throw FormatError("pnm", "pixel data ends early", bytes.size());
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(bytes[pos + i]) / static_cast<T>(maxval);
  return Tensor<T>({h, w, c}, std::move(v));
}

template <typename T>
std::vector<std::uint8_t> encode_pnm(const Tensor<T>& image) {
  check(image.rank() == 3 && (image.dim(2) == 1 || image.dim(2) == 3), "pnm", "image must be (H, W, 1|3)");
  const std::string h = std::string(image.dim(2) == 1 ? "P5" : "P6") + "\n" + std::to_string(image.dim(1)) + " " +
                        std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (T v : image.data()) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp<double>(v, 0, 1) * 255)));
  return out;
}

template <typename T>
Tensor<T> read_pnm(const std::filesystem::path& path) {
  return parse_pnm<T>(read_file(path));
}

template <typename T>
SampledCloud<T> sample_points(const PointCloud<T>& pc, std::size_t n, std::uint64_t seed) {
  const std::size_t total = pc.coords.rank() == 2 ? pc.size() : 0;
  check(total > 0, "sample_points", "empty point cloud");
  check(n > 0, "sample_points", "sample size must be positive");
  RngStream rng(seed, 0x73616d70);
  SampledCloud<T> out;
  out.index = rng.permutation(total);
  if (n <= total) {
    out.index.resize(n);
  } else {
    out.with_replacement = true;
    while (out.index.size() < n) out.index.push_back(rng.below(total));
  }
  const std::size_t c = pc.channels();
  std::vector<T> xyz(n * 3), f(n * c);
  const auto sx = pc.coords.data();
  const auto sf = pc.feats.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = out.index[i];
    std::copy_n(sx.begin() + static_cast<std::ptrdiff_t>(r * 3), 3, xyz.begin() + static_cast<std::ptrdiff_t>(i * 3));
    std::copy_n(sf.begin() + static_cast<std::ptrdiff_t>(r * c), c, f.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  out.cloud = {Tensor<T>({n, 3}, std::move(xyz)), Tensor<T>({n, c}, std::move(f))};
  return out;
}

#define S3F_INSTANTIATE(T)                                                             \
  template LabeledCloud<T> to_cloud(const XyzTable&, bool);                            \
  template XyzTable from_cloud(const PointCloud<T>&, const std::vector<int>&);         \
  template LabeledCloud<T> read_xyz(const std::filesystem::path&, bool);               \
  template Tensor<T> parse_pnm(std::span<const std::uint8_t>);                         \
  template std::vector<std::uint8_t> encode_pnm(const Tensor<T>&);                     \
  template Tensor<T> read_pnm(const std::filesystem::path&);                           \
  template SampledCloud<T> sample_points(const PointCloud<T>&, std::size_t, std::uint64_t);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
