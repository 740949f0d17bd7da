// SPDX-License-Identifier: Apache-2.0
#include "s3f/binvox.hpp"

#include <charconv>
#include <string>
#include <string_view>

#include "s3f/archive.hpp"

namespace s3f {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename V>
bool parse_number(std::string_view s, V& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

void append_number(std::string& s, double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  s.append(buf, p);
}

}  // namespace

BinvoxFile decode_binvox(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) return false;
    line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line) || line != "#binvox 1") throw BinvoxError(BinvoxErrorKind::BadMagic, "missing '#binvox 1'", 0);

  BinvoxFile f;
  bool have_dim = false;
  for (;;) {
    const std::size_t at = pos;
    if (!next_line(line)) throw BinvoxError(BinvoxErrorKind::Truncated, "header ends before 'data'", at);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "data") {
      if (tok.size() != 1) throw BinvoxError(BinvoxErrorKind::BadHeader, "unexpected text after 'data'", at);
      break;
    }
    if (tok[0] == "dim") {
      std::size_t d[3];
      if (tok.size() != 4 || !parse_number(tok[1], d[0]) || !parse_number(tok[2], d[1]) || !parse_number(tok[3], d[2]))
        throw BinvoxError(BinvoxErrorKind::BadHeader, "malformed dim line", at);
      if (d[0] != d[1] || d[1] != d[2]) throw BinvoxError(BinvoxErrorKind::BadHeader, "only cubic grids are supported", at);
      if (d[0] == 0 || d[0] > kBinvoxMaxDim)
        throw BinvoxError(BinvoxErrorKind::BadHeader, "dim " + std::to_string(d[0]) + " out of range", at);
      f.dim = d[0];
      have_dim = true;
    } else if (tok[0] == "translate") {
      if (tok.size() != 4 || !parse_number(tok[1], f.translate[0]) || !parse_number(tok[2], f.translate[1]) ||
          !parse_number(tok[3], f.translate[2]))
        throw BinvoxError(BinvoxErrorKind::BadHeader, "malformed translate line", at);
    } else if (tok[0] == "scale") {
      if (tok.size() != 2 || !parse_number(tok[1], f.scale))
        throw BinvoxError(BinvoxErrorKind::BadHeader, "malformed scale line", at);
    } else {
      throw BinvoxError(BinvoxErrorKind::BadHeader, "unknown header keyword '" + std::string(tok[0]) + "'", at);
    }
  }
  if (!have_dim) throw BinvoxError(BinvoxErrorKind::BadHeader, "no dim line", pos);

  const std::size_t total = f.dim * f.dim * f.dim;
  f.voxels.reserve(total);
  while (f.voxels.size() < total) {
    if (bytes.size() - pos < 2) throw BinvoxError(BinvoxErrorKind::Truncated, "run-length data ends early", pos);
    const std::uint8_t value = bytes[pos], count = bytes[pos + 1];
    if (value > 1) throw BinvoxError(BinvoxErrorKind::BadRun, "run value " + std::to_string(value), pos);
    if (count == 0) throw BinvoxError(BinvoxErrorKind::BadRun, "zero-length run", pos + 1);
    if (count > total - f.voxels.size())
      throw BinvoxError(BinvoxErrorKind::Overflow, "run exceeds " + std::to_string(total) + " voxels", pos + 1);
    f.voxels.insert(f.voxels.end(), count, value);
    pos += 2;
  }
  if (pos != bytes.size()) throw BinvoxError(BinvoxErrorKind::Overflow, "trailing bytes after the last voxel", pos);
  return f;
}

std::vector<std::uint8_t> encode_binvox(const BinvoxFile& f) {
  check(f.voxels.size() == f.dim * f.dim * f.dim, "binvox", "voxel count does not match dim");
  std::string h = "#binvox 1\ndim ";
  for (int i = 0; i < 3; ++i) h += std::to_string(f.dim) + (i < 2 ? " " : "\n");
  h += "translate ";
  for (int i = 0; i < 3; ++i) {
    append_number(h, f.translate[i]);
    h += i < 2 ? " " : "\n";
  }
  h += "scale ";
  append_number(h, f.scale);
  h += "\ndata\n";

  std::vector<std::uint8_t> out(h.begin(), h.end());
  std::size_t i = 0;
  while (i < f.voxels.size()) {
    const std::uint8_t v = f.voxels[i];
    check(v <= 1, "binvox", "voxel values must be 0 or 1");
    std::size_t n = 1;
    while (n < 255 && i + n < f.voxels.size() && f.voxels[i + n] == v) ++n;
    out.push_back(v);
    out.push_back(static_cast<std::uint8_t>(n));
    i += n;
  }
  return out;
}

template <typename T>
VoxelGrid<T> to_grid(const BinvoxFile& f) {
  const std::size_t d = f.dim;
  std::vector<T> v(d * d * d);
  for (std::size_t x = 0; x < d; ++x)
    for (std::size_t y = 0; y < d; ++y)
      for (std::size_t z = 0; z < d; ++z) v[(x * d + y) * d + z] = static_cast<T>(f.voxels[f.file_index(x, y, z)]);
  return {Tensor<T>({d, d, d, 1}, std::move(v)), 1};
}

template <typename T>
BinvoxFile from_grid(const VoxelGrid<T>& g) {
  const auto& s = g.values.shape();
  check(s.size() == 4 && s[0] == s[1] && s[1] == s[2], "binvox", "grid must be (d, d, d, C), got " + shape_str(s));
  BinvoxFile f;
  f.dim = s[0];
  const std::size_t d = f.dim, c = s[3];
  f.voxels.assign(d * d * d, 0);
  const auto v = g.values.data();
  for (std::size_t x = 0; x < d; ++x)
    for (std::size_t y = 0; y < d; ++y)
      for (std::size_t z = 0; z < d; ++z)
        f.voxels[f.file_index(x, y, z)] = v[((x * d + y) * d + z) * c] > T(0.5) ? 1 : 0;
  return f;
}

template <typename T>
VoxelGrid<T> read_binvox(const std::filesystem::path& path) {
  return to_grid<T>(decode_binvox(read_file(path)));
}

#define S3F_INSTANTIATE(T)                                  \
  template VoxelGrid<T> to_grid(const BinvoxFile&);         \
  template BinvoxFile from_grid(const VoxelGrid<T>&);       \
  template VoxelGrid<T> read_binvox(const std::filesystem::path&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
