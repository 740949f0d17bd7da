// SPDX-License-Identifier: Apache-2.0
#include <cstring>

#include "doctest.h"
#include "s3f/archive.hpp"
#include "s3f/binvox.hpp"
#include "s3f/io.hpp"
#include "support/common.hpp"

using namespace s3f;
using s3f::testing::random_tensor;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::vector<std::uint8_t> binvox_bytes(std::size_t d, const std::vector<std::uint8_t>& runs) {
  auto out = bytes_of("#binvox 1\ndim " + std::to_string(d) + " " + std::to_string(d) + " " + std::to_string(d) +
                      "\ntranslate 0 0 0\nscale 1\ndata\n");
  out.insert(out.end(), runs.begin(), runs.end());
  return out;
}

}  // namespace

TEST_CASE("archive round trip is bit-exact with aligned payloads") {
  NamedTensorArchive a;
  a.put("b", random_tensor<float>({3, 5}, 1));
  a.put("a", random_tensor<double>({7}, 2));
  a.put("empty", Tensor<double>({0, 4}, {}));
  a.metadata()["note"] = "hi";
  const auto bytes = a.serialize();
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  CHECK((8 + len) % 64 == 0);
  const auto b = NamedTensorArchive::deserialize(bytes);
  CHECK(b.serialize() == bytes);
  CHECK(b.names() == std::vector<std::string>{"a", "b", "empty"});
  CHECK(b.entry("b").dtype == DType::F32);
  CHECK(b.metadata().at("note") == "hi");
  CHECK(s3f::testing::bit_equal(b.get<float>("b").data(), a.get<float>("b").data()));
  // Dtype conversion on read.
  CHECK(b.get<double>("b")[0] == static_cast<double>(a.get<float>("b")[0]));
}

TEST_CASE("archive rejects damaged files with a byte offset") {
  NamedTensorArchive a;
  a.put("x", random_tensor<double>({4}, 3));
  auto bytes = a.serialize();
  auto truncated = bytes;
  truncated.resize(truncated.size() - 1);
  try {
    NamedTensorArchive::deserialize(truncated);
    FAIL("expected an error");
  } catch (const ArchiveError& e) {
    CHECK(std::string(e.what()).find("past the end") != std::string::npos);
  }
  CHECK_THROWS_AS(NamedTensorArchive::deserialize(std::vector<std::uint8_t>{1, 2, 3}), ArchiveError);
  auto bad_json = bytes;
  bad_json[8] = '[';
  CHECK_THROWS_AS(NamedTensorArchive::deserialize(bad_json), ArchiveError);
  // Fuzz: single-byte corruption never crashes.
  RngStream rng(4);
  for (int i = 0; i < 500; ++i) {
    auto f = bytes;
    f[rng.below(f.size())] = static_cast<std::uint8_t>(rng.below(256));
    try {
      NamedTensorArchive::deserialize(f);
    } catch (const Error&) {
    }
  }
}

TEST_CASE("load_params names missing tensors and shape mismatches") {
  NamedTensorArchive a;
  a.put("w", random_tensor<double>({2, 2}, 5));
  ParamList<double> ok{{"w", Tensor<double>::zeros({2, 2})}};
  load_params(a, ok);
  CHECK(ok[0].second[3] == a.get<double>("w")[3]);
  ParamList<double> missing{{"v", Tensor<double>::zeros({2})}};
  CHECK_THROWS_WITH_AS(load_params(a, missing), doctest::Contains("v"), Error);
  ParamList<double> shape{{"w", Tensor<double>::zeros({4})}};
  CHECK_THROWS_WITH_AS(load_params(a, shape), doctest::Contains("'w'"), Error);
}

TEST_CASE("binvox run-length decoding") {
  auto f = decode_binvox(binvox_bytes(2, {1, 5, 0, 3}));
  CHECK(f.voxels == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});
}

TEST_CASE("binvox 30^3 decodes 27000 voxels") {
  std::vector<std::uint8_t> runs;
  std::size_t left = 27000;
  while (left) {
    const std::size_t n = std::min<std::size_t>(left, 200);
    runs.push_back(static_cast<std::uint8_t>(left % 2));
    runs.push_back(static_cast<std::uint8_t>(n));
    left -= n;
  }
  auto f = decode_binvox(binvox_bytes(30, runs));
  CHECK(f.voxels.size() == 27000);
  CHECK(to_grid<float>(f).values.shape() == Shape{30, 30, 30, 1});
}

TEST_CASE("binvox axis order: y fastest, then z, then x") {
  // d = 2; file index 1 is (x0, y1, z0), index 2 is (x0, y0, z1), index 4 is (x1, y0, z0).
  for (auto [index, x, y, z] : {std::array<std::size_t, 4>{1, 0, 1, 0}, {2, 0, 0, 1}, {4, 1, 0, 0}}) {
    std::vector<std::uint8_t> runs;
    if (index) runs.insert(runs.end(), {0, static_cast<std::uint8_t>(index)});
    runs.insert(runs.end(), {1, 1});
    if (index < 7) runs.insert(runs.end(), {0, static_cast<std::uint8_t>(7 - index)});
    auto g = to_grid<double>(decode_binvox(binvox_bytes(2, runs)));
    CHECK(g.values[(x * 2 + y) * 2 + z] == 1.0);
    double total = 0;
    for (double v : g.values.data()) total += v;
    CHECK(total == 1.0);
  }
}

TEST_CASE("binvox errors are distinct and carry offsets") {
  auto kind = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_binvox(b);
    } catch (const BinvoxError& e) {
      return e.kind();
    }
    FAIL("expected an error");
    return BinvoxErrorKind::BadMagic;
  };
  CHECK(kind(bytes_of("#binvox 2\n")) == BinvoxErrorKind::BadMagic);
  CHECK(kind(bytes_of("#binvox 1\ndim 2 2 3\ndata\n")) == BinvoxErrorKind::BadHeader);
  CHECK(kind(binvox_bytes(2, {1, 5})) == BinvoxErrorKind::Truncated);
  CHECK(kind(binvox_bytes(2, {1, 9})) == BinvoxErrorKind::Overflow);
  CHECK(kind(binvox_bytes(2, {2, 8})) == BinvoxErrorKind::BadRun);
  CHECK(kind(binvox_bytes(2, {1, 0, 1, 8})) == BinvoxErrorKind::BadRun);
  try {
    decode_binvox(binvox_bytes(2, {1, 5, 7, 3}));
  } catch (const BinvoxError& e) {
    CHECK(e.offset() == binvox_bytes(2, {}).size() + 2);
  }
}

TEST_CASE("binvox encode inverts decode") {
  RngStream rng(6);
  for (int i = 0; i < 50; ++i) {
    BinvoxFile f;
    f.dim = 1 + rng.below(12);
    f.translate = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    f.scale = rng.uniform(0.1, 3);
    const double p = rng.uniform();
    for (std::size_t j = 0; j < f.dim * f.dim * f.dim; ++j) f.voxels.push_back(rng.uniform() < p);
    const auto bytes = encode_binvox(f);
    const auto g = decode_binvox(bytes);
    CHECK(g.voxels == f.voxels);
    CHECK(g.translate == f.translate);
    CHECK(g.scale == f.scale);
    CHECK(encode_binvox(g) == bytes);
    CHECK(from_grid(to_grid<float>(g)).voxels == g.voxels);
  }
}

TEST_CASE("xyz parsing") {
  auto t = parse_xyz("# header\n0 1 2 3\n4 5 6 7\n\n8 9 10 11\n");
  CHECK(t.rows == 3);
  CHECK(t.cols == 4);
  auto lc = to_cloud<double>(t, false);
  CHECK(lc.cloud.feats.shape() == Shape{3, 1});
  auto labeled = to_cloud<double>(t, true);
  CHECK(labeled.labels == std::vector<int>{3, 7, 11});
  CHECK(parse_xyz(format_xyz(t)).values == t.values);
  try {
    parse_xyz("0 1 2\n3 4\n");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 6);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  try {
    parse_xyz("0 1 2\n3 x 5\n");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
  CHECK_THROWS_AS(parse_xyz("0 1\n"), FormatError);
  CHECK_THROWS_AS(parse_xyz(""), FormatError);
}

TEST_CASE("pnm round trip") {
  auto img = Tensor<double>({2, 3, 3}, std::vector<double>(18, 0.0));
  for (std::size_t i = 0; i < 18; ++i) img.mutable_data()[i] = static_cast<double>(i) / 17.0;
  auto back = parse_pnm<double>(encode_pnm(img));
  CHECK(back.shape() == img.shape());
  CHECK(s3f::testing::max_abs_diff(back.data(), img.data()) <= 0.5 / 255 + 1e-12);
  CHECK_THROWS_AS(parse_pnm<double>(bytes_of("P3\n1 1\n255\n")), FormatError);
  CHECK_THROWS_AS(parse_pnm<double>(bytes_of("P5\n4 4\n255\n\x01")), FormatError);
}

TEST_CASE("point sampling") {
  PointCloud<double> pc{random_tensor({10, 3}, 7), random_tensor({10, 2}, 8)};
  auto all = sample_points(pc, 10, 1);
  auto sorted = all.index;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  CHECK_FALSE(all.with_replacement);
  auto a = sample_points(pc, 4, 9), b = sample_points(pc, 4, 9);
  CHECK(a.index == b.index);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.cloud.coords[i * 3 + 2] == pc.coords[a.index[i] * 3 + 2]);
    CHECK(a.cloud.feats[i * 2 + 1] == pc.feats[a.index[i] * 2 + 1]);
  }
  auto up = sample_points(pc, 25, 2);
  CHECK(up.with_replacement);
  CHECK(up.cloud.size() == 25);
  CHECK_THROWS_AS(sample_points(PointCloud<double>{Tensor<double>({0, 3}, {}), Tensor<double>({0, 0}, {})}, 4, 1),
                  Error);
}
