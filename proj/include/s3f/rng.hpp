// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace s3f {

// Counter-based generator: draw i of stream (seed, key) is a pure function of
// (seed, key, i), so workers can split a stream without sharing state and the
// sequence is identical on every platform. The mixer is SplitMix64.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t key = 0) : seed_(seed), key_(key) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  // Independent child stream; the parent is not advanced.
  RngStream fork(std::uint64_t key) const { return RngStream(seed_, mix(key_ ^ mix(key + 0x5851f42d4c957f2dULL))); }

  std::uint64_t next_u64() { return at(counter_++); }
  std::uint64_t at(std::uint64_t index) const { return mix(seed_ ^ mix(key_ + 0x9e3779b97f4a7c15ULL * (index + 1))); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller (one value per two uniforms, no caching so
  // the state is just the counter).
  double normal();

  // Normal(0, std) truncated to [-2 std, 2 std] by rejection.
  double truncated_normal(double stddev);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace s3f
