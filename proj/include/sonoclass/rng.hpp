// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace sono {

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t hash_string(std::string_view text);
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b);

// Deterministic stream. Conversions from raw bits are done here rather than
// through <random> distributions, whose output is implementation-defined, so
// identical keys give identical draws on every platform.
class SampleRng {
 public:
  explicit SampleRng(std::uint64_t seed);

  // Stream keyed by (global_seed, item id, epoch).
  static SampleRng keyed(std::uint64_t global_seed, std::string_view id, std::uint64_t epoch);

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform();
  // [lo, hi]; returns lo exactly when lo == hi.
  double uniform(double lo, double hi);
  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sono
