/* Copyright 2026 The refguard Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, stream, index), so results do not depend on evaluation order or on
// how work is split across threads.
//
// Layout of the 128-bit Philox counter: words 0-1 hold the stream tag,
// words 2-3 hold the draw index. The 64-bit key is derived from the
// experiment seed and the query id.
//
// Transforms (fixed; golden tests depend on them):
//   uniform: the top 53 bits of (word1 << 32 | word0), scaled to [0, 1).
//   normal:  Box-Muller, cosine branch only, u1 from words 0-1 mapped to
//            (0, 1], u2 from words 2-3 mapped to [0, 1).
//   bernoulli(p): uniform < p.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace refguard {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds.
inline Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Key of the substream family owned by one query under one experiment seed.
inline std::uint64_t derive_key(std::uint64_t seed, std::string_view query_id) {
  return splitmix64(seed ^ splitmix64(fnv1a64(query_id)));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt + 0x632BE59BD9B4E019ull));
}

/// Stream tags. The high byte names the purpose, the rest is a local index.
namespace streams {
inline constexpr std::uint64_t kBase = 0;
inline constexpr std::uint64_t direction(std::uint64_t i) { return 1 + i; }
inline constexpr std::uint64_t kResponse = 0x01ull << 56;
inline constexpr std::uint64_t kDirectionDraw = 0x02ull << 56;
inline constexpr std::uint64_t landscape_cell(std::uint64_t cell) {
  return (0x03ull << 56) | (cell & 0x00FFFFFFFFFFFFFFull);
}
inline constexpr std::uint64_t kAttack = 0x04ull << 56;
inline constexpr std::uint64_t kPopulation = 0x05ull << 56;
inline constexpr std::uint64_t kShuffle = 0x06ull << 56;
}  // namespace streams

/// Stateless view of one (key, stream) substream; draws are addressed by index.
class CounterRng {
 public:
  CounterRng(std::uint64_t key, std::uint64_t stream) : key_(key), stream_(stream) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t stream() const { return stream_; }

  Philox4x32Counter block(std::uint64_t index) const {
    const Philox4x32Counter ctr = {
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32),
        static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    const Philox4x32Key key = {static_cast<std::uint32_t>(key_),
                               static_cast<std::uint32_t>(key_ >> 32)};
    return philox4x32(ctr, key);
  }

  std::uint64_t bits64(std::uint64_t index) const {
    const auto b = block(index);
    return (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
  }

  double uniform(std::uint64_t index) const {
    return static_cast<double>(bits64(index) >> 11) * 0x1.0p-53;
  }

  double normal(std::uint64_t index) const {
    const auto b = block(index);
    const std::uint64_t w01 = (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
    const std::uint64_t w23 = (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
    const double u1 = (static_cast<double>(w01 >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(w23 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(std::uint64_t index, double p) const { return uniform(index) < p; }

  /// Uniform integer in [0, bound) by multiply-shift on 64 bits.
  std::uint64_t below(std::uint64_t index, std::uint64_t bound) const {
    const unsigned __int128 m = static_cast<unsigned __int128>(bits64(index)) * bound;
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
};

/// Sequential cursor over a substream for code that just wants "the next draw".
class RngCursor {
 public:
  RngCursor(std::uint64_t key, std::uint64_t stream) : rng_(key, stream) {}

  double uniform() { return rng_.uniform(next_++); }
  double normal() { return rng_.normal(next_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t bound) { return rng_.below(next_++, bound); }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  CounterRng rng_;
  std::uint64_t next_ = 0;
};

}  // namespace refguard
