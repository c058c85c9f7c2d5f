#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace osta {

/*
    Counter-based random streams.

    Every stream is addressed by (seed, purpose tag, index). The n-th value of a
    stream is SplitMix64's output function applied to
        key + (n + 1) * 0x9E3779B97F4A7C15
    where key = mix(mix(seed ^ fnv1a(tag)) + index * 0x9E3779B97F4A7C15).
    Values therefore depend only on their address, never on the order in which
    other streams were consumed.
 */

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed derivation for child runs (e.g. one SGS member per combination index).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) noexcept {
  return splitmix64_mix(splitmix64_mix(seed ^ fnv1a64(tag)) + (index + 1) * kGolden);
}

class RandomStream {
public:
  RandomStream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) noexcept
      : key_(splitmix64_mix(splitmix64_mix(seed ^ fnv1a64(tag)) + index * kGolden)) {}

  std::uint64_t next_u64() noexcept { return splitmix64_mix(key_ + (++counter_) * kGolden); }

  /// Uniform on [0, 1) with 53 bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) {
      return 0;
    }
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
      const auto low = static_cast<std::uint64_t>(m);
      if (low >= n || low >= (-n) % n) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-60) {
      u1 = 0x1.0p-60;
    }
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace osta
