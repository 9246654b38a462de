#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace xb {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014). Constants:
///   increment  0x9E3779B97F4A7C15 (golden ratio)
///   multiplier 0xBF58476D1CE4E5B9, 0x94D049BB133111EB; shifts 30, 27, 31
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a of a short tag, used to name independent seed streams.
constexpr std::uint64_t stream_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based seed derivation: a pure function of its arguments, so any
/// sample's seed can be computed without generating the ones before it.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t a = 0,
                                    std::uint64_t b = 0) noexcept {
  std::uint64_t h = splitmix64(master ^ splitmix64(stream));
  h = splitmix64(h ^ splitmix64(a + 0x632BE59BD9B4E019ULL));
  return splitmix64(h ^ splitmix64(b + 0x8CB92BA72F3D8DD7ULL));
}

/// Counter-mode generator: the i-th draw is splitmix64(seed + i * gamma).
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) noexcept : seed_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    return splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * counter_++);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Lemire's multiply-shift, bias < 2^-64 * n.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by Rng.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace xb
