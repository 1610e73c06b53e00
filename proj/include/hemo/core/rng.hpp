#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace hemo {

namespace detail {

// SplitMix64 finalizer. All randomness in the library goes through this
// mixer so that results are identical across platforms and standard-library
// implementations.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// FNV-1a hash of a string tag, used to name seed-derivation branches.
inline constexpr std::uint64_t seed_tag(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Counter-based seed splitting: a child stream is fully determined by the
// parent seed and the path of tags/counters leading to it. Stages and
// per-record streams are derived this way so any stage can be re-run in
// isolation.
inline constexpr std::uint64_t derive_seed(std::uint64_t base,
                                           std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = detail::mix64(base + 0x9E3779B97F4A7C15ULL);
  for (std::uint64_t p : path) {
    s = detail::mix64(s ^ detail::mix64(p + 0x9E3779B97F4A7C15ULL));
  }
  return s;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return derive_seed(base, {seed_tag(tag)});
}

inline constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                           std::uint64_t counter) {
  return derive_seed(base, {seed_tag(tag), counter});
}

// SplitMix64 generator. Deliberately not std::<engine>: identical output on
// every platform, trivially seedable, and fast enough for everything here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return detail::mix64(state_);
  }

  // Uniform in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller. No cached spare: call order alone
  // determines the stream.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // In-place Fisher-Yates shuffle with this generator.
  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace hemo
