#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <type_traits>

namespace prcl {

// splitmix64 finalizer.
constexpr uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr uint64_t key_hash(std::string_view s) {
  // FNV-1a
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Counter-style deterministic stream. A stream is keyed by (seed, k1, k2, ...)
// and draws are sequential within it. Streams with distinct keys are
// statistically independent, so work items (samples, trials, probes) can be
// processed in any order or in parallel without changing any drawn value.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : state_(mix64(seed ^ 0x6a09e667f3bcc909ull)) {}

  template <class... K>
  RngStream(uint64_t seed, K... keys) : RngStream(seed) {
    (absorb(keys), ...);
  }

  void absorb(uint64_t k) { state_ = mix64(state_ ^ mix64(k)); }
  void absorb(std::string_view s) { absorb(key_hash(s)); }
  template <class T, class = std::enable_if_t<std::is_integral_v<T>>>
  void absorb(T k) {
    absorb(static_cast<uint64_t>(k));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform in [-q, +q].
  double next_symmetric(double q) { return next_uniform(-q, q); }

  // +1 or -1 with equal probability.
  double next_sign() { return (next_u64() & 1u) ? 1.0 : -1.0; }

  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; next_unit() can return 0, shift into (0, 1].
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, n).
  uint64_t next_below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace prcl
