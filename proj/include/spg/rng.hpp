#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace spg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent seed stream from a base seed, a purpose tag and up
/// to two integer qualifiers (domain id, task id, ...). Stable across builds.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base ^ fnv1a64(tag));
  h = splitmix64(h ^ splitmix64(a + 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ splitmix64(b + 0x7f4a7c159e3779b9ULL));
  return h;
}

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and implements its own distributions so that
/// streams are identical across standard libraries and platforms.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n). Rejection sampling; bias-free.
  std::size_t index(std::size_t n) {
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return static_cast<std::size_t>(r % span);
  }

  std::vector<double> normal_vec(std::size_t n, double mean = 0.0, double stddev = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(mean, stddev);
    return v;
  }

  /// Uniform point on the unit sphere in R^d.
  std::vector<double> unit_vector(std::size_t d) {
    std::vector<double> v;
    double norm_sq = 0.0;
    do {
      v = normal_vec(d);
      norm_sq = 0.0;
      for (double x : v) norm_sq += x * x;
    } while (norm_sq < 1e-24);
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& x : v) x *= inv;
    return v;
  }

  /// Fisher-Yates shuffle with this generator.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace spg
