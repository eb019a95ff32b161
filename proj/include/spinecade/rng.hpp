#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace spinecade {

/// Seeded random source with fixed output mappings.
///
/// The engine is std::mt19937_64, whose raw sequence is pinned by the
/// standard. The uniform/normal/index mappings are spelled out here instead
/// of using std:: distributions, whose output is implementation-defined;
/// seeded runs therefore reproduce bit-identically on any toolchain.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Unbiased integer in [0, n). n must be > 0.
  uint64_t index(uint64_t n) {
    const uint64_t rem = std::numeric_limits<uint64_t>::max() % n;
    const uint64_t bound =
        std::numeric_limits<uint64_t>::max() - rem;  // multiple of n minus 1
    uint64_t x = engine_();
    while (x > bound) x = engine_();
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Derives an independent stream seed from a base seed and a tag, so that
/// e.g. shuffling and weight init never share a stream. FNV-1a over the tag,
/// mixed with the base seed.
inline uint64_t derive_seed(uint64_t base, std::string_view tag) {
  uint64_t h = 1469598103934665603ull ^ base;
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  h ^= base >> 32;
  h *= 1099511628211ull;
  return h;
}

}  // namespace spinecade
