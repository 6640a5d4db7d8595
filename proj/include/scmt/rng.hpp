#ifndef SCMT_RNG_HPP_
#define SCMT_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Deterministic random source. All distributions are implemented by hand on
// top of mt19937_64 so that a given seed yields the same stream on every
// platform; std::*_distribution would not give that guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(detail::splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }

  // Independent substream; stable under the master seed regardless of how
  // many draws have been consumed from this instance.
  Rng derive(uint64_t stream) const {
    return Rng(detail::splitmix64(seed_ ^ (0xd1b54a32d192ed03ULL * (stream + 1))));
  }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    SCMT_REQUIRE(lo <= hi, "uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(eng_());  // full 64-bit range
    // Rejection sampling to avoid modulo bias.
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
  }

  // Marsaglia polar method with a cached spare.
  double normal(double mu = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + sigma * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return mu + sigma * u * m;
  }

  // Normal restricted to [lo, hi] by rejection; the bounds are guaranteed.
  double truncated_normal(double mu, double sigma, double lo, double hi) {
    SCMT_REQUIRE(lo < hi, "truncated_normal: empty interval");
    for (;;) {
      double x = normal(mu, sigma);
      if (x >= lo && x <= hi) return x;
    }
  }

  // Marsaglia-Tsang; shape < 1 handled via the boost identity.
  double gamma(double shape) {
    SCMT_REQUIRE(shape > 0.0, "gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scmt

#endif  // SCMT_RNG_HPP_
