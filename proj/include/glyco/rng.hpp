#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace glyco {

// Counter-based PRNG (Philox4x32-10). A generator is (key, counter); jumping
// to any point of the stream is O(1) and substreams are derived by re-keying,
// so parallel use never depends on call order.
//
// Substream derivation: child key = mix(parent key, fnv1a(name), index).
// The same (seed, name, index) triple always yields the same stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { set_key(seed); }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  Rng derive(std::string_view name, std::uint64_t index = 0) const {
    std::uint64_t k = key_lo_ | (std::uint64_t(key_hi_) << 32);
    k = mix64(k ^ fnv1a(name));
    k = mix64(k ^ index);
    Rng child;
    child.set_key(k);
    return child;
  }

  std::uint32_t next_u32() {
    if (have_ == 0) refill();
    return out_[--have_];
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Log-uniform on [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // Integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + std::int64_t(bounded(span));
  }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Poisson draw; Knuth's product method for small rates, transformed
  // rejection (Hormann's PTRS) above it.
  std::int64_t poisson(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw std::invalid_argument("poisson: rate must be finite and >= 0");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) {
      double l = std::exp(-lambda);
      std::int64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform01();
      } while (p > l);
      return k - 1;
    }
    return poisson_ptrs(lambda);
  }

 private:
  void set_key(std::uint64_t seed) {
    std::uint64_t k = mix64(seed ^ 0x9e3779b97f4a7c15ull);
    key_lo_ = std::uint32_t(k);
    key_hi_ = std::uint32_t(k >> 32);
    ctr_[0] = ctr_[1] = ctr_[2] = ctr_[3] = 0;
    have_ = 0;
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
    std::uint64_t p = std::uint64_t(a) * b;
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
  }

  void refill() {
    std::uint32_t c0 = ctr_[0], c1 = ctr_[1], c2 = ctr_[2], c3 = ctr_[3];
    std::uint32_t k0 = key_lo_, k1 = key_hi_;
    for (int round = 0; round < 10; ++round) {
      std::uint32_t hi0, lo0, hi1, lo1;
      mulhilo(0xD2511F53u, c0, hi0, lo0);
      mulhilo(0xCD9E8D57u, c2, hi1, lo1);
      std::uint32_t n0 = hi1 ^ c1 ^ k0;
      std::uint32_t n1 = lo1;
      std::uint32_t n2 = hi0 ^ c3 ^ k1;
      std::uint32_t n3 = lo0;
      c0 = n0;
      c1 = n1;
      c2 = n2;
      c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    out_[0] = c0;
    out_[1] = c1;
    out_[2] = c2;
    out_[3] = c3;
    have_ = 4;
    if (++ctr_[0] == 0 && ++ctr_[1] == 0 && ++ctr_[2] == 0) ++ctr_[3];
  }

  std::uint64_t bounded(std::uint64_t n) {
    // Lemire's multiply-shift with rejection of the biased zone.
    std::uint64_t x = next_u64();
    __uint128_t m = __uint128_t(x) * n;
    std::uint64_t lo = std::uint64_t(m);
    if (lo < n) {
      std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = __uint128_t(x) * n;
        lo = std::uint64_t(m);
      }
    }
    return std::uint64_t(m >> 64);
  }

  std::int64_t poisson_ptrs(double lambda) {
    double b = 0.931 + 2.53 * std::sqrt(lambda);
    double a = -0.059 + 0.02483 * b;
    double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    double v_r = 0.9277 - 3.6224 / (b - 2.0);
    double log_lam = std::log(lambda);
    for (;;) {
      double u = uniform01() - 0.5;
      double v = uniform01();
      double us = 0.5 - std::fabs(u);
      double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= v_r) return std::int64_t(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          k * log_lam - lambda - std::lgamma(k + 1.0))
        return std::int64_t(k);
    }
  }

  std::uint32_t key_lo_ = 0, key_hi_ = 0;
  std::uint32_t ctr_[4] = {0, 0, 0, 0};
  std::uint32_t out_[4] = {0, 0, 0, 0};
  int have_ = 0;
};

}  // namespace glyco
