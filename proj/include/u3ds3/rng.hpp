#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace u3ds3 {

// SplitMix64, used to expand a user seed into stream-specific seeds.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

// PCG32 generator. All randomized behavior in the library goes through this
// class so results are reproducible across platforms and build modes.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream = 0) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0;
    next_u32();
    state_ += seed;
    next_u32();
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via Lemire's multiply-shift with rejection.
  uint64_t uniform_index(uint64_t n) {
    if (n < 2) return 0;
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    uint64_t lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

  // Poisson draw: Knuth's product method for small lambda, rounded normal
  // approximation above 256 where the product would underflow.
  uint64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda <= 256.0) {
      double limit = std::exp(-lambda);
      uint64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform();
      } while (p > limit);
      return k - 1;
    }
    double x = std::round(gaussian(lambda, std::sqrt(lambda)));
    return x < 0.0 ? 0 : static_cast<uint64_t>(x);
  }

  // Fisher-Yates over indices [0, n).
  template <class Vec>
  void shuffle(Vec& v) {
    for (uint64_t i = v.size(); i > 1; --i) {
      uint64_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  struct State {
    uint64_t state, inc;
    bool has_spare;
    double spare;
  };
  State save() const { return {state_, inc_, has_spare_, spare_}; }
  void restore(const State& s) {
    state_ = s.state;
    inc_ = s.inc;
    has_spare_ = s.has_spare;
    spare_ = s.spare;
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent generator from a root seed and a path of stream ids,
// so that unrelated pipeline stages never share a stream.
inline Rng derive_rng(uint64_t seed, std::initializer_list<uint64_t> path) {
  SplitMix64 mix(seed);
  uint64_t s = mix.next();
  uint64_t stream = 0;
  for (uint64_t p : path) {
    SplitMix64 m2(s ^ (p + 0x9e3779b97f4a7c15ull));
    s = m2.next();
    stream = m2.next();
  }
  return Rng(s, stream);
}

}  // namespace u3ds3
