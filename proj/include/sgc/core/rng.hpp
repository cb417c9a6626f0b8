#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "sgc/core/types.hpp"

namespace sgc {

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic counter-style generator (xoshiro256** seeded via splitmix).
// Used instead of <random> engines so that sampled values are identical
// across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // multiply-shift; bias is negligible for n << 2^64
    return std::uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; computes a fresh pair each call so the consumption pattern
  // does not depend on call parity.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // normal(0, std) resampled until within +-2 std
  double trunc_normal(double stddev) {
    for (;;) {
      const double v = normal();
      if (std::abs(v) <= 2.0) return v * stddev;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// Named substream derivation: independent streams for augmentation,
// initialization and data order so enabling or disabling one consumer
// cannot shift the randomness seen by another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = fnv1a64(stream);
  std::uint64_t x = seed ^ h;
  return splitmix64(x);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = fnv1a64(stream);
  h = fnv1a64(&a, sizeof a, h);
  h = fnv1a64(&b, sizeof b, h);
  std::uint64_t x = seed ^ h;
  return splitmix64(x);
}

inline Rng named_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

// Per-sample stream: a pure function of (seed, stream, epoch, index), so
// augmentation replays identically regardless of processing order and
// resumes without carried state.
inline Rng sample_rng(std::uint64_t seed, std::string_view stream,
                      std::uint64_t epoch, std::uint64_t index) {
  return Rng(derive_seed(seed, stream, epoch, index));
}

template <typename S>
void fill_trunc_normal(Mat<S>& m, Rng& rng, double stddev) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = S(rng.trunc_normal(stddev));
}

template <typename S>
void fill_uniform(Mat<S>& m, Rng& rng, double lo, double hi) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = S(rng.uniform(lo, hi));
}

// Fisher-Yates over [0, n)
inline std::vector<int> permutation(int n, Rng& rng) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = int(rng.below(std::uint64_t(i) + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

}  // namespace sgc
