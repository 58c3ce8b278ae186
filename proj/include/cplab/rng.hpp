// Counter-based deterministic random generator.
//
// The stream is SplitMix64: output(i) = mix64(seed + i * GAMMA) for i = 1,2,...
// where mix64 is the standard SplitMix64 finalizer. Child streams are derived
// from the parent's seed and a string label:
//
//   child_seed = mix64(seed ^ fnv1a64(label))
//
// Identical (seed, label) always yields the identical stream, independent of
// how much the parent has been consumed, so per-example / per-trial children
// can be drawn in any order (or in parallel) without changing results.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "cplab/error.hpp"
#include "cplab/types.hpp"

namespace cplab::nd {

inline uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed) {}

  uint64_t seed() const { return seed_; }

  Rng child(std::string_view label) const {
    return Rng(mix64(seed_ ^ fnv1a64(label)));
  }

  uint64_t next_u64() {
    counter_ += kGamma;
    return mix64(seed_ + counter_);
  }

  // Uniform in [0,1) with 24 bits of mantissa.
  float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // Uniform in [0,1) with 53 bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t below(uint64_t n) {
    require(n > 0, ErrorKind::argument, "Rng::below: n must be positive");
    const uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % n);
    uint64_t u;
    do {
      u = next_u64();
    } while (u >= limit);
    return u % n;
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] to keep log() finite.
    double u1 = (double((next_u64() >> 11)) + 1.0) * 0x1.0p-53;
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = float(r * std::sin(t));
    have_spare_ = true;
    return float(r * std::cos(t));
  }

  float normal(float mean, float stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Identity permutation of n elements, then shuffled.
  std::vector<Index> permutation(Index n) {
    std::vector<Index> p(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) p[size_t(i)] = i;
    shuffle(p);
    return p;
  }

  // k distinct indices sampled uniformly from [0, n).
  std::vector<Index> sample_without_replacement(Index n, Index k) {
    require(k <= n, ErrorKind::argument,
            "sample_without_replacement: k exceeds population");
    std::vector<Index> p = permutation(n);
    p.resize(size_t(k));
    return p;
  }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  uint64_t seed_ = 0;
  uint64_t counter_ = 0;
  float spare_ = 0.0f;
  bool have_spare_ = false;
};

}  // namespace cplab::nd
