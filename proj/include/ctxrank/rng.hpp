#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ctxrank {

// splitmix64 finalizer (Steele/Lea/Vigna). Used for seeding and for deriving
// substream keys; never used as the main generator.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent substream key from a root seed and up to three stream labels.
// Collisions between (a,b,c) tuples are as unlikely as 64-bit hash collisions.
inline constexpr std::uint64_t substream_seed(std::uint64_t root, std::uint64_t a,
                                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = mix64(root);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// xoshiro256** 1.0 (Blackman/Vigna, public domain reference implementation),
// seeded through splitmix64. Fixed-width arithmetic only, so the stream is
// identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = s;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
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

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Standard normal via Marsaglia's polar method (no libm trig, one draw
  // discarded; rejection loop is part of the deterministic stream).
  double normal() {
    for (;;) {
      const double u = 2.0 * next_double() - 1.0;
      const double v = 2.0 * next_double() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Index draw proportional to non-negative weights. Caller guarantees a
  // positive total.
  std::size_t sample_weighted(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double x = next_double() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      x -= weights[i];
      if (x < 0.0) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  // Index draw from softmax(logits / temperature), max-subtracted.
  std::size_t sample_softmax(std::span<const double> logits, double temperature,
                             std::vector<double>& scratch) {
    scratch.resize(logits.size());
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      scratch[i] = std::exp((logits[i] - mx) / temperature);
    }
    return sample_weighted(scratch);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
};

// Stream labels. Keeping them in one place avoids accidental reuse of the
// same (root, label) pair for two purposes.
namespace stream {
inline constexpr std::uint64_t kWordVec = 1;
inline constexpr std::uint64_t kProductVec = 2;
inline constexpr std::uint64_t kUserVec = 3;
inline constexpr std::uint64_t kTitle = 4;
inline constexpr std::uint64_t kSession = 5;
inline constexpr std::uint64_t kInit = 6;
inline constexpr std::uint64_t kEpoch = 7;
inline constexpr std::uint64_t kShuffle = 8;
inline constexpr std::uint64_t kRandRank = 9;
inline constexpr std::uint64_t kPopularity = 10;
inline constexpr std::uint64_t kTopic = 11;
}  // namespace stream

}  // namespace ctxrank
