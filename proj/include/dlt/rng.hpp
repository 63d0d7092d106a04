#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/logmath.hpp"

namespace dlt {

using Rng = std::mt19937_64;

/// Stream identifiers for the master-seed split.  A stream generator is
/// seeded with splitmix64(seed ^ splitmix64(stream)), and per-image
/// streams use stream = (base << 32) | image_index.
enum class Stream : std::uint64_t {
  Init = 1,
  Shuffle = 2,
  Corrupt = 3,
  Sample = 4,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(seed ^ splitmix64(stream)));
}

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  return make_rng(seed, static_cast<std::uint64_t>(stream));
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return make_rng(seed, (static_cast<std::uint64_t>(stream) << 32) | index);
}

// The helpers below avoid std distributions so that draws are identical
// across standard library implementations.

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

/// Draws an index from the distribution proportional to exp(log_weights).
/// States at -inf are never drawn.  Throws AllZeroPosterior when every
/// entry is -inf.
inline std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  double m = kNegInf;
  for (double x : log_weights) m = std::max(m, x);
  if (!(m > kNegInf)) {
    throw Error(ErrorCode::AllZeroPosterior, "every state has zero posterior mass");
  }
  double total = 0.0;
  for (double x : log_weights) total += x == kNegInf ? 0.0 : std::exp(x - m);
  const double target = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    if (log_weights[i] == kNegInf) continue;
    acc += std::exp(log_weights[i] - m);
    last = i;
    if (target < acc) return i;
  }
  return last;
}

}  // namespace dlt
