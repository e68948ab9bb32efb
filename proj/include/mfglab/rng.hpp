#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

#include "mfglab/normal.hpp"

namespace mfglab {

// Counter-based random streams.
//
// A stream is identified by a key hashed from the master seed and a tuple of
// labels (experiment, trial, particle, ...). The i-th word of a stream is a
// pure function of (key, i): no state is carried between draws, so any
// schedule of workers reproduces the same numbers. The mixer is the
// SplitMix64 output function (https://prng.di.unimi.it).
namespace rng {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// Particle label reserved for the common noise W.
inline constexpr std::uint64_t kCommonParticle = std::numeric_limits<std::uint64_t>::max();

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Map the top 52 bits of a word to the open interval (0, 1). With 53 bits the
// top cell midpoint would round to 1.0.
constexpr double to_unit_open(std::uint64_t w) noexcept {
  return (static_cast<double>(w >> 12) + 0.5) * 0x1.0p-52;
}

// Standard normal variate from a single word by inverse cdf.
inline double to_gaussian(std::uint64_t w) { return normal::quantile(to_unit_open(w)); }

}  // namespace rng

// Master seed plus hierarchical labels. Labels are absorbed in order, so
// (1, 2) and (2, 1) give different streams.
class RngStreamKey {
 public:
  constexpr explicit RngStreamKey(std::uint64_t seed) noexcept : hash_(rng::mix64(seed ^ 0x6a09e667f3bcc909ull)) {}

  constexpr RngStreamKey child(std::uint64_t label) const noexcept {
    RngStreamKey k = *this;
    k.hash_ = rng::mix64(hash_ + rng::kGolden * (label + 1) + 0x3c6ef372fe94f82bull);
    k.hash_ = rng::mix64(k.hash_ ^ (label * 0xd1b54a32d192ed03ull));
    return k;
  }

  constexpr RngStreamKey child(std::initializer_list<std::uint64_t> labels) const noexcept {
    RngStreamKey k = *this;
    for (auto l : labels) k = k.child(l);
    return k;
  }

  constexpr std::uint64_t hash() const noexcept { return hash_; }
  friend constexpr bool operator==(const RngStreamKey&, const RngStreamKey&) = default;

 private:
  std::uint64_t hash_;
};

// Random-access view of the stream named by a key.
class RngStream {
 public:
  constexpr explicit RngStream(RngStreamKey key) noexcept : key_(key.hash()) {}

  constexpr std::uint64_t word(std::uint64_t counter) const noexcept {
    return rng::mix64(key_ ^ rng::mix64(rng::kGolden * (counter + 1)));
  }
  double uniform(std::uint64_t counter) const noexcept { return rng::to_unit_open(word(counter)); }
  double gaussian(std::uint64_t counter) const { return rng::to_gaussian(word(counter)); }

 private:
  std::uint64_t key_;
};

}  // namespace mfglab
