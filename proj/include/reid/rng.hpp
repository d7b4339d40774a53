#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace reid {

// std::mt19937_64 has a fully specified output sequence, so results are
// identical across standard libraries. The std:: distributions are not, which
// is why the helpers below draw directly from the raw 64-bit output.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over the bytes of `text`, folded with `seed`.
std::uint64_t hash_string(std::string_view text, std::uint64_t seed = 0);

// Seed for an independent stream keyed by (seed, key). Distinct keys give
// unrelated streams, so adding a key never perturbs another key's draws.
std::uint64_t substream_seed(std::uint64_t seed, std::string_view key);

inline Rng make_substream(std::uint64_t seed, std::string_view key) {
  return Rng(substream_seed(seed, key));
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, bound) by rejection; bound must be > 0.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

// Standard normal via Box-Muller (portable, unlike std::normal_distribution).
double standard_normal(Rng& rng);

}  // namespace reid
