#ifndef MBMPO_RNG_HPP_
#define MBMPO_RNG_HPP_

#include <cstdint>
#include <random>

namespace mbmpo {

using Rng = std::mt19937_64;

// Derives an independent stream from a parent seed and a stream tag. All
// run-level randomness flows from one master seed through this function.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x6d626d70u};
  return Rng(seq);
}

// Draws a fresh 64-bit seed from a stream, for handing to a child stream.
inline std::uint64_t draw_seed(Rng& rng) { return rng(); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mbmpo

#endif  // MBMPO_RNG_HPP_
