#pragma once

#include <cstdint>
#include <random>

namespace needlenav {

/// Independent, reproducible stream for (seed, stream id).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Stream ids used across the simulator.
enum RngStream : std::uint64_t {
  kStreamPhantom = 1,
  kStreamDeformation = 2,
  kStreamDevice = 3,
  kStreamObservation = 0x1000,  // + frame index
};

}  // namespace needlenav
