#pragma once

// Counter-based random streams. Every draw is a pure function of an RngKey,
// so results never depend on thread count or evaluation order.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace msmv {

enum class StreamClass : std::uint32_t {
  B = 1,         // slow Brownian motion
  W = 2,         // fast Brownian motion
  V = 3,         // observation noise
  Resample = 4,  // resampling uniforms and bootstrap draws
  Init = 5,      // initial conditions, validator sampling
  Slicing = 6,   // projection directions for sliced W2
};

struct RngKey {
  std::uint64_t master_seed = 0;
  StreamClass stream = StreamClass::B;
  std::uint32_t particle = 0;
  std::uint32_t step = 0;
  std::uint32_t substep = 0;
};

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Mixes a seed with a salt; used to derive independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

/// Fills `out` with i.i.d. N(0, variance) draws keyed by `key`.
void fill_gaussian(const RngKey& key, double variance, std::span<double> out);

/// Vector of `dim` i.i.d. N(0, dt) draws. Throws std::invalid_argument if dt <= 0 or dim < 1.
std::vector<double> gauss_increment(const RngKey& key, int dim, double dt);

/// Uniform draw in [0, 1) keyed by `key`; `index` selects among draws sharing a key.
double uniform01(const RngKey& key, std::uint32_t index = 0) noexcept;

}  // namespace msmv
