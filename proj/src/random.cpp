#include "msmv/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace msmv {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(product);
  hi = static_cast<std::uint32_t>(product >> 32);
}

// 53-bit double in (0, 1]; never zero so log() below is finite.
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits & ((1ULL << 53) - 1)) + 1.0) * 0x1.0p-53;
}

inline std::array<std::uint32_t, 4> block(const RngKey& key, std::uint32_t index) {
  const std::array<std::uint32_t, 2> k{static_cast<std::uint32_t>(key.master_seed),
                                       static_cast<std::uint32_t>(key.master_seed >> 32)};
  const std::array<std::uint32_t, 4> c{key.particle, key.step, key.substep,
                                       (static_cast<std::uint32_t>(key.stream) << 24) | (index & 0xFFFFFFu)};
  return philox4x32(c, k);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kPhiloxM0, ctr[0], lo0, hi0);
    mulhilo(kPhiloxM1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void fill_gaussian(const RngKey& key, double variance, std::span<double> out) {
  const double scale = std::sqrt(variance);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; i += 2) {
    const auto r = block(key, static_cast<std::uint32_t>(i / 2));
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1)) * scale;
    const double angle = 2.0 * std::numbers::pi * u2;
    out[i] = radius * std::cos(angle);
    if (i + 1 < n) out[i + 1] = radius * std::sin(angle);
  }
}

std::vector<double> gauss_increment(const RngKey& key, int dim, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("gauss_increment: dt must be positive");
  if (dim < 1) throw std::invalid_argument("gauss_increment: dim must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(dim));
  fill_gaussian(key, dt, out);
  return out;
}

double uniform01(const RngKey& key, std::uint32_t index) noexcept {
  const auto r = block(key, index);
  return to_open_unit(r[0], r[1]) - 0x1.0p-53;
}

}  // namespace msmv
