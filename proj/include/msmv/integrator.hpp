#pragma once

// Euler-Maruyama for the N-particle slow-fast system (fast component
// micro-stepped inside each macro step) and for the averaged equation.

#include <cstdint>
#include <vector>

#include "msmv/averaging.hpp"
#include "msmv/measure.hpp"
#include "msmv/model.hpp"

namespace msmv {

struct SlowFastState {
  std::size_t count = 0;  // particles
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> x;  // count x n
  std::vector<double> z;  // count x m

  static SlowFastState replicate(const ModelSpec& model, std::size_t count);
};

struct StepConfig {
  double dt_slow = 0.01;
  double substep_factor = 10.0;  // lambda
  double eps = 0.1;

  void validate() const;
  /// K = ceil(lambda * dt_slow / eps).
  std::size_t substeps() const;
};

/// Which Brownian streams drive a particle ensemble. Particle i at macro step
/// k draws dB from (seed, B, i + particle_offset, k) and its j-th fast
/// micro-step dW from (seed, W, i + particle_offset, k, j).
struct NoiseKeys {
  std::uint64_t seed = 0;
  std::uint32_t particle_offset = 0;
};

struct RunOptions {
  double substep_factor = 10.0;
  int threads = 1;
  /// Blow-up guard: sup over the grid of ||mu_t||^2 must stay below this.
  double moment_ceiling = 1e12;
};

/// Advances every particle one macro step against the frozen measure mu_hat.
/// Throws BlowUpError(step) on a non-finite result.
void advance_multiscale(SlowFastState& state, const ModelSpec& model, const ParticleCloud& mu_hat,
                        const StepConfig& cfg, const NoiseKeys& keys, std::uint32_t step, int threads = 1);

SlowFastState step_multiscale(const SlowFastState& state, const ModelSpec& model, const ParticleCloud& mu_hat,
                              const StepConfig& cfg, const NoiseKeys& keys, std::uint32_t step, int threads = 1);

/// One Euler step of the averaged equation for every row of x (count x n).
void advance_averaged(std::vector<double>& x, const AveragedModel& avg, const ParticleCloud& mu_hat, double dt,
                      const NoiseKeys& keys, std::uint32_t step, int threads = 1);

struct SimulationResult {
  LawFlow flow;
  std::vector<MomentSummary> summary;
  SlowFastState final_state;
};

/// Interacting particle approximation of the multiscale system; the law of
/// X_t is replaced by the empirical cloud of the N slow particles.
SimulationResult simulate_system(const ModelSpec& model, double eps, std::size_t n_particles,
                                 const std::vector<double>& grid, std::uint64_t seed, const RunOptions& opts = {});

/// Particle approximation of the averaged McKean-Vlasov equation. Uses the
/// same B keys as simulate_system for the same seed.
SimulationResult simulate_averaged(const AveragedModel& avg, std::size_t n_particles, const std::vector<double>& grid,
                                   std::uint64_t seed, const RunOptions& opts = {});

/// Grid spacing of a uniform grid; throws std::invalid_argument otherwise.
double uniform_step(const std::vector<double>& grid);

}  // namespace msmv
