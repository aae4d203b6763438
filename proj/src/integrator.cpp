#include "msmv/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msmv/errors.hpp"
#include "msmv/parallel.hpp"
#include "msmv/random.hpp"

namespace msmv {

SlowFastState SlowFastState::replicate(const ModelSpec& model, std::size_t count) {
  SlowFastState s;
  s.count = count;
  s.n = model.n;
  s.m = model.m;
  s.x.resize(count * model.n);
  s.z.resize(count * model.m);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(model.x0.begin(), model.x0.end(), s.x.begin() + static_cast<std::ptrdiff_t>(i * model.n));
    std::copy(model.z0.begin(), model.z0.end(), s.z.begin() + static_cast<std::ptrdiff_t>(i * model.m));
  }
  return s;
}

void StepConfig::validate() const {
  if (!(dt_slow > 0.0)) throw std::invalid_argument("step config: dt_slow must be positive");
  if (!(substep_factor >= 1.0)) throw std::invalid_argument("step config: substep factor must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("step config: eps must be positive");
}

std::size_t StepConfig::substeps() const {
  // Guard against ceil(10.000000000000002) style round-up.
  const double k = substep_factor * dt_slow / eps;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(k - 1e-9 * k)));
}

double uniform_step(const std::vector<double>& grid) {
  if (grid.size() < 2) throw std::invalid_argument("grid needs at least two points");
  const double dt = grid[1] - grid[0];
  if (!(dt > 0.0)) throw std::invalid_argument("grid must be increasing");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (std::abs((grid[k] - grid[k - 1]) - dt) > 1e-9 * dt) throw std::invalid_argument("grid must be uniform");
  return dt;
}

void advance_multiscale(SlowFastState& state, const ModelSpec& model, const ParticleCloud& mu_hat,
                        const StepConfig& cfg, const NoiseKeys& keys, std::uint32_t step, int threads) {
  cfg.validate();
  const std::size_t n = state.n, m = state.m;
  const std::size_t substeps = cfg.substeps();
  const double dt = cfg.dt_slow;
  const double micro = dt / static_cast<double>(substeps);
  const double inv_eps = 1.0 / cfg.eps;
  const double inv_sqrt_eps = 1.0 / std::sqrt(cfg.eps);

  parallel_chunks(state.count, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> b1(n), s1(n * n), db(n), b2(m), s2(m * m), dw(m * substeps), x_old(n);
    for (std::size_t i = begin; i < end; ++i) {
      const OutSpan x(state.x.data() + i * n, n);
      const OutSpan z(state.z.data() + i * m, m);
      const auto pid = static_cast<std::uint32_t>(i) + keys.particle_offset;

      model.b1(x, mu_hat, z, b1);
      model.sigma1(x, mu_hat, z, s1);
      fill_gaussian(RngKey{keys.seed, StreamClass::B, pid, step, 0}, dt, db);
      std::copy(x.begin(), x.end(), x_old.begin());
      for (std::size_t r = 0; r < n; ++r) {
        double acc = b1[r] * dt;
        for (std::size_t k = 0; k < n; ++k) acc += s1[r * n + k] * db[k];
        x[r] = x_old[r] + acc;
      }

      fill_gaussian(RngKey{keys.seed, StreamClass::W, pid, step, 0}, micro, dw);
      for (std::size_t j = 0; j < substeps; ++j) {
        model.b2(mu_hat, z, b2);
        model.sigma2(mu_hat, z, s2);
        const double* w = dw.data() + j * m;
        for (std::size_t r = 0; r < m; ++r) {
          double acc = b2[r] * micro * inv_eps;
          for (std::size_t k = 0; k < m; ++k) acc += s2[r * m + k] * w[k] * inv_sqrt_eps;
          z[r] += acc;
        }
      }
      for (double v : x)
        if (!std::isfinite(v)) throw BlowUpError("slow component blew up; dt too large for eps?", step);
      for (double v : z)
        if (!std::isfinite(v)) throw BlowUpError("fast component blew up; dt too large for eps?", step);
    }
  });
}

SlowFastState step_multiscale(const SlowFastState& state, const ModelSpec& model, const ParticleCloud& mu_hat,
                              const StepConfig& cfg, const NoiseKeys& keys, std::uint32_t step, int threads) {
  SlowFastState next = state;
  advance_multiscale(next, model, mu_hat, cfg, keys, step, threads);
  return next;
}

void advance_averaged(std::vector<double>& x, const AveragedModel& avg, const ParticleCloud& mu_hat, double dt,
                      const NoiseKeys& keys, std::uint32_t step, int threads) {
  const std::size_t n = avg.n();
  const std::size_t count = x.size() / n;
  const auto entry = avg.entry(mu_hat);
  parallel_chunks(count, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> drift(n), diff(n * n), db(n), x_old(n);
    for (std::size_t i = begin; i < end; ++i) {
      const OutSpan xi(x.data() + i * n, n);
      avg.drift(*entry, xi, mu_hat, drift);
      avg.diffusion(*entry, xi, mu_hat, diff);
      fill_gaussian(RngKey{keys.seed, StreamClass::B, static_cast<std::uint32_t>(i) + keys.particle_offset, step, 0},
                    dt, db);
      std::copy(xi.begin(), xi.end(), x_old.begin());
      for (std::size_t r = 0; r < n; ++r) {
        double acc = drift[r] * dt;
        for (std::size_t k = 0; k < n; ++k) acc += diff[r * n + k] * db[k];
        xi[r] = x_old[r] + acc;
        if (!std::isfinite(xi[r])) throw BlowUpError("averaged slow component blew up", step);
      }
    }
  });
}

namespace {

void check_ceiling(const MomentSummary& s, const RunOptions& opts, std::size_t step) {
  if (!(s.second_moment < opts.moment_ceiling))
    throw BlowUpError("second moment exceeded the configured ceiling", step);
}

}  // namespace

SimulationResult simulate_system(const ModelSpec& model, double eps, std::size_t n_particles,
                                 const std::vector<double>& grid, std::uint64_t seed, const RunOptions& opts) {
  model.check_well_formed();
  if (n_particles < 2) throw std::invalid_argument("simulate_system: at least two particles required");
  const double dt = uniform_step(grid);
  const StepConfig cfg{dt, opts.substep_factor, eps};
  cfg.validate();

  SimulationResult result;
  result.final_state = SlowFastState::replicate(model, n_particles);
  auto& state = result.final_state;
  std::vector<CloudPtr> clouds;
  clouds.reserve(grid.size());
  clouds.push_back(std::make_shared<const ParticleCloud>(ParticleCloud::uniform(state.x, model.n)));
  result.summary.push_back(summarize(*clouds.back(), grid[0]));
  const NoiseKeys keys{seed, 0};
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    advance_multiscale(state, model, *clouds.back(), cfg, keys, static_cast<std::uint32_t>(k), opts.threads);
    clouds.push_back(std::make_shared<const ParticleCloud>(ParticleCloud::uniform(state.x, model.n)));
    result.summary.push_back(summarize(*clouds.back(), grid[k + 1]));
    check_ceiling(result.summary.back(), opts, k);
  }
  result.flow = LawFlow(grid, std::move(clouds));
  return result;
}

SimulationResult simulate_averaged(const AveragedModel& avg, std::size_t n_particles, const std::vector<double>& grid,
                                   std::uint64_t seed, const RunOptions& opts) {
  if (n_particles < 2) throw std::invalid_argument("simulate_averaged: at least two particles required");
  const double dt = uniform_step(grid);
  const ModelSpec& model = avg.base();

  SimulationResult result;
  result.final_state = SlowFastState::replicate(model, n_particles);
  result.final_state.m = 0;
  result.final_state.z.clear();
  auto& x = result.final_state.x;
  std::vector<CloudPtr> clouds;
  clouds.reserve(grid.size());
  clouds.push_back(std::make_shared<const ParticleCloud>(ParticleCloud::uniform(x, model.n)));
  result.summary.push_back(summarize(*clouds.back(), grid[0]));
  const NoiseKeys keys{seed, 0};
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    advance_averaged(x, avg, *clouds.back(), dt, keys, static_cast<std::uint32_t>(k), opts.threads);
    clouds.push_back(std::make_shared<const ParticleCloud>(ParticleCloud::uniform(x, model.n)));
    result.summary.push_back(summarize(*clouds.back(), grid[k + 1]));
    check_ceiling(result.summary.back(), opts, k);
  }
  result.flow = LawFlow(grid, std::move(clouds));
  return result;
}

}  // namespace msmv
