#pragma once

// Invariant measure of the frozen fast equation
//
//   dZ = b2(mu, Z) dt + sigma2(mu, Z) dW,   mu held fixed,
//
// estimated by time-averaging long chains, and the averaged coefficients
// b1_bar, sigma1_bar = sqrt(Sigma), h_bar built from it.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <json.hpp>

#include "msmv/measure.hpp"
#include "msmv/model.hpp"

namespace msmv {

struct FrozenConfig {
  double dt = 1e-3;
  double burn_in = 5.0;
  double horizon = 50.0;
  int n_chains = 4;
  int thinning = 10;
  bool antithetic = true;  // chain 2k+1 is driven by -dW of chain 2k

  void validate() const;
};

/// Thinned states of all frozen chains, chain-major, with the layout needed
/// for batch-means error bars.
struct InvariantSample {
  ParticleCloud cloud;
  std::size_t n_chains = 0;
  std::size_t per_chain = 0;
  bool antithetic = false;

  struct Estimate {
    double mean = 0.0;
    double standard_error = 0.0;
  };
  /// Ergodic average of f with a batch-means standard error. Antithetic
  /// partners are merged before batching.
  Estimate estimate(const std::function<double(ConstSpan)>& f, std::size_t batches_per_chain = 10) const;
};

/// Simulates the frozen chains from z0 and returns the post-burn-in states.
/// Throws BlowUpError on a non-finite state and std::invalid_argument on a
/// bad config.
InvariantSample sample_invariant(const ModelSpec& model, const ParticleCloud& mu, const FrozenConfig& cfg,
                                 std::uint64_t seed);

/// Weighted mean of b1(x, mu, z) over nu_hat.
std::vector<double> averaged_drift(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                   const ParticleCloud& nu_hat);
/// sqrt_spd of the symmetrized weighted mean of sigma1 sigma1^T over nu_hat.
std::vector<double> averaged_diffusion(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                       const ParticleCloud& nu_hat);
/// Weighted mean of h(x, mu, z) over nu_hat.
std::vector<double> averaged_observation(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                         const ParticleCloud& nu_hat);

struct CacheConfig {
  double resolution = 1e-3;  // quantum for mean components and second moment
};

/// Averaged model b1_bar, sigma1_bar, h_bar with a per-measure cache of
/// invariant-measure samples. Measures are bucketed by (mean, second moment)
/// rounded down to the cache resolution; all buckets share one chain seed.
class AveragedModel {
 public:
  struct Entry {
    InvariantSample nu;
    std::vector<double> b1_fast_mean;  // set when the model splits b1
    std::vector<double> h_fast_mean;   // set when the model splits h
  };

  AveragedModel(ModelSpec base, FrozenConfig frozen, CacheConfig cache, std::uint64_t seed);

  const ModelSpec& base() const noexcept { return base_; }
  const FrozenConfig& frozen_config() const noexcept { return frozen_; }
  std::size_t n() const noexcept { return base_.n; }
  std::size_t l() const noexcept { return base_.l; }

  /// Cached invariant sample for mu's bucket; runs the frozen chains on a miss.
  std::shared_ptr<const Entry> entry(const ParticleCloud& mu) const;

  void drift(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const;
  void diffusion(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const;
  void observation(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const;

  std::vector<double> drift(ConstSpan x, const ParticleCloud& mu) const;
  std::vector<double> diffusion(ConstSpan x, const ParticleCloud& mu) const;
  std::vector<double> observation(ConstSpan x, const ParticleCloud& mu) const;

  /// Number of frozen simulations run so far (cache misses).
  std::size_t frozen_runs() const;
  std::size_t cache_size() const;
  nlohmann::json cache_stats() const;

 private:
  std::vector<std::int64_t> bucket(const ParticleCloud& mu) const;

  ModelSpec base_;
  FrozenConfig frozen_;
  CacheConfig cache_;
  std::uint64_t seed_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<std::int64_t>, std::shared_ptr<const Entry>> entries_;
  mutable std::size_t runs_ = 0;
  mutable std::size_t hits_ = 0;
};

/// Validates the configs and returns the averaged model.
AveragedModel build_averaged_model(const ModelSpec& model, const FrozenConfig& frozen, const CacheConfig& cache,
                                   std::uint64_t seed);

}  // namespace msmv
