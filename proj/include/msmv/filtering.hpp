#pragma once

// Observation synthesis, Girsanov-weighted particle filters for the
// multiscale and averaged systems, the Kalman-Bucy oracle for the linear
// model and the Zakai residual diagnostic.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msmv/averaging.hpp"
#include "msmv/generators.hpp"
#include "msmv/measure.hpp"
#include "msmv/model.hpp"
#include "msmv/random.hpp"

namespace msmv {

/// Observation increments dY_k over [t_k, t_{k+1}], row-major K x l.
struct YPath {
  std::vector<double> grid;
  std::size_t l = 1;
  std::vector<double> increments;
  std::uint64_t seed = 0;
  double eps = 0.0;
  bool noise_free = false;
  bool reference_measure = false;

  struct Truth {
    std::vector<double> x;  // (K+1) x n
    std::vector<double> z;  // (K+1) x m
  };
  std::optional<Truth> truth;

  std::size_t steps() const noexcept { return grid.empty() ? 0 : grid.size() - 1; }
  ConstSpan dy(std::size_t k) const { return {increments.data() + k * l, l}; }
};

struct ObservationOptions {
  bool noise_free = false;         // dV = 0
  bool reference_measure = false;  // dY = dV: Y is a Brownian motion, h is ignored
  double substep_factor = 10.0;
};

/// One truth trajectory (X*, Z*) against `law_flow` from fresh noise, and
/// dY_k = h(X*_k, mu_k, Z*_k) dt + dV_k. Throws std::invalid_argument when
/// the law flow has fewer than two times.
YPath synthesize_observations(const ModelSpec& model, double eps, const LawFlow& law_flow, std::uint64_t seed,
                              const ObservationOptions& opts = {});

enum class ResamplePolicy { Never, EssThreshold };

struct FilterConfig {
  std::size_t particles = 1000;
  ResamplePolicy resample = ResamplePolicy::EssThreshold;
  double ess_threshold = 0.5;
  std::vector<TestFunction> test_functions;
  double substep_factor = 10.0;
  int threads = 1;
  bool record_log_weights = false;
  /// z-independent probes for the Zakai residual; requires ResamplePolicy::Never.
  std::vector<TestFunction> zakai_probes;
  std::size_t zakai_stride = 1;

  void validate() const;
};

/// Per-particle Zakai residuals r_i(t) = Lambda_i Psi_i - Psi_0
/// - sum_j Lambda_i(t_j) [L Psi_ij dt + Psi_ij h_ij . dY_j], one row per
/// recorded step.
struct ZakaiTrace {
  std::vector<std::string> names;
  std::vector<std::size_t> steps;                         // grid indices recorded
  std::vector<std::vector<std::vector<double>>> residual;  // [probe][record][particle]
};

struct FilterOutput {
  std::vector<double> grid;
  std::vector<std::string> names;
  std::vector<double> ess;
  std::vector<double> rho_one;      // mean of exp(log-weight)
  std::vector<double> log_rho_one;  // its logarithm, finite when rho_one underflows
  std::vector<std::vector<double>> estimates;        // [time][test function]
  std::vector<std::vector<double>> standard_errors;  // delta-method, [time][test function]
  std::vector<std::size_t> resample_steps;           // grid indices after which resampling happened
  std::vector<double> final_log_weights;
  std::vector<std::vector<double>> log_weights;  // [time][particle] when recorded
  ZakaiTrace zakai;
};

/// Filter for the multiscale system: particles follow the slow-fast dynamics
/// against the fixed law flow and are weighted by h(X, mu_k, Z).
FilterOutput run_filter_multiscale(const ModelSpec& model, double eps, const LawFlow& law_flow, const YPath& y,
                                   const FilterConfig& cfg, std::uint64_t seed);

/// Filter for the averaged system (b1_bar, sigma1_bar, weight h_bar) on the same Y.
FilterOutput run_filter_averaged(const AveragedModel& avg, const LawFlow& law_flow, const YPath& y,
                                 const FilterConfig& cfg, std::uint64_t seed);

/// Systematic resampling with one uniform u in [0, 1): index j takes the
/// particle whose cumulative weight interval contains (u + j) / count.
std::vector<std::size_t> resample_systematic(const std::vector<double>& weights, double u, std::size_t count);
std::vector<std::size_t> resample_systematic(const std::vector<double>& weights, const RngKey& key);

/// (sum w)^2 / sum w^2.
double effective_sample_size(const std::vector<double>& weights);

/// rho(F) / rho(1). Throws std::invalid_argument when rho_one <= 0.
std::vector<double> ks_normalize(const std::vector<double>& rho, double rho_one);

enum class OracleMode { MultiscaleLimit, Averaged };

struct KalmanBucyPath {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Kalman-Bucy filter for the averaged 1-D linear system, Euler-integrated on
/// Y's grid. `law_mean` is the unconditional mean path m_t entering the drift
/// and the observation; when absent the closed form
/// m_t = x0 exp((-a + c + g kappa / beta) t) is used. Throws ConfigError for
/// a non-linear model, a noise-free Y, or gamma3 != 0 in MultiscaleLimit mode.
KalmanBucyPath kalman_bucy_oracle(const ModelSpec& model, const YPath& y, OracleMode mode,
                                  const std::vector<double>* law_mean = nullptr);

/// Positive root of 2 alpha P + sigma_x^2 - gamma1^2 P^2 = 0 with alpha = -a.
double kalman_bucy_stationary_variance(const LinearParams& params);

struct ZakaiReport {
  std::string name;
  std::vector<double> times;
  std::vector<double> residual;
  std::vector<double> standard_error;
  std::vector<double> ratio;  // |R| / SE; 0 when both vanish
  double max_ratio = 0.0;
};

/// Residual statistics for one registered probe with a particle-bootstrap
/// standard error.
ZakaiReport zakai_residual(const FilterOutput& out, std::size_t probe, std::uint64_t seed, int n_bootstrap = 200);

void write_filter_csv(std::ostream& os, const FilterOutput& out);
void write_ypath_csv(std::ostream& os, const YPath& y);

}  // namespace msmv
