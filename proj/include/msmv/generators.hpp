#pragma once

// Generators of the slow, averaged and frozen dynamics applied to cylindrical
// test functions, and the Poisson corrector estimated by truncated semigroup
// integration.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msmv/averaging.hpp"
#include "msmv/model.hpp"

namespace msmv {

/// F(x, mu) with the derivatives the generators consume. dmu is the
/// L-derivative d_mu F(x, mu)(y); dy_dmu its y-gradient. When
/// `measure_dependent` is false, dmu and dy_dmu are treated as zero.
struct TestFunction {
  std::string name;
  std::function<double(ConstSpan x, const ParticleCloud& mu)> eval;
  std::function<void(ConstSpan x, const ParticleCloud& mu, OutSpan out)> dx;   // n
  std::function<void(ConstSpan x, const ParticleCloud& mu, OutSpan out)> dxx;  // n x n
  std::function<void(ConstSpan x, const ParticleCloud& mu, ConstSpan y, OutSpan out)> dmu;     // n
  std::function<void(ConstSpan x, const ParticleCloud& mu, ConstSpan y, OutSpan out)> dy_dmu;  // n x n
  bool bounded = false;
  bool measure_dependent = false;
};

/// phi(z) with gradient and Hessian.
struct FastTestFunction {
  std::function<double(ConstSpan z)> eval;
  std::function<void(ConstSpan z, OutSpan out)> dz;   // m
  std::function<void(ConstSpan z, OutSpan out)> dzz;  // m x m
};

namespace test_functions {
TestFunction one();
TestFunction coordinate(std::size_t index = 0);        // x_i
TestFunction tanh_coordinate(std::size_t index = 0);   // tanh(x_i)
TestFunction squared_norm();                           // |x|^2
TestFunction measure_mean(std::size_t index = 0);      // <mu, y_i>
/// "one", "x", "tanh", "x_squared", "mu_mean". Throws ConfigError otherwise.
TestFunction by_name(const std::string& name);
/// a F + b G.
TestFunction linear_combination(double a, const TestFunction& f, double b, const TestFunction& g);
}  // namespace test_functions

/// (L0 phi)(mu, z) = d_i phi b2^i + 1/2 d_ik phi (sigma2 sigma2^T)^ik.
double apply_L0(const FastTestFunction& phi, const ModelSpec& model, const ParticleCloud& mu, ConstSpan z);

/// (L F)(x, mu, z): the x-drift and x-diffusion terms plus the two
/// mu-derivative integrals, the latter as weighted sums over mu's samples.
double apply_L(const TestFunction& f, const ModelSpec& model, ConstSpan x, const ParticleCloud& mu, ConstSpan z);

/// (L_bar F)(x, mu) with (b1_bar, sigma1_bar sigma1_bar^T).
double apply_Lbar(const TestFunction& f, const AveragedModel& avg, ConstSpan x, const ParticleCloud& mu);
double apply_Lbar(const TestFunction& f, const AveragedModel& avg, const AveragedModel::Entry& entry, ConstSpan x,
                  const ParticleCloud& mu);

struct CorrectorConfig {
  std::optional<double> horizon;  // T_c; defaults to 10 / beta_prime
  int chains = 64;                // M
  double dt = 1e-3;
  bool antithetic = true;
  FrozenConfig frozen;  // invariant-measure budget for Phi_bar
};

struct CorrectorEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  double phi_bar = 0.0;
  double horizon = 0.0;
  std::optional<double> fitted_rate;  // eta in |E Phi(Z_t) - Phi_bar| ~ C e^{-eta t}
  std::optional<double> tail_bound;   // C e^{-eta T_c} / eta
};

/// chi_F(x, mu, z) = int_0^T_c (E Phi(x, mu, Z_t^{mu,z}) - Phi_bar(x, mu)) dt
/// with Phi = L F, trapezoidal in t over the M-chain average.
CorrectorEstimate estimate_corrector(const TestFunction& f, const ModelSpec& model, ConstSpan x,
                                     const ParticleCloud& mu, ConstSpan z, const CorrectorConfig& cfg,
                                     std::uint64_t seed);

}  // namespace msmv
