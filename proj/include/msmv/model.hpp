#pragma once

// Signal-observation systems as data:
//
//   dX = b1(X, L(X), Z) dt + sigma1(X, L(X), Z) dB
//   dZ = eps^-1 b2(L(X), Z) dt + eps^-1/2 sigma2(L(X), Z) dW
//   dY = h(X, L(X), Z) dt + dV
//
// Evaluators write into caller-provided buffers; matrices are row-major.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmv/measure.hpp"

namespace msmv {

using ConstSpan = std::span<const double>;
using OutSpan = std::span<double>;

/// (x, mu, z) -> out. Used for b1 (n), sigma1 (n x n) and h (l).
using SlowFn = std::function<void(ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan out)>;
/// (mu, z) -> out. Used for b2 (m) and sigma2 (m x m).
using FastFn = std::function<void(const ParticleCloud& mu, ConstSpan z, OutSpan out)>;

/// Optional additive form f(x, mu, z) = slow(x, mu) + fast(z). When present,
/// averaging integrates only the fast term against the invariant measure and
/// caches that integral per measure bucket.
struct AdditiveSplit {
  std::function<void(ConstSpan x, const ParticleCloud& mu, OutSpan out)> slow;
  std::function<void(ConstSpan z, OutSpan out)> fast;
};

/// Assumption constants declared by the user; spot-checked by validate_model.
struct DeclaredConstants {
  std::optional<double> lipschitz_b1_sigma1;
  std::optional<double> ellipticity;  // l in <sigma1 eta, eta> >= l |eta|^2
  std::optional<double> lipschitz_b2_sigma2;
  std::optional<double> beta_prime;
  double p = 12.0;
  std::optional<double> h_bound;
};

struct LinearParams {
  double a = 1.0;
  double c = 0.5;
  double g = 1.0;
  double sigma_x = 1.0;
  double beta = 4.0;
  double kappa = 2.0;
  double sigma_z = 1.0;
  double gamma1 = 1.0;
  double gamma2 = 0.0;
  double gamma3 = 0.0;
  double x0 = 0.0;
  double z0 = 0.0;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

struct SineParams {
  double beta = 8.0;
  double a1 = 1.0;  // amplitude in b1~(x, z) = -x + a1 sin z
  double a2 = 1.0;  // amplitude in b2~(u, z) = -beta z + a2 sin u
  double x0 = 0.0;
  double z0 = 0.0;

  void validate() const;
};

struct ModelSpec {
  std::string name;
  std::size_t n = 1;  // slow dimension
  std::size_t m = 1;  // fast dimension
  std::size_t l = 1;  // observation dimension
  SlowFn b1;
  SlowFn sigma1;
  FastFn b2;
  FastFn sigma2;
  SlowFn h;
  std::optional<AdditiveSplit> b1_split;
  std::optional<AdditiveSplit> h_split;
  bool sigma1_depends_on_z = true;
  std::vector<double> x0;
  std::vector<double> z0;
  DeclaredConstants constants;
  std::optional<LinearParams> linear;  // set by builtin_linear, used by the oracles

  /// Checks dimensions and that every evaluator is set.
  void check_well_formed() const;
};

ModelSpec builtin_linear(const LinearParams& params);
ModelSpec builtin_sine(const SineParams& params);

struct ValidationConfig {
  int n_pairs = 2000;
  double state_scale = 3.0;   // x, z ~ N(0, scale^2)
  int cloud_size = 32;
  double relative_slack = 1e-9;
};

enum class CheckStatus { Pass, Fail, NotDeclared };

struct AssumptionCheck {
  std::string name;
  double observed = 0.0;
  std::optional<double> declared;
  CheckStatus status = CheckStatus::NotDeclared;
  std::string detail;
};

struct ValidationReport {
  std::string model;
  std::uint64_t seed = 0;
  std::vector<AssumptionCheck> checks;
  std::vector<std::string> warnings;

  /// No check failed.
  bool ok() const;
  const AssumptionCheck& check(const std::string& name) const;
  nlohmann::json to_json() const;
};

/// Empirical spot-checks of the Lipschitz, ellipticity, dissipativity and
/// boundedness assumptions against the declared constants. Deterministic in
/// (spec, cfg, seed).
ValidationReport validate_model(const ModelSpec& spec, const ValidationConfig& cfg, std::uint64_t seed);

}  // namespace msmv
