#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <msmv/averaging.hpp>
#include <msmv/errors.hpp>

#include "support.hpp"

using namespace msmv;

namespace {

ParticleCloud dirac(double v) {
  const double p[] = {v};
  return ParticleCloud::dirac(p);
}

FrozenConfig budget(double horizon, int chains = 4) {
  FrozenConfig f;
  f.horizon = horizon;
  f.n_chains = chains;
  return f;
}

// 2-D slow state with a user-chosen sigma1(z); everything else inert.
ModelSpec planar(SlowFn sigma1) {
  ModelSpec s = testing::zero_model();
  s.n = 2;
  s.x0 = {0.0, 0.0};
  s.b1 = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = out[1] = 0.0; };
  s.sigma1 = std::move(sigma1);
  s.sigma1_depends_on_z = true;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Frozen chains

TEST_CASE("noise-free contraction collapses to zero") {
  auto s = testing::ou_model(1.0, 0.0);
  s.z0 = {1.0};
  FrozenConfig f;
  f.burn_in = 20.0;
  f.horizon = 25.0;
  const auto nu = sample_invariant(s, dirac(0.0), f, 1);
  for (double v : nu.cloud.samples()) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("linear frozen law is N(kappa m / beta, sigma_z^2 / (2 beta))") {
  const auto p = testing::canonical_linear();
  const auto nu = sample_invariant(builtin_linear(p), dirac(1.0), budget(200.0, 8), 7);
  const auto m = nu.estimate([](ConstSpan z) { return z[0]; });
  CHECK(std::abs(m.mean - 0.5) <= 3.0 * m.standard_error + 1e-9);
  const auto v = nu.estimate([](ConstSpan z) { return (z[0] - 0.5) * (z[0] - 0.5); });
  CHECK(std::abs(v.mean - 0.125) <= 3.0 * v.standard_error);
  CHECK(v.standard_error < 0.01);
}

TEST_CASE("kappa = 0 centres the frozen law at zero") {
  auto p = testing::canonical_linear();
  p.kappa = 0.0;
  const auto nu = sample_invariant(builtin_linear(p), dirac(3.0), budget(50.0), 2);
  // Antithetic pairs cancel the linear average exactly.
  CHECK(std::abs(nu.cloud.mean()[0]) < 1e-12);
}

TEST_CASE("frozen chain errors") {
  FrozenConfig f;
  f.burn_in = 10.0;
  f.horizon = 10.0;
  CHECK_THROWS_AS(sample_invariant(testing::ou_model(1.0, 1.0), dirac(0.0), f, 1), std::invalid_argument);
  auto unstable = testing::ou_model(-20.0, 1.0);
  CHECK_THROWS_AS(sample_invariant(unstable, dirac(0.0), budget(100.0), 1), BlowUpError);
}

TEST_CASE("frozen chains are deterministic in the seed") {
  const auto s = testing::ou_model(1.0, 1.0);
  CHECK(sample_invariant(s, dirac(0.0), budget(20.0), 5).cloud.samples() ==
        sample_invariant(s, dirac(0.0), budget(20.0), 5).cloud.samples());
  CHECK(sample_invariant(s, dirac(0.0), budget(20.0), 5).cloud.samples() !=
        sample_invariant(s, dirac(0.0), budget(20.0), 6).cloud.samples());
}

// ---------------------------------------------------------------------------
// Averaged coefficients against a given nu

TEST_CASE("z-independent coefficients pass through averaging unchanged") {
  const auto p = testing::canonical_linear();
  auto s = builtin_linear(p);
  s.b1 = [](ConstSpan x, const ParticleCloud& mu, ConstSpan, OutSpan out) { out[0] = std::cos(x[0]) + mu.mean()[0]; };
  s.h = [](ConstSpan x, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = x[0] * x[0]; };
  const auto nu = ParticleCloud::uniform({-3.0, 0.1, 8.0}, 1);
  const auto mu = ParticleCloud::uniform({1.0, 2.0}, 1);
  const double x[] = {0.4};
  CHECK(averaged_drift(s, x, mu, nu)[0] == doctest::Approx(std::cos(0.4) + 1.5).epsilon(1e-15));
  CHECK(averaged_observation(s, x, mu, nu)[0] == doctest::Approx(0.16).epsilon(1e-15));
}

TEST_CASE("drift equal to z averages to zero over a symmetric nu") {
  auto s = testing::zero_model();
  s.b1 = [](ConstSpan, const ParticleCloud&, ConstSpan z, OutSpan out) { out[0] = z[0]; };
  const double x[] = {0.0};
  CHECK(averaged_drift(s, x, dirac(0.0), ParticleCloud::uniform({-2.0, -0.5, 0.5, 2.0}, 1))[0] == 0.0);
}

TEST_CASE("constant diffusion matrix is returned as is") {
  const auto s = planar([](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) {
    out[0] = 2.0;
    out[1] = 0.5;
    out[2] = 0.5;
    out[3] = 1.0;
  });
  const double x[] = {0.0, 0.0};
  const auto r = averaged_diffusion(s, x, dirac(0.0), ParticleCloud::uniform({-1.0, 4.0}, 1));
  const double expect[] = {2.0, 0.5, 0.5, 1.0};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(r[i] - expect[i]) < 1e-10);
}

TEST_CASE("z-dependent diffusion over a Gaussian nu") {
  // sigma1(z) = diag(sqrt(1 + z^2), 1), nu = N(0, 1/2): Sigma_11 = 1.5.
  const auto s = planar([](ConstSpan, const ParticleCloud&, ConstSpan z, OutSpan out) {
    out[0] = std::sqrt(1.0 + z[0] * z[0]);
    out[1] = out[2] = 0.0;
    out[3] = 1.0;
  });
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
  std::vector<double> zs(20000);
  double sum = 0.0, sum_sq = 0.0;
  for (double& z : zs) {
    z = nd(rng);
    sum += 1.0 + z * z;
    sum_sq += (1.0 + z * z) * (1.0 + z * z);
  }
  const double n = static_cast<double>(zs.size());
  const double sigma11 = sum / n, se = std::sqrt((sum_sq / n - sigma11 * sigma11) / n);
  CHECK(std::abs(sigma11 - 1.5) <= 3.0 * se);
  const double x[] = {0.0, 0.0};
  const auto r = averaged_diffusion(s, x, dirac(0.0), ParticleCloud::uniform(zs, 1));
  CHECK(r[0] == doctest::Approx(std::sqrt(sigma11)).epsilon(1e-12));
  CHECK(std::abs(r[1]) < 1e-12);
  CHECK(r[3] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("averaged diffusion squares back to the symmetrized second moment") {
  const auto s = planar([](ConstSpan x, const ParticleCloud&, ConstSpan z, OutSpan out) {
    out[0] = 1.0 + z[0] * z[0];
    out[1] = std::sin(z[0] + x[0]);
    out[2] = 0.3 * z[0];
    out[3] = 2.0 + std::cos(z[0]);
  });
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  std::vector<double> zs(64);
  for (double& z : zs) z = nd(rng);
  const auto nu = ParticleCloud::uniform(zs, 1);
  const double x[] = {0.2, -0.1};
  double sigma[4] = {0, 0, 0, 0};
  for (double z : zs) {
    const double a = 1.0 + z * z, b = std::sin(z + 0.2), c = 0.3 * z, d = 2.0 + std::cos(z);
    sigma[0] += (a * a + b * b) / 64.0;
    sigma[1] += (a * c + b * d) / 64.0;
    sigma[3] += (c * c + d * d) / 64.0;
  }
  sigma[2] = sigma[1];
  const auto r = averaged_diffusion(s, x, dirac(0.0), nu);
  double err = 0.0, norm = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double rr = 0.0;
      for (int k = 0; k < 2; ++k) rr += r[i * 2 + k] * r[k * 2 + j];
      err += (rr - sigma[i * 2 + j]) * (rr - sigma[i * 2 + j]);
      norm += sigma[i * 2 + j] * sigma[i * 2 + j];
    }
  CHECK(std::sqrt(err) <= 1e-10 * std::max(1.0, std::sqrt(norm)));
}

// ---------------------------------------------------------------------------
// Cached averaged model

TEST_CASE("identical measures hit the cache") {
  const AveragedModel avg(builtin_linear(testing::canonical_linear()), FrozenConfig{}, CacheConfig{}, 3);
  const auto mu = ParticleCloud::uniform({0.1, 0.4, 0.9}, 1);
  const double x[] = {0.5};
  const auto first = avg.drift(x, mu);
  CHECK(avg.frozen_runs() == 1);
  const auto second = avg.drift(x, mu);
  CHECK(avg.frozen_runs() == 1);
  CHECK(first == second);
  avg.observation(x, mu);
  CHECK(avg.frozen_runs() == 1);
  CHECK(avg.cache_stats()["hits"] == 2);
}

TEST_CASE("measures in one bucket share an evaluation") {
  auto p = testing::canonical_linear();
  p.c = 0.0;
  p.gamma2 = 0.0;
  p.gamma3 = 0.7;
  const AveragedModel avg(builtin_linear(p), FrozenConfig{}, CacheConfig{1e-3}, 3);
  const double x[] = {0.5};
  const auto a = avg.drift(x, dirac(0.2001)), b = avg.drift(x, dirac(0.2004));
  CHECK(a == b);
  CHECK(avg.observation(x, dirac(0.2001)) == avg.observation(x, dirac(0.2004)));
  CHECK(avg.cache_size() == 1);
  avg.drift(x, dirac(0.2011));
  CHECK(avg.cache_size() == 2);
}

TEST_CASE("bad cache resolution is rejected") {
  CHECK_THROWS_AS(build_averaged_model(builtin_linear(LinearParams{}), FrozenConfig{}, CacheConfig{0.0}, 1),
                  std::invalid_argument);
}

TEST_CASE("sine averaged drift agrees with a ten times longer horizon") {
  const auto s = builtin_sine(SineParams{});
  const AveragedModel shorter(s, budget(50.0), CacheConfig{}, 5);
  const AveragedModel longer(s, budget(500.0), CacheConfig{}, 6);
  const double x[] = {0.0};
  // At delta_0 the frozen law is symmetric; delta_1 shifts it through sin(1).
  for (double m : {0.0, 1.0}) {
    const auto mu = dirac(m);
    const double a = shorter.drift(x, mu)[0], b = longer.drift(x, mu)[0];
    REQUIRE(std::isfinite(a));
    auto se = [&](const AveragedModel& model) {
      return model.entry(mu)->nu.estimate([](ConstSpan z) { return std::sin(z[0]); }).standard_error;
    };
    CHECK(std::abs(a - b) <= 3.0 * std::hypot(se(shorter), se(longer)) + 1e-12);
  }
}
