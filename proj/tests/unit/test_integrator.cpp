#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <msmv/errors.hpp>
#include <msmv/integrator.hpp>

#include "support.hpp"

using namespace msmv;

TEST_CASE("micro-step count") {
  CHECK(StepConfig{0.01, 10.0, 0.01}.substeps() == 10);
  CHECK(StepConfig{0.01, 10.0, 0.03}.substeps() == 4);
  CHECK(StepConfig{0.01, 1.0, 1.0}.substeps() == 1);
  CHECK_THROWS(StepConfig{0.01, 0.5, 0.1}.validate());
  CHECK_THROWS(StepConfig{0.0, 10.0, 0.1}.validate());
  CHECK_THROWS(StepConfig{0.01, 10.0, 0.0}.validate());
}

TEST_CASE("zero coefficients leave the state unchanged") {
  const auto model = testing::zero_model(0.7);
  auto state = SlowFastState::replicate(model, 16);
  state.z.assign(16, -0.25);
  const auto next = step_multiscale(state, model, ParticleCloud::uniform(state.x, 1), StepConfig{0.01, 10.0, 0.1},
                                    NoiseKeys{1, 0}, 0);
  CHECK(next.x == state.x);
  CHECK(next.z == state.z);
}

TEST_CASE("zero coefficients give a Dirac law flow") {
  const auto model = testing::zero_model(0.7);
  const auto grid = uniform_grid(0.5, 0.05);
  const auto sys = simulate_system(model, 0.1, 32, grid, 4);
  const AveragedModel avg(model, FrozenConfig{}, CacheConfig{}, 1);
  const auto bar = simulate_averaged(avg, 32, grid, 4);
  REQUIRE(sys.flow.size() == grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (double v : sys.flow.at(k).samples()) CHECK(v == 0.7);
    for (double v : bar.flow.at(k).samples()) CHECK(v == 0.7);
  }
}

TEST_CASE("explicit Euler on the fast OU stays stable at eps = 0.01") {
  const auto model = builtin_linear(testing::canonical_linear());
  const auto sys = simulate_system(model, 0.01, 64, uniform_grid(10.0, 0.01), 8);
  for (const auto& s : sys.summary) REQUIRE(std::isfinite(s.fourth_moment));
  CHECK(sys.summary.back().second_moment < 10.0);
}

TEST_CASE("fourth moment stays bounded at eps = 0.05") {
  auto p = testing::canonical_linear();
  p.x0 = 1.0;
  const auto sys = simulate_system(builtin_linear(p), 0.05, 500, uniform_grid(2.0, 0.01), 9);
  double sup = 0.0;
  for (const auto& s : sys.summary) sup = std::max(sup, s.fourth_moment);
  CHECK(std::isfinite(sup));
  CHECK(sup < 1e3);
}

TEST_CASE("z-free slow drift gives identical systems on shared keys") {
  // With g = 0 the slow equation never sees Z, so both schemes apply the same
  // update to the same dB draws.
  auto p = testing::canonical_linear();
  p.g = 0.0;
  p.x0 = 0.4;
  const auto model = builtin_linear(p);
  const auto grid = uniform_grid(1.0, 0.01);
  const auto sys = simulate_system(model, 0.1, 100, grid, 12);
  const AveragedModel avg(model, FrozenConfig{}, CacheConfig{}, 1);
  const auto bar = simulate_averaged(avg, 100, grid, 12);
  const auto& a = sys.flow.at(grid.size() - 1).samples();
  const auto& b = bar.flow.at(grid.size() - 1).samples();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("thread count does not change the trajectory") {
  const auto model = builtin_sine(SineParams{});
  const auto grid = uniform_grid(0.5, 0.01);
  RunOptions one, four;
  four.threads = 4;
  CHECK(simulate_system(model, 0.1, 200, grid, 3, one).final_state.x ==
        simulate_system(model, 0.1, 200, grid, 3, four).final_state.x);
}

TEST_CASE("explosive drift raises a blow-up error") {
  auto model = testing::zero_model(2.0, 1.0);
  model.b1 = [](ConstSpan x, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = x[0] * x[0] * x[0]; };
  CHECK_THROWS_AS(simulate_system(model, 0.1, 8, uniform_grid(5.0, 0.1), 1), BlowUpError);
}

TEST_CASE("grid spacing") {
  CHECK(uniform_step(uniform_grid(1.0, 0.125)) == doctest::Approx(0.125));
  CHECK_THROWS_AS(uniform_step({0.0, 0.1, 0.3}), std::invalid_argument);
}
