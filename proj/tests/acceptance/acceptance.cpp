// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 4 7        run a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "msmv/averaging.hpp"
#include "msmv/errors.hpp"
#include "msmv/experiments.hpp"
#include "msmv/filtering.hpp"
#include "msmv/generators.hpp"
#include "msmv/integrator.hpp"
#include "msmv/measure.hpp"
#include "msmv/model.hpp"
#include "msmv/random.hpp"

using namespace msmv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelSpec ou_frozen_model() {
  ModelSpec m = builtin_linear(LinearParams{});
  m.name = "ou";
  m.b2 = [](const ParticleCloud&, ConstSpan z, OutSpan out) { out[0] = -z[0]; };
  m.sigma2 = [](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 1.0; };
  m.z0 = {0.0};
  return m;
}

// 1. Frozen-equation invariant law against the OU variance 1/2.
Outcome frozen_ou() {
  FrozenConfig cfg;
  cfg.dt = 1e-3;
  cfg.burn_in = 10.0;
  cfg.horizon = 200.0;
  cfg.n_chains = 512;
  cfg.thinning = 100;
  cfg.antithetic = false;  // Z^2 is even in the noise, mirrored chains add nothing
  const auto nu = sample_invariant(ou_frozen_model(), ParticleCloud::dirac(std::vector<double>{0.0}), cfg, 20240601);
  const double m2 = nu.cloud.second_moment();
  return {m2 >= 0.49 && m2 <= 0.51, "second moment " + fmt("%.5f", m2) + " (target [0.49, 0.51])"};
}

// 2. Averaged drift and observation against the OU closed forms.
Outcome averaged_linear() {
  LinearParams p;
  p.gamma2 = 0.3;
  p.gamma3 = 0.5;
  const auto model = builtin_linear(p);
  const auto avg = build_averaged_model(model, FrozenConfig{}, CacheConfig{}, 11);
  double worst_b = 0.0, worst_h = 0.0;
  for (double m : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const auto mu = ParticleCloud::uniform({m - 0.5, m + 0.5}, 1);
    for (double x : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
      const std::vector<double> xv{x};
      const double b = avg.drift(xv, mu)[0];
      const double h = avg.observation(xv, mu)[0];
      worst_b = std::max(worst_b, std::abs(b - (-p.a * x + (p.c + p.g * p.kappa / p.beta) * m)));
      worst_h = std::max(worst_h, std::abs(h - (p.gamma1 * x + (p.gamma2 + p.gamma3 * p.kappa / p.beta) * m)));
    }
  }
  return {worst_b <= 1e-2 && worst_h <= 1e-2,
          "max |b1_bar error| " + fmt("%.2e", worst_b) + ", max |h_bar error| " + fmt("%.2e", worst_h)};
}

// 3. Matrix square root on random SPD matrices.
Outcome sqrt_random_spd() {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 8;
    std::vector<double> g(static_cast<std::size_t>(d * d));
    fill_gaussian(RngKey{77, StreamClass::Init, static_cast<std::uint32_t>(trial), 0, 0}, 1.0, g);
    Eigen::Map<Eigen::MatrixXd> G(g.data(), d, d);
    Eigen::MatrixXd M = G * G.transpose() + 1e-3 * Eigen::MatrixXd::Identity(d, d);
    std::vector<double> mv(M.data(), M.data() + d * d);
    auto s = sqrt_spd(mv, static_cast<std::size_t>(d));
    Eigen::Map<Eigen::MatrixXd> S(s.data(), d, d);
    const double rel = (S * S - M).norm() / std::max(1.0, M.norm());
    worst = std::max(worst, rel);
  }
  return {worst <= 1e-10, "max relative residual " + fmt("%.2e", worst)};
}

// 4. Corrector for F(x) = x against g (z - kappa m / beta) / beta.
Outcome corrector_linear() {
  const LinearParams p;
  const auto model = builtin_linear(p);
  const auto F = test_functions::coordinate(0);
  CorrectorConfig cfg;
  double worst = 0.0;
  int done = 0;
  for (std::uint32_t draw = 0; done < 10; ++draw) {
    const double z = -3.0 + 6.0 * uniform01(RngKey{404, StreamClass::Init, draw, 0, 0});
    const double m = -2.0 + 4.0 * uniform01(RngKey{404, StreamClass::Init, draw, 1, 0});
    const double shift = z - p.kappa * m / p.beta;
    if (std::abs(shift) < 0.5) continue;
    const double exact = p.g * shift / p.beta;
    const std::vector<double> x{0.3}, zv{z};
    const auto est = estimate_corrector(F, model, x, ParticleCloud::dirac(std::vector<double>{m}), zv, cfg, 900 + draw);
    worst = std::max(worst, std::abs(est.value - exact) / std::abs(exact));
    ++done;
  }
  return {worst <= 0.05, "max relative error " + fmt("%.4f", worst) + " over 10 points"};
}

// 5. Averaged filter against the Kalman-Bucy oracle.
Outcome kalman_bucy() {
  const LinearParams p;
  const auto model = builtin_linear(p);
  const double riccati_exact = std::sqrt(2.0) - 1.0;

  // Long path: the oracle's own variance path must settle on the Riccati root.
  {
    const auto grid = uniform_grid(20.0, 1e-3);
    YPath y;
    y.grid = grid;
    y.increments.resize(grid.size() - 1);
    fill_gaussian(RngKey{5, StreamClass::V, 0, 0, 0}, 1e-3, y.increments);
    const auto kb = kalman_bucy_oracle(model, y, OracleMode::Averaged);
    const double err = std::abs(kb.variance.back() - riccati_exact);
    if (err > 1e-6) return {false, "oracle stationary variance off by " + fmt("%.2e", err)};
  }

  const auto grid = uniform_grid(1.0, 0.005);
  const auto avg = build_averaged_model(model, FrozenConfig{}, CacheConfig{}, 3);
  const auto law = simulate_system(model, 0.1, 2000, grid, 31);
  const auto bar = simulate_averaged(avg, 2000, grid, 31);
  const auto y = synthesize_observations(model, 0.1, law.flow, 32);
  FilterConfig fcfg;
  fcfg.particles = 5000;
  fcfg.resample = ResamplePolicy::Never;
  fcfg.test_functions = {test_functions::coordinate(0)};
  const auto out = run_filter_averaged(avg, bar.flow, y, fcfg, 33);
  std::vector<double> means;
  for (std::size_t k = 0; k < bar.flow.size(); ++k) means.push_back(bar.flow.at(k).mean()[0]);
  const auto kb = kalman_bucy_oracle(model, y, OracleMode::Averaged, &means);
  double worst = 0.0;
  for (std::size_t k = 10; k < grid.size(); k += 10) {
    const double se = out.standard_errors[k][0];
    worst = std::max(worst, std::abs(out.estimates[k][0] - kb.mean[k]) / se);
  }
  return {worst <= 3.0, "max |filter - oracle| / SE " + fmt("%.2f", worst) + "; oracle P_inf error < 1e-6"};
}

// 6. Zakai residuals for Psi = 1 and Psi = x, both filters.
Outcome zakai() {
  ExperimentConfig cfg;
  cfg.horizon = 0.5;
  cfg.dt = 2.5e-4;
  cfg.particles = 2000;
  cfg.filter_particles = 10000;
  cfg.zakai.eps = 0.1;
  cfg.zakai.stride = 20;
  cfg.seeds = {61};
  const auto checks = run_zakai_check(cfg);
  bool ok = true;
  std::string detail;
  for (const auto& c : checks) {
    ok = ok && c.report.max_ratio <= 3.0;
    detail += c.system + "/" + c.report.name + " " + fmt("%.2f", c.report.max_ratio) + "  ";
  }
  return {ok, "max |R|/SE: " + detail};
}

ExperimentConfig trend_config() {
  ExperimentConfig cfg;
  cfg.linear.x0 = 0.5;
  cfg.linear.z0 = 2.0;
  cfg.eps = {0.5, 0.1, 0.02};
  cfg.horizon = 1.0;
  cfg.dt = 0.01;
  cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  cfg.test_functions = {"tanh"};
  return cfg;
}

// 7. Averaging-sweep trend.
Outcome averaging_trend() {
  auto cfg = trend_config();
  cfg.particles = 4000;
  const auto rep = run_averaging_sweep(cfg);
  const double g0 = rep.per_eps[0].median_terminal_gap[0];
  const double g1 = rep.per_eps[1].median_terminal_gap[0];
  const double g2 = rep.per_eps[2].median_terminal_gap[0];
  const bool ok = g0 > g1 && g1 > g2 && g2 < 0.5 * g0;
  return {ok, "median terminal tanh gap " + fmt("%.4g", g0) + " > " + fmt("%.4g", g1) + " > " + fmt("%.4g", g2)};
}

ExperimentConfig filter_trend_config() {
  auto cfg = trend_config();
  cfg.particles = 2000;
  cfg.filter_particles = 2000;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"msmv"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path filter_sweep_dir(int threads) { return fs::path("acceptance_out") / ("sweep_threads_" + std::to_string(threads)); }

bool run_filter_sweep_cli(int threads) {
  fs::create_directories("acceptance_out");
  const fs::path config = fs::path("acceptance_out") / "filter_trend.json";
  {
    std::ofstream os(config);
    os << filter_trend_config().to_json().dump(2);
  }
  return run_cli({"sweep-filter", "--config", config.string(), "--out", filter_sweep_dir(threads).string(), "--threads",
                  std::to_string(threads)}) == 0;
}

// 8. Filter-sweep trend (its CSV output is reused by criterion 9).
Outcome filter_trend() {
  if (!run_filter_sweep_cli(1)) return {false, "sweep-filter exited non-zero"};
  const auto summary = nlohmann::json::parse(slurp(filter_sweep_dir(1) / "filter_summary.json"));
  std::vector<double> g;
  std::size_t failed = 0;
  for (const auto& row : summary["per_eps"]) {
    g.push_back(row["median_gap_mean"][0].get<double>());
    failed += row["failed_cells"].get<std::size_t>();
  }
  const bool ok = g.size() == 3 && g[0] > g[1] && g[1] > g[2];
  return {ok, "median time-averaged tanh gap " + fmt("%.4g", g[0]) + " > " + fmt("%.4g", g[1]) + " > " +
                  fmt("%.4g", g[2]) + ", failed cells " + std::to_string(failed)};
}

// 9. Thread-count independence of the criterion-8 CSV files.
Outcome determinism() {
  if (!fs::exists(filter_sweep_dir(1) / "filter_gaps.csv") && !run_filter_sweep_cli(1))
    return {false, "single-thread sweep failed"};
  if (!run_filter_sweep_cli(8)) return {false, "eight-thread sweep failed"};
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(filter_sweep_dir(1))) {
    if (entry.path().extension() != ".csv") continue;
    const auto other = filter_sweep_dir(8) / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other))
      return {false, entry.path().filename().string() + " differs between 1 and 8 threads"};
    ++compared;
  }
  return {compared >= 2, std::to_string(compared) + " CSV files byte-identical at 1 and 8 threads"};
}

// 10. E[rho_T(1)] = 1 under the reference measure.
Outcome martingale() {
  const auto model = builtin_linear(LinearParams{});
  const auto grid = uniform_grid(1.0, 0.01);
  const auto law = simulate_system(model, 0.1, 1000, grid, 1001);
  FilterConfig fcfg;
  fcfg.particles = 10000;
  std::vector<double> rho;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto y = synthesize_observations(model, 0.1, law.flow, 5000 + s, ObservationOptions{false, true, 10.0});
    rho.push_back(run_filter_multiscale(model, 0.1, law.flow, y, fcfg, 7000 + s).rho_one.back());
  }
  double mean = 0.0;
  for (double v : rho) mean += v;
  mean /= static_cast<double>(rho.size());
  double ss = 0.0;
  for (double v : rho) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / static_cast<double>(rho.size() - 1) / static_cast<double>(rho.size()));
  return {std::abs(mean - 1.0) <= 3.0 * se, "mean rho_T(1) " + fmt("%.4f", mean) + ", SE " + fmt("%.4f", se)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "frozen OU invariant law", 10, frozen_ou},
      {2, "averaged coefficients, linear oracle", 60, averaged_linear},
      {3, "matrix square root", 1, sqrt_random_spd},
      {4, "corrector, linear oracle", 60, corrector_linear},
      {5, "averaged filter vs Kalman-Bucy", 120, kalman_bucy},
      {6, "Zakai residual", 180, zakai},
      {7, "averaging trend in eps", 600, averaging_trend},
      {8, "filter trend in eps", 900, filter_trend},
      {9, "determinism across thread counts", 1800, determinism},
      {10, "martingale property of rho(1)", 300, martingale},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d (%s): %s [%.1f s of %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.title.c_str(),
                o.detail.c_str(), secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
