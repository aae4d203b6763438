#pragma once

// Run configuration, epsilon sweeps and the command-line front end.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmv/averaging.hpp"
#include "msmv/filtering.hpp"
#include "msmv/model.hpp"

namespace msmv {

struct CorrectorSettings {
  std::string test_function = "x";
  std::vector<double> x{0.0};
  std::vector<double> z{1.0};
  double mu_mean = 1.0;  // mu = Dirac mass at this point
  std::optional<double> horizon;
  int chains = 64;
  double dt = 1e-3;
};

struct ZakaiSettings {
  std::vector<std::string> probes{"one", "x"};
  double eps = 0.1;
  std::size_t stride = 10;
  int bootstrap = 200;
};

struct ExperimentConfig {
  std::string model = "linear";  // "linear" or "sine-example"
  LinearParams linear;
  SineParams sine;
  std::vector<double> eps{0.5, 0.1, 0.02};
  double horizon = 1.0;  // T
  double dt = 0.01;      // dt_slow
  double substep_factor = 10.0;
  std::size_t particles = 1000;         // N, law particles
  std::size_t filter_particles = 1000;  // N_f
  FrozenConfig frozen;
  CacheConfig cache;
  std::vector<std::string> test_functions{"tanh"};
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  int threads = 1;

  ResamplePolicy resample = ResamplePolicy::EssThreshold;
  double ess_threshold = 0.5;
  bool couple_slow_noise = true;  // both filters share B keys
  bool self_comparison = false;   // averaging sweep: averaged model in the multiscale slot
  int sliced_projections = 16;
  double invariant_mu_mean = 0.0;  // dump-invariant: mu = Dirac mass here

  ValidationConfig validation;
  CorrectorSettings corrector;
  ZakaiSettings zakai;

  /// Throws ConfigError on unknown keys, wrong types or violated invariants.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Every field, defaults included.
  nlohmann::json to_json() const;
  void validate() const;
  ModelSpec build_model() const;
  std::vector<double> grid() const;
  std::vector<TestFunction> functions() const;
};

/// Reads and parses a JSON config; ConfigError names the path when it is missing.
ExperimentConfig load_config(const std::filesystem::path& path);

struct AveragingSweepReport {
  std::vector<std::string> names;
  struct Row {
    double eps = 0.0;
    std::uint64_t seed = 0;
    double time = 0.0;
    double w2 = 0.0;
    std::vector<double> gaps;  // |<mu_eps, F> - <mu_bar, F>| per test function
  };
  std::vector<Row> rows;
  struct PerEps {
    double eps = 0.0;
    double median_terminal_w2 = 0.0;
    std::vector<double> median_terminal_gap;
  };
  std::vector<PerEps> per_eps;
  std::vector<double> noise_floor;  // median terminal gap between two independent averaged runs

  nlohmann::json summary() const;
};

/// For each eps and seed: the multiscale and averaged particle systems on
/// shared slow-noise keys, with per-time sliced W2 and functional gaps.
AveragingSweepReport run_averaging_sweep(const ExperimentConfig& cfg);

struct FilterSweepReport {
  std::vector<std::string> names;
  struct Cell {
    double eps = 0.0;
    std::uint64_t seed = 0;
    std::string status = "ok";  // ok, degenerate, blowup
    std::string message;
    std::vector<double> gap_mean;      // time-averaged |pi_eps(F) - pi_bar(F)|
    std::vector<double> gap_terminal;  // at T
    double min_ess_multiscale = 0.0;
    double min_ess_averaged = 0.0;
    double rho_one_multiscale = 0.0;  // at T
    double rho_one_averaged = 0.0;
    std::size_t resamples_multiscale = 0;
    std::size_t resamples_averaged = 0;
    std::optional<FilterOutput> multiscale;
    std::optional<FilterOutput> averaged;
  };
  std::vector<Cell> cells;  // eps-major, one per (eps, seed)
  struct PerEps {
    double eps = 0.0;
    std::vector<double> median_gap_mean;
    std::vector<double> median_gap_terminal;
    std::size_t failed = 0;
  };
  std::vector<PerEps> per_eps;

  nlohmann::json summary() const;
};

/// For each eps and seed: one synthetic Y, both filters on it, and the gap G.
/// Degenerate or blown-up cells are recorded and the sweep continues.
FilterSweepReport run_filter_sweep(const ExperimentConfig& cfg);

struct ZakaiCheck {
  std::string system;  // "multiscale" or "averaged"
  ZakaiReport report;
};

/// Zakai residuals of both filters for the configured probes (first seed).
std::vector<ZakaiCheck> run_zakai_check(const ExperimentConfig& cfg);

/// Median of the finite entries; NaN when there are none.
double median(std::vector<double> values);

/// Entry point of the `msmv` tool. Exit codes: 0 success, 2 config or usage
/// error, 3 numeric blow-up, 4 degenerate filter, 1 anything else.
int cli_main(int argc, char** argv);

}  // namespace msmv
