#include "msmv/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "msmv/errors.hpp"
#include "msmv/generators.hpp"
#include "msmv/integrator.hpp"
#include "msmv/io.hpp"
#include "msmv/parallel.hpp"

namespace msmv {

using nlohmann::json;

namespace {

constexpr std::uint64_t kLawSalt = 1;
constexpr std::uint64_t kObservationSalt = 2;
constexpr std::uint64_t kFilterSalt = 3;
constexpr std::uint64_t kFloorSalt = 4;
constexpr std::uint64_t kDecoupleSalt = 5;
constexpr std::uint64_t kFrozenSalt = 6;
constexpr std::uint64_t kBootstrapSalt = 7;

// Reads known keys of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(label(key) + ": " + e.what());
    }
  }

  void get_optional(const std::string& key, std::optional<double>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  const json* child(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string label(const std::string& key = {}) const {
    if (key.empty()) return where_.empty() ? "config" : where_;
    return where_.empty() ? key : where_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + label(item.key()) + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

const char* policy_name(ResamplePolicy p) { return p == ResamplePolicy::Never ? "never" : "ess"; }

template <class Fn>
auto as_config_error(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.get("model", c.model);
  if (const json* p = r.child("linear")) {
    ObjectReader q(*p, "linear");
    auto& L = c.linear;
    q.get("a", L.a);
    q.get("c", L.c);
    q.get("g", L.g);
    q.get("sigma_x", L.sigma_x);
    q.get("beta", L.beta);
    q.get("kappa", L.kappa);
    q.get("sigma_z", L.sigma_z);
    q.get("gamma1", L.gamma1);
    q.get("gamma2", L.gamma2);
    q.get("gamma3", L.gamma3);
    q.get("x0", L.x0);
    q.get("z0", L.z0);
    q.finish();
  }
  if (const json* p = r.child("sine")) {
    ObjectReader q(*p, "sine");
    q.get("beta", c.sine.beta);
    q.get("a1", c.sine.a1);
    q.get("a2", c.sine.a2);
    q.get("x0", c.sine.x0);
    q.get("z0", c.sine.z0);
    q.finish();
  }
  r.get("eps", c.eps);
  r.get("T", c.horizon);
  r.get("dt", c.dt);
  r.get("substep_factor", c.substep_factor);
  r.get("particles", c.particles);
  r.get("filter_particles", c.filter_particles);
  if (const json* p = r.child("frozen")) {
    ObjectReader q(*p, "frozen");
    q.get("dt", c.frozen.dt);
    q.get("burn_in", c.frozen.burn_in);
    q.get("horizon", c.frozen.horizon);
    q.get("n_chains", c.frozen.n_chains);
    q.get("thinning", c.frozen.thinning);
    q.get("antithetic", c.frozen.antithetic);
    q.finish();
  }
  if (const json* p = r.child("cache")) {
    ObjectReader q(*p, "cache");
    q.get("resolution", c.cache.resolution);
    q.finish();
  }
  r.get("test_functions", c.test_functions);
  r.get("seeds", c.seeds);
  r.get("output_dir", c.output_dir);
  r.get("threads", c.threads);
  if (const json* p = r.child("filter")) {
    ObjectReader q(*p, "filter");
    std::string policy = policy_name(c.resample);
    q.get("resample", policy);
    if (policy == "never")
      c.resample = ResamplePolicy::Never;
    else if (policy == "ess")
      c.resample = ResamplePolicy::EssThreshold;
    else
      throw ConfigError("filter.resample must be 'never' or 'ess', got '" + policy + "'");
    q.get("ess_threshold", c.ess_threshold);
    q.get("couple_slow_noise", c.couple_slow_noise);
    q.finish();
  }
  if (const json* p = r.child("averaging")) {
    ObjectReader q(*p, "averaging");
    q.get("self_comparison", c.self_comparison);
    q.get("sliced_projections", c.sliced_projections);
    q.finish();
  }
  if (const json* p = r.child("invariant")) {
    ObjectReader q(*p, "invariant");
    q.get("mu_mean", c.invariant_mu_mean);
    q.finish();
  }
  if (const json* p = r.child("validation")) {
    ObjectReader q(*p, "validation");
    q.get("n_pairs", c.validation.n_pairs);
    q.get("state_scale", c.validation.state_scale);
    q.get("cloud_size", c.validation.cloud_size);
    q.get("relative_slack", c.validation.relative_slack);
    q.finish();
  }
  if (const json* p = r.child("corrector")) {
    ObjectReader q(*p, "corrector");
    q.get("test_function", c.corrector.test_function);
    q.get("x", c.corrector.x);
    q.get("z", c.corrector.z);
    q.get("mu_mean", c.corrector.mu_mean);
    q.get_optional("horizon", c.corrector.horizon);
    q.get("chains", c.corrector.chains);
    q.get("dt", c.corrector.dt);
    q.finish();
  }
  if (const json* p = r.child("zakai")) {
    ObjectReader q(*p, "zakai");
    q.get("probes", c.zakai.probes);
    q.get("eps", c.zakai.eps);
    q.get("stride", c.zakai.stride);
    q.get("bootstrap", c.zakai.bootstrap);
    q.finish();
  }
  r.finish();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = model;
  j["linear"] = {{"a", linear.a},           {"c", linear.c},           {"g", linear.g},
                 {"sigma_x", linear.sigma_x}, {"beta", linear.beta},     {"kappa", linear.kappa},
                 {"sigma_z", linear.sigma_z}, {"gamma1", linear.gamma1}, {"gamma2", linear.gamma2},
                 {"gamma3", linear.gamma3},   {"x0", linear.x0},         {"z0", linear.z0}};
  j["sine"] = {{"beta", sine.beta}, {"a1", sine.a1}, {"a2", sine.a2}, {"x0", sine.x0}, {"z0", sine.z0}};
  j["eps"] = eps;
  j["T"] = horizon;
  j["dt"] = dt;
  j["substep_factor"] = substep_factor;
  j["particles"] = particles;
  j["filter_particles"] = filter_particles;
  j["frozen"] = {{"dt", frozen.dt},           {"burn_in", frozen.burn_in},   {"horizon", frozen.horizon},
                 {"n_chains", frozen.n_chains}, {"thinning", frozen.thinning}, {"antithetic", frozen.antithetic}};
  j["cache"] = {{"resolution", cache.resolution}};
  j["test_functions"] = test_functions;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  j["threads"] = threads;
  j["filter"] = {{"resample", policy_name(resample)},
                 {"ess_threshold", ess_threshold},
                 {"couple_slow_noise", couple_slow_noise}};
  j["averaging"] = {{"self_comparison", self_comparison}, {"sliced_projections", sliced_projections}};
  j["invariant"] = {{"mu_mean", invariant_mu_mean}};
  j["validation"] = {{"n_pairs", validation.n_pairs},
                     {"state_scale", validation.state_scale},
                     {"cloud_size", validation.cloud_size},
                     {"relative_slack", validation.relative_slack}};
  j["corrector"] = {{"test_function", corrector.test_function},
                    {"x", corrector.x},
                    {"z", corrector.z},
                    {"mu_mean", corrector.mu_mean},
                    {"horizon", corrector.horizon ? json(*corrector.horizon) : json(nullptr)},
                    {"chains", corrector.chains},
                    {"dt", corrector.dt}};
  j["zakai"] = {{"probes", zakai.probes}, {"eps", zakai.eps}, {"stride", zakai.stride}, {"bootstrap", zakai.bootstrap}};
  return j;
}

void ExperimentConfig::validate() const {
  if (model != "linear" && model != "sine-example")
    throw ConfigError("unknown model '" + model + "' (expected linear or sine-example)");
  if (model == "linear") linear.validate();
  if (model == "sine-example") sine.validate();
  if (eps.empty()) throw ConfigError("eps list must not be empty");
  for (double e : eps)
    if (!(e > 0.0 && e <= 1.0)) throw ConfigError("every eps must lie in (0, 1]");
  if (seeds.empty()) throw ConfigError("seeds list must not be empty");
  if (!(horizon > 0.0)) throw ConfigError("T must be positive");
  if (!(dt > 0.0 && dt <= horizon)) throw ConfigError("dt must lie in (0, T]");
  if (!(substep_factor >= 1.0)) throw ConfigError("substep_factor must be >= 1");
  if (particles < 2) throw ConfigError("particles must be >= 2");
  if (filter_particles < 1) throw ConfigError("filter_particles must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(cache.resolution > 0.0)) throw ConfigError("cache.resolution must be positive");
  if (!(ess_threshold > 0.0 && ess_threshold <= 1.0)) throw ConfigError("filter.ess_threshold must lie in (0, 1]");
  if (sliced_projections < 1) throw ConfigError("averaging.sliced_projections must be >= 1");
  as_config_error([&] {
    frozen.validate();
    return 0;
  });
  for (const auto& name : test_functions) test_functions::by_name(name);
  for (const auto& name : zakai.probes) test_functions::by_name(name);
  test_functions::by_name(corrector.test_function);
  if (!(zakai.eps > 0.0 && zakai.eps <= 1.0)) throw ConfigError("zakai.eps must lie in (0, 1]");
  if (zakai.stride < 1 || zakai.bootstrap < 2) throw ConfigError("zakai.stride >= 1 and zakai.bootstrap >= 2 required");
  if (corrector.chains < 1 || !(corrector.dt > 0.0)) throw ConfigError("corrector.chains >= 1 and dt > 0 required");
  if (corrector.horizon && !(*corrector.horizon > 0.0)) throw ConfigError("corrector.horizon must be positive");
}

ModelSpec ExperimentConfig::build_model() const {
  validate();
  return model == "linear" ? builtin_linear(linear) : builtin_sine(sine);
}

std::vector<double> ExperimentConfig::grid() const { return uniform_grid(horizon, dt); }

std::vector<TestFunction> ExperimentConfig::functions() const {
  std::vector<TestFunction> out;
  for (const auto& name : test_functions) out.push_back(test_functions::by_name(name));
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

double median(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }), values.end());
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t k = values.size() / 2;
  return values.size() % 2 ? values[k] : 0.5 * (values[k - 1] + values[k]);
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

double cloud_gap(const ParticleCloud& a, const ParticleCloud& b, const TestFunction& f) {
  auto avg = [&f](const ParticleCloud& c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) acc += c.weight(i) * f.eval(c.sample(i), c);
    return acc;
  };
  return std::abs(avg(a) - avg(b));
}

double cloud_distance(const ParticleCloud& a, const ParticleCloud& b, int projections, const RngKey& key) {
  return a.dim() == 1 ? w2_1d(a, b) : w2_sliced(a, b, projections, key);
}

// Descriptive least-squares slope of log(gap) against log(eps).
json log_slope(const std::vector<double>& eps, const std::vector<double>& gaps) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(gaps[i] > 0.0) || !std::isfinite(gaps[i])) continue;
    const double x = std::log(eps[i]), y = std::log(gaps[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return nullptr;
  const double d = static_cast<double>(n) * sxx - sx * sx;
  if (!(d > 0.0)) return nullptr;
  return (static_cast<double>(n) * sxy - sx * sy) / d;
}

}  // namespace

json AveragingSweepReport::summary() const {
  json j;
  j["test_functions"] = names;
  j["noise_floor"] = noise_floor;
  json rows_json = json::array();
  std::vector<double> eps_list;
  std::vector<std::vector<double>> by_f(names.size());
  for (const auto& p : per_eps) {
    rows_json.push_back({{"eps", p.eps},
                         {"median_terminal_w2", p.median_terminal_w2},
                         {"median_terminal_gap", p.median_terminal_gap}});
    eps_list.push_back(p.eps);
    for (std::size_t f = 0; f < names.size(); ++f) by_f[f].push_back(p.median_terminal_gap[f]);
  }
  j["per_eps"] = rows_json;
  json slopes = json::object();
  for (std::size_t f = 0; f < names.size(); ++f) slopes[names[f]] = log_slope(eps_list, by_f[f]);
  j["descriptive_log_slope"] = slopes;
  return j;
}

AveragingSweepReport run_averaging_sweep(const ExperimentConfig& cfg) {
  const ModelSpec model = cfg.build_model();
  const auto grid = cfg.grid();
  const auto funcs = cfg.functions();
  const std::size_t K = grid.size() - 1, n_f = funcs.size(), S = cfg.seeds.size(), E = cfg.eps.size();
  // One cache per seed: a bucket's entry comes from the first measure that hits it,
  // so a cache shared by concurrently running seeds would depend on scheduling.
  std::vector<std::unique_ptr<AveragedModel>> avg(S);
  for (std::size_t s = 0; s < S; ++s)
    avg[s] = std::make_unique<AveragedModel>(model, cfg.frozen, cfg.cache, derive_seed(cfg.seeds[s], kFrozenSalt));
  RunOptions opts;
  opts.substep_factor = cfg.substep_factor;

  // Averaged runs per seed, plus an independent replicate for the noise floor.
  std::vector<SimulationResult> averaged(S);
  std::vector<std::vector<double>> floor_gaps(n_f, std::vector<double>(S));
  parallel_for(S, cfg.threads, [&](std::size_t s) {
    averaged[s] = simulate_averaged(*avg[s], cfg.particles, grid, cfg.seeds[s], opts);
    const auto replicate = simulate_averaged(*avg[s], cfg.particles, grid, derive_seed(cfg.seeds[s], kFloorSalt), opts);
    for (std::size_t f = 0; f < n_f; ++f)
      floor_gaps[f][s] = cloud_gap(averaged[s].flow.at(K), replicate.flow.at(K), funcs[f]);
  });

  AveragingSweepReport rep;
  for (const auto& f : funcs) rep.names.push_back(f.name);
  for (std::size_t f = 0; f < n_f; ++f) rep.noise_floor.push_back(median(floor_gaps[f]));

  std::vector<std::vector<AveragingSweepReport::Row>> cell_rows(E * S);
  parallel_for(E * S, cfg.threads, [&](std::size_t cell) {
    const std::size_t e = cell / S, s = cell % S;
    const std::uint64_t seed = cfg.seeds[s];
    std::optional<SimulationResult> own;
    if (!cfg.self_comparison) own = simulate_system(model, cfg.eps[e], cfg.particles, grid, seed, opts);
    const LawFlow& slow = own ? own->flow : averaged[s].flow;
    const LawFlow& bar = averaged[s].flow;
    auto& rows = cell_rows[cell];
    for (std::size_t k = 0; k <= K; ++k) {
      AveragingSweepReport::Row row;
      row.eps = cfg.eps[e];
      row.seed = seed;
      row.time = grid[k];
      row.w2 = cloud_distance(slow.at(k), bar.at(k), cfg.sliced_projections,
                              RngKey{seed, StreamClass::Slicing, 0, static_cast<std::uint32_t>(k), 0});
      for (const auto& f : funcs) row.gaps.push_back(cloud_gap(slow.at(k), bar.at(k), f));
      rows.push_back(std::move(row));
    }
  });

  for (std::size_t e = 0; e < E; ++e) {
    AveragingSweepReport::PerEps p;
    p.eps = cfg.eps[e];
    std::vector<double> w2s;
    std::vector<std::vector<double>> gaps(n_f);
    for (std::size_t s = 0; s < S; ++s) {
      const auto& last = cell_rows[e * S + s].back();
      w2s.push_back(last.w2);
      for (std::size_t f = 0; f < n_f; ++f) gaps[f].push_back(last.gaps[f]);
    }
    p.median_terminal_w2 = median(w2s);
    for (std::size_t f = 0; f < n_f; ++f) p.median_terminal_gap.push_back(median(gaps[f]));
    rep.per_eps.push_back(std::move(p));
  }
  for (auto& rows : cell_rows)
    for (auto& row : rows) rep.rows.push_back(std::move(row));
  return rep;
}

json FilterSweepReport::summary() const {
  json j;
  j["test_functions"] = names;
  json rows_json = json::array();
  std::vector<double> eps_list;
  std::vector<std::vector<double>> by_f(names.size());
  for (const auto& p : per_eps) {
    rows_json.push_back({{"eps", p.eps},
                         {"median_gap_mean", p.median_gap_mean},
                         {"median_gap_terminal", p.median_gap_terminal},
                         {"failed_cells", p.failed}});
    eps_list.push_back(p.eps);
    for (std::size_t f = 0; f < names.size(); ++f) by_f[f].push_back(p.median_gap_mean[f]);
  }
  j["per_eps"] = rows_json;
  json slopes = json::object();
  for (std::size_t f = 0; f < names.size(); ++f) slopes[names[f]] = log_slope(eps_list, by_f[f]);
  j["descriptive_log_slope"] = slopes;
  json failures = json::array();
  for (const auto& c : cells)
    if (c.status != "ok") failures.push_back({{"eps", c.eps}, {"seed", c.seed}, {"status", c.status}, {"message", c.message}});
  j["failures"] = failures;
  return j;
}

FilterSweepReport run_filter_sweep(const ExperimentConfig& cfg) {
  const ModelSpec model = cfg.build_model();
  const auto grid = cfg.grid();
  const auto funcs = cfg.functions();
  const std::size_t n_f = funcs.size(), S = cfg.seeds.size(), E = cfg.eps.size();
  // One cache per seed: a bucket's entry comes from the first measure that hits it,
  // so a cache shared by concurrently running seeds would depend on scheduling.
  std::vector<std::unique_ptr<AveragedModel>> avg(S);
  for (std::size_t s = 0; s < S; ++s)
    avg[s] = std::make_unique<AveragedModel>(model, cfg.frozen, cfg.cache, derive_seed(cfg.seeds[s], kFrozenSalt));
  RunOptions opts;
  opts.substep_factor = cfg.substep_factor;

  FilterConfig fcfg;
  fcfg.particles = cfg.filter_particles;
  fcfg.resample = cfg.resample;
  fcfg.ess_threshold = cfg.ess_threshold;
  fcfg.test_functions = funcs;
  fcfg.substep_factor = cfg.substep_factor;

  std::vector<LawFlow> averaged_flows(S);
  parallel_for(S, cfg.threads, [&](std::size_t s) {
    averaged_flows[s] = simulate_averaged(*avg[s], cfg.particles, grid, derive_seed(cfg.seeds[s], kLawSalt), opts).flow;
  });

  FilterSweepReport rep;
  for (const auto& f : funcs) rep.names.push_back(f.name);
  rep.cells.resize(E * S);
  parallel_for(E * S, cfg.threads, [&](std::size_t idx) {
    const std::size_t e = idx / S, s = idx % S;
    auto& cell = rep.cells[idx];
    cell.eps = cfg.eps[e];
    cell.seed = cfg.seeds[s];
    cell.gap_mean.assign(n_f, std::numeric_limits<double>::quiet_NaN());
    cell.gap_terminal.assign(n_f, std::numeric_limits<double>::quiet_NaN());
    try {
      const auto law = simulate_system(model, cell.eps, cfg.particles, grid, derive_seed(cell.seed, kLawSalt), opts);
      const auto y = synthesize_observations(model, cell.eps, law.flow, derive_seed(cell.seed, kObservationSalt),
                                             ObservationOptions{false, false, cfg.substep_factor});
      const std::uint64_t fseed = derive_seed(cell.seed, kFilterSalt);
      cell.multiscale = run_filter_multiscale(model, cell.eps, law.flow, y, fcfg, fseed);
      cell.averaged = run_filter_averaged(*avg[s], averaged_flows[s], y, fcfg,
                                          cfg.couple_slow_noise ? fseed : derive_seed(fseed, kDecoupleSalt));
      const auto& a = *cell.multiscale;
      const auto& b = *cell.averaged;
      const std::size_t T = grid.size();
      for (std::size_t f = 0; f < n_f; ++f) {
        double acc = 0.0;
        for (std::size_t k = 0; k < T; ++k) acc += std::abs(a.estimates[k][f] - b.estimates[k][f]);
        cell.gap_mean[f] = acc / static_cast<double>(T);
        cell.gap_terminal[f] = std::abs(a.estimates[T - 1][f] - b.estimates[T - 1][f]);
      }
      cell.min_ess_multiscale = *std::min_element(a.ess.begin(), a.ess.end());
      cell.min_ess_averaged = *std::min_element(b.ess.begin(), b.ess.end());
      cell.rho_one_multiscale = a.rho_one.back();
      cell.rho_one_averaged = b.rho_one.back();
      cell.resamples_multiscale = a.resample_steps.size();
      cell.resamples_averaged = b.resample_steps.size();
    } catch (const DegenerateFilterError& err) {
      cell.status = "degenerate";
      cell.message = err.what();
    } catch (const BlowUpError& err) {
      cell.status = "blowup";
      cell.message = err.what();
    }
  });

  for (std::size_t e = 0; e < E; ++e) {
    FilterSweepReport::PerEps p;
    p.eps = cfg.eps[e];
    for (std::size_t f = 0; f < n_f; ++f) {
      std::vector<double> mean_gaps, terminal_gaps;
      for (std::size_t s = 0; s < S; ++s) {
        mean_gaps.push_back(rep.cells[e * S + s].gap_mean[f]);
        terminal_gaps.push_back(rep.cells[e * S + s].gap_terminal[f]);
      }
      p.median_gap_mean.push_back(median(mean_gaps));
      p.median_gap_terminal.push_back(median(terminal_gaps));
    }
    for (std::size_t s = 0; s < S; ++s) p.failed += rep.cells[e * S + s].status != "ok";
    rep.per_eps.push_back(std::move(p));
  }
  return rep;
}

std::vector<ZakaiCheck> run_zakai_check(const ExperimentConfig& cfg) {
  const ModelSpec model = cfg.build_model();
  const auto grid = cfg.grid();
  const std::uint64_t seed = cfg.seeds.front();
  const double eps = cfg.zakai.eps;
  const AveragedModel avg(model, cfg.frozen, cfg.cache, derive_seed(seed, kFrozenSalt));
  RunOptions opts;
  opts.substep_factor = cfg.substep_factor;
  opts.threads = cfg.threads;

  FilterConfig fcfg;
  fcfg.particles = cfg.filter_particles;
  fcfg.resample = ResamplePolicy::Never;
  fcfg.substep_factor = cfg.substep_factor;
  fcfg.threads = cfg.threads;
  fcfg.zakai_stride = cfg.zakai.stride;
  for (const auto& name : cfg.zakai.probes) fcfg.zakai_probes.push_back(test_functions::by_name(name));

  const auto law = simulate_system(model, eps, cfg.particles, grid, derive_seed(seed, kLawSalt), opts);
  const auto bar = simulate_averaged(avg, cfg.particles, grid, derive_seed(seed, kLawSalt), opts);
  const auto y = synthesize_observations(model, eps, law.flow, derive_seed(seed, kObservationSalt),
                                         ObservationOptions{false, false, cfg.substep_factor});
  const std::uint64_t fseed = derive_seed(seed, kFilterSalt);
  const auto ms = run_filter_multiscale(model, eps, law.flow, y, fcfg, fseed);
  const auto av = run_filter_averaged(avg, bar.flow, y, fcfg, fseed);

  std::vector<ZakaiCheck> out;
  for (std::size_t p = 0; p < fcfg.zakai_probes.size(); ++p) {
    out.push_back({"multiscale", zakai_residual(ms, p, derive_seed(seed, kBootstrapSalt), cfg.zakai.bootstrap)});
    out.push_back({"averaged", zakai_residual(av, p, derive_seed(seed, kBootstrapSalt), cfg.zakai.bootstrap)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string cell(double v) { return format_real(v); }
std::string cell(std::uint64_t v) { return std::to_string(v); }

struct OutputSink {
  std::filesystem::path dir;
  std::string format = "csv";
  json config;
  std::vector<std::uint64_t> seeds;

  std::filesystem::path write(const std::string& stem, const Table& t) const {
    const auto path = dir / (stem + "." + format);
    auto os = open_output(path);
    if (format == "csv") {
      for (std::size_t c = 0; c < t.header.size(); ++c) os << (c ? "," : "") << t.header[c];
      os << '\n';
      for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
        os << '\n';
      }
    } else {
      // Numbers stay as their 17-digit text so the JSON output round-trips exactly.
      json arr = json::array();
      for (const auto& row : t.rows) {
        json rec = json::object();
        for (std::size_t c = 0; c < row.size(); ++c) rec[t.header[c]] = row[c];
        arr.push_back(rec);
      }
      os << arr.dump(1) << '\n';
    }
    write_sidecar(path, config, seeds, t.rows.size());
    return path;
  }

  std::filesystem::path write_json(const std::string& stem, const json& j) const {
    const auto path = dir / (stem + ".json");
    auto os = open_output(path);
    os << j.dump(2) << '\n';
    return path;
  }
};

Table summary_table(const std::vector<MomentSummary>& summary) {
  Table t;
  t.header = {"time"};
  const std::size_t n = summary.empty() ? 0 : summary.front().mean.size();
  for (std::size_t i = 0; i < n; ++i) t.header.push_back("mean_" + std::to_string(i));
  for (const char* h : {"second_moment", "fourth_moment", "min", "max"}) t.header.push_back(h);
  for (const auto& s : summary) {
    std::vector<std::string> row{cell(s.time)};
    for (double v : s.mean) row.push_back(cell(v));
    for (double v : {s.second_moment, s.fourth_moment, s.min, s.max}) row.push_back(cell(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table cloud_table(const ParticleCloud& cloud) {
  Table t;
  t.header = {"weight"};
  for (std::size_t d = 0; d < cloud.dim(); ++d) t.header.push_back("x" + std::to_string(d));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::vector<std::string> row{cell(cloud.weight(i))};
    for (double v : cloud.sample(i)) row.push_back(cell(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table filter_table(const FilterOutput& out) {
  Table t;
  t.header = {"time", "ess", "rho_one", "log_rho_one"};
  for (const auto& name : out.names) {
    t.header.push_back("est_" + name);
    t.header.push_back("se_" + name);
  }
  for (std::size_t k = 0; k < out.grid.size(); ++k) {
    std::vector<std::string> row{cell(out.grid[k]), cell(out.ess[k]), cell(out.rho_one[k]), cell(out.log_rho_one[k])};
    for (std::size_t f = 0; f < out.names.size(); ++f) {
      row.push_back(cell(out.estimates[k][f]));
      row.push_back(cell(out.standard_errors[k][f]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> threads;
  std::string format = "csv";
  std::string model;
};

ExperimentConfig resolve_config(const CliOptions& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  if (!o.model.empty()) cfg.model = o.model == "sine" ? "sine-example" : o.model;
  if (o.seed_override) cfg.seeds = {*o.seed_override};
  if (o.threads) cfg.threads = *o.threads;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

int run_command(const std::string& command, const CliOptions& o) {
  const ExperimentConfig cfg = resolve_config(o);
  OutputSink sink{cfg.output_dir, o.format, cfg.to_json(), cfg.seeds};
  const std::uint64_t seed = cfg.seeds.front();
  RunOptions opts;
  opts.substep_factor = cfg.substep_factor;
  opts.threads = cfg.threads;

  if (command == "validate") {
    const auto report = validate_model(cfg.build_model(), cfg.validation, seed);
    const auto path = sink.write_json("validation", report.to_json());
    for (const auto& c : report.checks)
      std::cout << c.name << ": "
                << (c.status == CheckStatus::Pass ? "PASS" : c.status == CheckStatus::Fail ? "FAIL" : "NOT DECLARED")
                << " (observed " << c.observed << ")\n";
    for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
    std::cout << "report written to " << path.string() << '\n';
    return 0;
  }
  if (command == "simulate") {
    const auto res = simulate_system(cfg.build_model(), cfg.eps.front(), cfg.particles, cfg.grid(), seed, opts);
    sink.write("simulate_summary", summary_table(res.summary));
    sink.write("simulate_final_cloud", cloud_table(res.flow.at(res.flow.size() - 1)));
    return 0;
  }
  if (command == "average") {
    const AveragedModel avg(cfg.build_model(), cfg.frozen, cfg.cache, derive_seed(seed, kFrozenSalt));
    const auto res = simulate_averaged(avg, cfg.particles, cfg.grid(), seed, opts);
    sink.write("average_summary", summary_table(res.summary));
    sink.write("average_final_cloud", cloud_table(res.flow.at(res.flow.size() - 1)));
    sink.write_json("average_cache", avg.cache_stats());
    return 0;
  }
  if (command == "dump-invariant") {
    const ModelSpec model = cfg.build_model();
    const AveragedModel avg(model, cfg.frozen, cfg.cache, derive_seed(seed, kFrozenSalt));
    std::vector<double> point(model.n, cfg.invariant_mu_mean);
    const auto e = avg.entry(ParticleCloud::dirac(point));
    sink.write("invariant", cloud_table(e->nu.cloud));
    sink.write_json("invariant_cache", avg.cache_stats());
    return 0;
  }
  if (command == "corrector") {
    const ModelSpec model = cfg.build_model();
    const auto& c = cfg.corrector;
    if (c.x.size() != model.n || c.z.size() != model.m) throw ConfigError("corrector.x / corrector.z have wrong dimension");
    CorrectorConfig cc;
    cc.horizon = c.horizon;
    cc.chains = c.chains;
    cc.dt = c.dt;
    cc.frozen = cfg.frozen;
    std::vector<double> point(model.n, c.mu_mean);
    const auto est = as_config_error([&] {
      return estimate_corrector(test_functions::by_name(c.test_function), model, c.x, ParticleCloud::dirac(point), c.z,
                                cc, seed);
    });
    json j = {{"test_function", c.test_function}, {"value", est.value},     {"standard_error", est.standard_error},
              {"phi_bar", est.phi_bar},           {"horizon", est.horizon}, {"fitted_rate", nullptr},
              {"tail_bound", nullptr}};
    if (est.fitted_rate) j["fitted_rate"] = *est.fitted_rate;
    if (est.tail_bound) j["tail_bound"] = *est.tail_bound;
    sink.write_json("corrector", j);
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  if (command == "filter") {
    const ModelSpec model = cfg.build_model();
    const AveragedModel avg(model, cfg.frozen, cfg.cache, derive_seed(seed, kFrozenSalt));
    const double eps = cfg.eps.front();
    const auto grid = cfg.grid();
    const auto law = simulate_system(model, eps, cfg.particles, grid, derive_seed(seed, kLawSalt), opts);
    const auto bar = simulate_averaged(avg, cfg.particles, grid, derive_seed(seed, kLawSalt), opts);
    const auto y = synthesize_observations(model, eps, law.flow, derive_seed(seed, kObservationSalt),
                                           ObservationOptions{false, false, cfg.substep_factor});
    FilterConfig fcfg;
    fcfg.particles = cfg.filter_particles;
    fcfg.resample = cfg.resample;
    fcfg.ess_threshold = cfg.ess_threshold;
    fcfg.test_functions = cfg.functions();
    fcfg.substep_factor = cfg.substep_factor;
    fcfg.threads = cfg.threads;
    const std::uint64_t fseed = derive_seed(seed, kFilterSalt);
    const auto ms = run_filter_multiscale(model, eps, law.flow, y, fcfg, fseed);
    const auto av = run_filter_averaged(avg, bar.flow, y, fcfg, cfg.couple_slow_noise ? fseed : derive_seed(fseed, kDecoupleSalt));
    sink.write("filter_multiscale", filter_table(ms));
    sink.write("filter_averaged", filter_table(av));
    Table yt;
    yt.header = {"step", "t_start", "t_end", "dy_0"};
    for (std::size_t k = 0; k < y.steps(); ++k)
      yt.rows.push_back({std::to_string(k), cell(y.grid[k]), cell(y.grid[k + 1]), cell(y.increments[k])});
    sink.write("ypath", yt);
    if (model.linear) {
      std::vector<double> means;
      for (std::size_t k = 0; k < bar.flow.size(); ++k) means.push_back(bar.flow.at(k).mean()[0]);
      const auto kb = kalman_bucy_oracle(model, y, OracleMode::Averaged, &means);
      Table kt;
      kt.header = {"time", "mean", "variance"};
      for (std::size_t k = 0; k < kb.grid.size(); ++k) kt.rows.push_back({cell(kb.grid[k]), cell(kb.mean[k]), cell(kb.variance[k])});
      sink.write("kalman_bucy", kt);
    }
    return 0;
  }
  if (command == "sweep-averaging") {
    const auto rep = run_averaging_sweep(cfg);
    Table t;
    t.header = {"eps", "seed", "time", "w2"};
    for (const auto& name : rep.names) t.header.push_back("gap_" + name);
    for (const auto& r : rep.rows) {
      std::vector<std::string> row{cell(r.eps), cell(r.seed), cell(r.time), cell(r.w2)};
      for (double g : r.gaps) row.push_back(cell(g));
      t.rows.push_back(std::move(row));
    }
    sink.write("averaging_sweep", t);
    sink.write_json("averaging_summary", rep.summary());
    std::cout << rep.summary().dump(2) << '\n';
    return 0;
  }
  if (command == "sweep-filter") {
    const auto rep = run_filter_sweep(cfg);
    Table gaps;
    gaps.header = {"eps", "seed", "status"};
    for (const auto& name : rep.names) {
      gaps.header.push_back("gap_mean_" + name);
      gaps.header.push_back("gap_terminal_" + name);
    }
    for (const char* h : {"min_ess_multiscale", "min_ess_averaged", "rho_one_multiscale", "rho_one_averaged",
                          "resamples_multiscale", "resamples_averaged"})
      gaps.header.push_back(h);
    Table traces;
    traces.header = {"eps", "seed", "time", "ess_multiscale", "ess_averaged", "rho_one_multiscale", "rho_one_averaged"};
    for (const auto& name : rep.names) {
      traces.header.push_back("est_multiscale_" + name);
      traces.header.push_back("est_averaged_" + name);
    }
    for (const auto& c : rep.cells) {
      std::vector<std::string> row{cell(c.eps), cell(c.seed), c.status};
      for (std::size_t f = 0; f < rep.names.size(); ++f) {
        row.push_back(cell(c.gap_mean[f]));
        row.push_back(cell(c.gap_terminal[f]));
      }
      for (double v : {c.min_ess_multiscale, c.min_ess_averaged, c.rho_one_multiscale, c.rho_one_averaged}) row.push_back(cell(v));
      row.push_back(std::to_string(c.resamples_multiscale));
      row.push_back(std::to_string(c.resamples_averaged));
      gaps.rows.push_back(std::move(row));
      if (!c.multiscale || !c.averaged) continue;
      const auto& a = *c.multiscale;
      const auto& b = *c.averaged;
      for (std::size_t k = 0; k < a.grid.size(); ++k) {
        std::vector<std::string> tr{cell(c.eps),        cell(c.seed),      cell(a.grid[k]),   cell(a.ess[k]),
                                    cell(b.ess[k]),     cell(a.rho_one[k]), cell(b.rho_one[k])};
        for (std::size_t f = 0; f < rep.names.size(); ++f) {
          tr.push_back(cell(a.estimates[k][f]));
          tr.push_back(cell(b.estimates[k][f]));
        }
        traces.rows.push_back(std::move(tr));
      }
    }
    if (gaps.rows.size() != cfg.eps.size() * cfg.seeds.size())
      throw std::logic_error("filter sweep produced the wrong number of gap rows");
    sink.write("filter_gaps", gaps);
    sink.write("filter_traces", traces);
    sink.write_json("filter_summary", rep.summary());
    std::cout << rep.summary().dump(2) << '\n';
    return 0;
  }
  if (command == "zakai-check") {
    const auto checks = run_zakai_check(cfg);
    Table t;
    t.header = {"system", "probe", "time", "residual", "standard_error", "ratio"};
    json summary = json::array();
    for (const auto& c : checks) {
      for (std::size_t k = 0; k < c.report.times.size(); ++k)
        t.rows.push_back({c.system, c.report.name, cell(c.report.times[k]), cell(c.report.residual[k]),
                          cell(c.report.standard_error[k]), cell(c.report.ratio[k])});
      summary.push_back({{"system", c.system}, {"probe", c.report.name}, {"max_ratio", c.report.max_ratio}});
    }
    sink.write("zakai", t);
    sink.write_json("zakai_summary", summary);
    std::cout << summary.dump(2) << '\n';
    return 0;
  }
  throw ConfigError("unknown subcommand '" + command + "'");
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Monte Carlo toolkit for multiscale McKean-Vlasov signal-observation systems", "msmv"};
  app.require_subcommand(1);
  CliOptions o;
  std::uint64_t seed_override = 0;
  int threads = 0;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--out", o.out_dir, "Output directory (overrides output_dir)");
  auto* seed_opt = app.add_option("--seed-override", seed_override, "Replace the seed list with this seed");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", o.format, "Tabular output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--model", o.model, "Model override")->check(CLI::IsMember({"linear", "sine", "sine-example"}));

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"validate", "Spot-check the model assumptions against the declared constants"},
      {"simulate", "Simulate the multiscale particle system at eps[0]"},
      {"average", "Simulate the averaged particle system"},
      {"dump-invariant", "Export the frozen-equation invariant sample and cache statistics"},
      {"corrector", "Estimate the Poisson corrector for one test function"},
      {"filter", "Run both filters on one synthetic observation path"},
      {"sweep-averaging", "Epsilon sweep: multiscale vs averaged laws"},
      {"sweep-filter", "Epsilon sweep: multiscale vs averaged filters"},
      {"zakai-check", "Zakai residuals of both filters"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (seed_opt->count()) o.seed_override = seed_override;
  if (threads_opt->count()) o.threads = threads;

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run_command(command, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const BlowUpError& e) {
    std::cerr << "numeric blow-up: " << e.what() << '\n';
    return 3;
  } catch (const DegenerateFilterError& e) {
    std::cerr << "degenerate filter: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace msmv
