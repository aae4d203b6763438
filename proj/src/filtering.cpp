#include "msmv/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "msmv/errors.hpp"
#include "msmv/integrator.hpp"
#include "msmv/io.hpp"
#include "msmv/parallel.hpp"

namespace msmv {

namespace {

constexpr std::uint64_t kTruthSalt = 0x7472757468ULL;  // "truth"

double dot(ConstSpan a, ConstSpan b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_grids(const LawFlow& flow, const YPath& y) {
  if (y.grid.size() < 2) throw std::invalid_argument("observation path has no increments");
  if (!flow.covers(y.grid)) throw std::invalid_argument("law flow grid does not match the observation grid");
  if (y.increments.size() != y.steps() * y.l) throw std::invalid_argument("observation path is truncated");
}

}  // namespace

YPath synthesize_observations(const ModelSpec& model, double eps, const LawFlow& law_flow, std::uint64_t seed,
                              const ObservationOptions& opts) {
  model.check_well_formed();
  if (law_flow.size() < 2) throw std::invalid_argument("synthesize_observations: law flow needs two or more times");
  const auto& grid = law_flow.grid();
  const double dt = uniform_step(grid);
  const std::size_t steps = grid.size() - 1, n = model.n, m = model.m, l = model.l;

  YPath y;
  y.grid = grid;
  y.l = l;
  y.seed = seed;
  y.eps = eps;
  y.noise_free = opts.noise_free;
  y.reference_measure = opts.reference_measure;
  y.increments.assign(steps * l, 0.0);
  YPath::Truth truth;
  truth.x.reserve((steps + 1) * n);
  truth.z.reserve((steps + 1) * m);

  auto state = SlowFastState::replicate(model, 1);
  truth.x.insert(truth.x.end(), state.x.begin(), state.x.end());
  truth.z.insert(truth.z.end(), state.z.begin(), state.z.end());
  const StepConfig step_cfg{dt, opts.substep_factor, eps};
  const NoiseKeys keys{derive_seed(seed, kTruthSalt), 0};
  std::vector<double> h(l), dv(l);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& mu = law_flow.at(k);
    model.h(state.x, mu, state.z, h);
    if (!opts.noise_free) fill_gaussian(RngKey{seed, StreamClass::V, 0, static_cast<std::uint32_t>(k), 0}, dt, dv);
    for (std::size_t r = 0; r < l; ++r)
      y.increments[k * l + r] = (opts.reference_measure ? 0.0 : h[r] * dt) + (opts.noise_free ? 0.0 : dv[r]);
    advance_multiscale(state, model, mu, step_cfg, keys, static_cast<std::uint32_t>(k));
    truth.x.insert(truth.x.end(), state.x.begin(), state.x.end());
    truth.z.insert(truth.z.end(), state.z.begin(), state.z.end());
  }
  y.truth = std::move(truth);
  return y;
}

void FilterConfig::validate() const {
  if (particles < 1) throw ConfigError("filter: need at least one particle");
  if (resample == ResamplePolicy::EssThreshold && !(ess_threshold > 0.0 && ess_threshold <= 1.0))
    throw ConfigError("filter: ESS threshold must lie in (0, 1]");
  if (!(substep_factor >= 1.0)) throw ConfigError("filter: substep factor must be >= 1");
  if (!zakai_probes.empty() && resample != ResamplePolicy::Never)
    throw ConfigError("filter: Zakai probes need resampling disabled");
  if (zakai_stride < 1) throw ConfigError("filter: zakai_stride must be >= 1");
}

// ---------------------------------------------------------------------------
// Resampling and normalization

std::vector<std::size_t> resample_systematic(const std::vector<double>& weights, double u, std::size_t count) {
  if (weights.empty()) throw std::invalid_argument("resample_systematic: no weights");
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("resample_systematic: u must lie in [0, 1)");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("resample_systematic: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw DegenerateFilterError("resample_systematic: all weights are zero", 0);

  // Cumulative weights in units of one slot. Boundaries within rounding of an
  // integer are snapped so that exact proportions give exact copy counts.
  const double scale = static_cast<double>(count) / total;
  double prefix = 0.0;
  auto boundary = [&](std::size_t k) {
    prefix += weights[k];
    const double b = prefix * scale;
    const double r = std::round(b);
    return std::abs(b - r) <= 1e-9 * std::max(1.0, r) ? r : b;
  };

  std::vector<std::size_t> out(count);
  std::size_t i = 0;
  double cumulative = boundary(0);
  const std::size_t last = weights.size() - 1;
  for (std::size_t j = 0; j < count; ++j) {
    const double position = u + static_cast<double>(j);
    while (position >= cumulative && i < last) cumulative = boundary(++i);
    out[j] = i;
  }
  return out;
}

std::vector<std::size_t> resample_systematic(const std::vector<double>& weights, const RngKey& key) {
  return resample_systematic(weights, uniform01(key), weights.size());
}

double effective_sample_size(const std::vector<double>& weights) {
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    s += w;
    s2 += w * w;
  }
  if (!(s2 > 0.0)) throw std::invalid_argument("effective_sample_size: all weights are zero");
  return s * s / s2;
}

std::vector<double> ks_normalize(const std::vector<double>& rho, double rho_one) {
  if (!(rho_one > 0.0)) throw std::invalid_argument("ks_normalize: rho(1) must be positive");
  std::vector<double> out(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) out[i] = rho[i] / rho_one;
  return out;
}

// ---------------------------------------------------------------------------
// Filter core

namespace {

class MultiscaleDynamics {
 public:
  struct Context {};

  MultiscaleDynamics(const ModelSpec& model, double eps, double substep_factor)
      : model_(model), eps_(eps), factor_(substep_factor) {}

  std::size_t l() const { return model_.l; }
  SlowFastState initial(std::size_t count) const { return SlowFastState::replicate(model_, count); }
  Context prepare(const ParticleCloud&) const { return {}; }
  void observe(const Context&, ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan h) const {
    model_.h(x, mu, z, h);
  }
  double generator(const Context&, const TestFunction& f, ConstSpan x, const ParticleCloud& mu, ConstSpan z) const {
    return apply_L(f, model_, x, mu, z);
  }
  void advance(SlowFastState& s, const ParticleCloud& mu, double dt, const NoiseKeys& keys, std::uint32_t k,
               int threads) const {
    advance_multiscale(s, model_, mu, StepConfig{dt, factor_, eps_}, keys, k, threads);
  }

 private:
  const ModelSpec& model_;
  double eps_;
  double factor_;
};

class AveragedDynamics {
 public:
  using Context = std::shared_ptr<const AveragedModel::Entry>;

  explicit AveragedDynamics(const AveragedModel& avg) : avg_(avg) {}

  std::size_t l() const { return avg_.l(); }
  SlowFastState initial(std::size_t count) const {
    auto s = SlowFastState::replicate(avg_.base(), count);
    s.m = 0;
    s.z.clear();
    return s;
  }
  Context prepare(const ParticleCloud& mu) const { return avg_.entry(mu); }
  void observe(const Context& e, ConstSpan x, const ParticleCloud& mu, ConstSpan, OutSpan h) const {
    avg_.observation(*e, x, mu, h);
  }
  double generator(const Context& e, const TestFunction& f, ConstSpan x, const ParticleCloud& mu, ConstSpan) const {
    return apply_Lbar(f, avg_, *e, x, mu);
  }
  void advance(SlowFastState& s, const ParticleCloud& mu, double dt, const NoiseKeys& keys, std::uint32_t k,
               int threads) const {
    advance_averaged(s.x, avg_, mu, dt, keys, k, threads);
  }

 private:
  const AveragedModel& avg_;
};

template <class Dynamics>
FilterOutput run_filter(const Dynamics& dyn, const LawFlow& flow, const YPath& y, const FilterConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  check_grids(flow, y);
  if (y.l != dyn.l()) throw std::invalid_argument("observation dimension does not match the model");
  const double dt = uniform_step(y.grid);
  const std::size_t N = cfg.particles, steps = y.steps(), l = y.l;
  const std::size_t n_f = cfg.test_functions.size(), n_probe = cfg.zakai_probes.size();

  SlowFastState state = dyn.initial(N);
  const std::size_t n = state.n, m = state.m;
  std::vector<double> logw(N, 0.0), w(N);
  const NoiseKeys keys{seed, 0};

  FilterOutput out;
  out.grid = y.grid;
  for (const auto& f : cfg.test_functions) out.names.push_back(f.name);

  auto xs = [&](std::size_t i) { return ConstSpan(state.x.data() + i * n, n); };
  auto zs = [&](std::size_t i) { return ConstSpan(state.z.data() + i * m, m); };

  auto record = [&](std::size_t k) {
    const auto& mu = flow.at(k);
    double top = -std::numeric_limits<double>::infinity();
    for (double v : logw) top = std::max(top, v);
    if (!std::isfinite(top)) throw DegenerateFilterError("filter weights are not finite", k);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      w[i] = std::exp(logw[i] - top);
      s += w[i];
      s2 += w[i] * w[i];
    }
    if (!(s > 0.0) || !std::isfinite(s)) throw DegenerateFilterError("filter weights underflowed", k);
    out.ess.push_back(s * s / s2);
    out.log_rho_one.push_back(top + std::log(s / static_cast<double>(N)));
    out.rho_one.push_back(std::exp(out.log_rho_one.back()));
    std::vector<double> est(n_f, 0.0), se(n_f, 0.0), values(N);
    for (std::size_t f = 0; f < n_f; ++f) {
      const auto& F = cfg.test_functions[f];
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        values[i] = F.eval(xs(i), mu);
        acc += w[i] * values[i];
      }
      est[f] = acc / s;
      double var = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double d = w[i] / s * (values[i] - est[f]);
        var += d * d;
      }
      se[f] = std::sqrt(var);
    }
    out.estimates.push_back(std::move(est));
    out.standard_errors.push_back(std::move(se));
    if (cfg.record_log_weights) out.log_weights.push_back(logw);
  };

  // Zakai accumulators: sum_j Lambda_i(t_j) [L Psi dt + Psi h . dY].
  std::vector<std::vector<double>> accum(n_probe, std::vector<double>(N, 0.0));
  std::vector<double> psi0(n_probe);
  for (std::size_t p = 0; p < n_probe; ++p) {
    out.zakai.names.push_back(cfg.zakai_probes[p].name);
    psi0[p] = cfg.zakai_probes[p].eval(xs(0), flow.at(0));
  }
  out.zakai.residual.assign(n_probe, {});

  record(0);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& mu = flow.at(k);
    const auto ctx = dyn.prepare(mu);
    const ConstSpan dy = y.dy(k);
    parallel_chunks(N, cfg.threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> h(l);
      for (std::size_t i = begin; i < end; ++i) {
        dyn.observe(ctx, xs(i), mu, zs(i), h);
        const double hdy = dot(h, dy);
        if (n_probe > 0) {
          const double lambda = std::exp(logw[i]);
          for (std::size_t p = 0; p < n_probe; ++p) {
            const auto& psi = cfg.zakai_probes[p];
            const double lpsi = dyn.generator(ctx, psi, xs(i), mu, zs(i));
            accum[p][i] += lambda * (lpsi * dt + psi.eval(xs(i), mu) * hdy);
          }
        }
        logw[i] += hdy - 0.5 * dot(h, h) * dt;
      }
    });
    dyn.advance(state, mu, dt, keys, static_cast<std::uint32_t>(k), cfg.threads);
    record(k + 1);

    if (n_probe > 0 && ((k + 1) % cfg.zakai_stride == 0 || k + 1 == steps)) {
      const auto& next = flow.at(k + 1);
      out.zakai.steps.push_back(k + 1);
      for (std::size_t p = 0; p < n_probe; ++p) {
        std::vector<double> r(N);
        for (std::size_t i = 0; i < N; ++i)
          r[i] = std::exp(logw[i]) * cfg.zakai_probes[p].eval(xs(i), next) - psi0[p] - accum[p][i];
        out.zakai.residual[p].push_back(std::move(r));
      }
    }

    if (cfg.resample == ResamplePolicy::EssThreshold && k + 1 < steps &&
        out.ess.back() < cfg.ess_threshold * static_cast<double>(N)) {
      const auto idx = resample_systematic(w, RngKey{seed, StreamClass::Resample, 0, static_cast<std::uint32_t>(k), 0});
      SlowFastState next = state;
      for (std::size_t j = 0; j < N; ++j) {
        std::copy_n(state.x.begin() + static_cast<std::ptrdiff_t>(idx[j] * n), n,
                    next.x.begin() + static_cast<std::ptrdiff_t>(j * n));
        if (m > 0)
          std::copy_n(state.z.begin() + static_cast<std::ptrdiff_t>(idx[j] * m), m,
                      next.z.begin() + static_cast<std::ptrdiff_t>(j * m));
      }
      state = std::move(next);
      std::fill(logw.begin(), logw.end(), out.log_rho_one.back());
      out.resample_steps.push_back(k + 1);
    }
  }
  out.final_log_weights = logw;
  return out;
}

}  // namespace

FilterOutput run_filter_multiscale(const ModelSpec& model, double eps, const LawFlow& law_flow, const YPath& y,
                                   const FilterConfig& cfg, std::uint64_t seed) {
  model.check_well_formed();
  if (!(eps > 0.0)) throw ConfigError("filter: eps must be positive");
  return run_filter(MultiscaleDynamics(model, eps, cfg.substep_factor), law_flow, y, cfg, seed);
}

FilterOutput run_filter_averaged(const AveragedModel& avg, const LawFlow& law_flow, const YPath& y,
                                 const FilterConfig& cfg, std::uint64_t seed) {
  return run_filter(AveragedDynamics(avg), law_flow, y, cfg, seed);
}

// ---------------------------------------------------------------------------
// Kalman-Bucy oracle

double kalman_bucy_stationary_variance(const LinearParams& p) {
  const double alpha = -p.a;
  if (p.gamma1 == 0.0) {
    if (!(alpha < 0.0)) throw std::invalid_argument("no stationary variance for a non-contracting prior");
    return p.sigma_x * p.sigma_x / (-2.0 * alpha);
  }
  const double g2 = p.gamma1 * p.gamma1;
  return (alpha + std::sqrt(alpha * alpha + g2 * p.sigma_x * p.sigma_x)) / g2;
}

KalmanBucyPath kalman_bucy_oracle(const ModelSpec& model, const YPath& y, OracleMode mode,
                                  const std::vector<double>* law_mean) {
  if (!model.linear) throw ConfigError("Kalman-Bucy oracle needs the built-in linear model, got '" + model.name + "'");
  const LinearParams& p = *model.linear;
  if (y.noise_free) throw ConfigError("Kalman-Bucy oracle: noise-free observations are singular");
  if (y.l != 1) throw ConfigError("Kalman-Bucy oracle: scalar observations only");
  if (mode == OracleMode::MultiscaleLimit && p.gamma3 != 0.0)
    throw ConfigError("Kalman-Bucy oracle: gamma3 != 0 puts fast-scale signal in Y; use the averaged mode");
  if (y.grid.size() < 2) throw std::invalid_argument("Kalman-Bucy oracle: empty observation path");
  if (law_mean && law_mean->size() != y.grid.size())
    throw std::invalid_argument("Kalman-Bucy oracle: law mean path does not match the grid");

  const double alpha = -p.a;
  const double drift_gain = p.c + p.g * p.kappa / p.beta;
  const double obs_gain = p.gamma2 + p.gamma3 * p.kappa / p.beta;
  const double rate = alpha + drift_gain;
  auto mbar = [&](std::size_t k) { return law_mean ? (*law_mean)[k] : p.x0 * std::exp(rate * (y.grid[k] - y.grid[0])); };

  KalmanBucyPath out;
  out.grid = y.grid;
  out.mean.resize(y.grid.size());
  out.variance.resize(y.grid.size());
  double mean = p.x0, var = 0.0;
  out.mean[0] = mean;
  out.variance[0] = var;
  for (std::size_t k = 0; k + 1 < y.grid.size(); ++k) {
    const double dt = y.grid[k + 1] - y.grid[k];
    const double m = mbar(k);
    const double innovation = y.increments[k] - (p.gamma1 * mean + obs_gain * m) * dt;
    const double next_mean = mean + (alpha * mean + drift_gain * m) * dt + var * p.gamma1 * innovation;
    const double next_var = var + (2.0 * alpha * var + p.sigma_x * p.sigma_x - p.gamma1 * p.gamma1 * var * var) * dt;
    mean = next_mean;
    var = next_var;
    out.mean[k + 1] = mean;
    out.variance[k + 1] = var;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zakai residual

ZakaiReport zakai_residual(const FilterOutput& out, std::size_t probe, std::uint64_t seed, int n_bootstrap) {
  if (probe >= out.zakai.residual.size()) throw std::invalid_argument("zakai_residual: probe index out of range");
  if (n_bootstrap < 2) throw std::invalid_argument("zakai_residual: need at least two bootstrap draws");
  const auto& records = out.zakai.residual[probe];
  ZakaiReport rep;
  rep.name = out.zakai.names[probe];
  if (records.empty()) return rep;
  const std::size_t N = records.front().size();

  // One index set per bootstrap draw, shared by every recorded time.
  std::vector<std::vector<std::uint32_t>> draws(static_cast<std::size_t>(n_bootstrap), std::vector<std::uint32_t>(N));
  for (std::size_t b = 0; b < draws.size(); ++b) {
    const RngKey key{seed, StreamClass::Resample, static_cast<std::uint32_t>(b), 0, 1};
    for (std::size_t j = 0; j < N; ++j)
      draws[b][j] = static_cast<std::uint32_t>(uniform01(key, static_cast<std::uint32_t>(j)) * static_cast<double>(N));
  }

  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& res = records[r];
    double mean = 0.0;
    for (double v : res) mean += v;
    mean /= static_cast<double>(N);
    double bm = 0.0, bm2 = 0.0;
    for (const auto& idx : draws) {
      double acc = 0.0;
      for (std::uint32_t j : idx) acc += res[j];
      acc /= static_cast<double>(N);
      bm += acc;
      bm2 += acc * acc;
    }
    const double B = static_cast<double>(draws.size());
    bm /= B;
    const double se = std::sqrt(std::max(0.0, (bm2 - B * bm * bm) / (B - 1.0)));
    double ratio = 0.0;
    if (se > 0.0)
      ratio = std::abs(mean) / se;
    else if (mean != 0.0)
      ratio = std::numeric_limits<double>::infinity();
    rep.times.push_back(out.grid[out.zakai.steps[r]]);
    rep.residual.push_back(mean);
    rep.standard_error.push_back(se);
    rep.ratio.push_back(ratio);
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CSV

void write_filter_csv(std::ostream& os, const FilterOutput& out) {
  os << "time,ess,rho_one,log_rho_one";
  for (const auto& name : out.names) os << ",est_" << name << ",se_" << name;
  os << '\n';
  for (std::size_t k = 0; k < out.grid.size(); ++k) {
    os << format_real(out.grid[k]) << ',' << format_real(out.ess[k]) << ',' << format_real(out.rho_one[k]) << ','
       << format_real(out.log_rho_one[k]);
    for (std::size_t f = 0; f < out.names.size(); ++f)
      os << ',' << format_real(out.estimates[k][f]) << ',' << format_real(out.standard_errors[k][f]);
    os << '\n';
  }
}

void write_ypath_csv(std::ostream& os, const YPath& y) {
  os << "step,t_start,t_end";
  for (std::size_t r = 0; r < y.l; ++r) os << ",dy_" << r;
  os << '\n';
  for (std::size_t k = 0; k < y.steps(); ++k) {
    os << k << ',' << format_real(y.grid[k]) << ',' << format_real(y.grid[k + 1]);
    for (double v : y.dy(k)) os << ',' << format_real(v);
    os << '\n';
  }
}

}  // namespace msmv
