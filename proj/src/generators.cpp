#include "msmv/generators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msmv/errors.hpp"
#include "msmv/random.hpp"

namespace msmv {

namespace test_functions {

namespace {

void zero(OutSpan out) {
  for (double& v : out) v = 0.0;
}

}  // namespace

TestFunction one() {
  TestFunction f;
  f.name = "one";
  f.eval = [](ConstSpan, const ParticleCloud&) { return 1.0; };
  f.dx = [](ConstSpan, const ParticleCloud&, OutSpan out) { zero(out); };
  f.dxx = [](ConstSpan, const ParticleCloud&, OutSpan out) { zero(out); };
  f.bounded = true;
  return f;
}

TestFunction coordinate(std::size_t index) {
  TestFunction f;
  f.name = "x";
  f.eval = [index](ConstSpan x, const ParticleCloud&) { return x[index]; };
  f.dx = [index](ConstSpan, const ParticleCloud&, OutSpan out) {
    zero(out);
    out[index] = 1.0;
  };
  f.dxx = [](ConstSpan, const ParticleCloud&, OutSpan out) { zero(out); };
  return f;
}

TestFunction tanh_coordinate(std::size_t index) {
  TestFunction f;
  f.name = "tanh";
  f.eval = [index](ConstSpan x, const ParticleCloud&) { return std::tanh(x[index]); };
  f.dx = [index](ConstSpan x, const ParticleCloud&, OutSpan out) {
    zero(out);
    const double t = std::tanh(x[index]);
    out[index] = 1.0 - t * t;
  };
  f.dxx = [index](ConstSpan x, const ParticleCloud&, OutSpan out) {
    zero(out);
    const double t = std::tanh(x[index]);
    const std::size_t n = x.size();
    out[index * n + index] = -2.0 * t * (1.0 - t * t);
  };
  f.bounded = true;
  return f;
}

TestFunction squared_norm() {
  TestFunction f;
  f.name = "x_squared";
  f.eval = [](ConstSpan x, const ParticleCloud&) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
  };
  f.dx = [](ConstSpan x, const ParticleCloud&, OutSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i];
  };
  f.dxx = [](ConstSpan x, const ParticleCloud&, OutSpan out) {
    zero(out);
    for (std::size_t i = 0; i < x.size(); ++i) out[i * x.size() + i] = 2.0;
  };
  return f;
}

TestFunction measure_mean(std::size_t index) {
  TestFunction f;
  f.name = "mu_mean";
  f.eval = [index](ConstSpan, const ParticleCloud& mu) { return mu.mean()[index]; };
  f.dx = [](ConstSpan, const ParticleCloud&, OutSpan out) { zero(out); };
  f.dxx = [](ConstSpan, const ParticleCloud&, OutSpan out) { zero(out); };
  f.dmu = [index](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) {
    zero(out);
    out[index] = 1.0;
  };
  f.dy_dmu = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { zero(out); };
  f.measure_dependent = true;
  return f;
}

TestFunction by_name(const std::string& name) {
  if (name == "one") return one();
  if (name == "x") return coordinate(0);
  if (name == "tanh") return tanh_coordinate(0);
  if (name == "x_squared") return squared_norm();
  if (name == "mu_mean") return measure_mean(0);
  throw ConfigError("unknown test function '" + name + "' (expected one, x, tanh, x_squared, mu_mean)");
}

TestFunction linear_combination(double a, const TestFunction& f, double b, const TestFunction& g) {
  TestFunction h;
  h.name = "lincomb";
  h.eval = [=](ConstSpan x, const ParticleCloud& mu) { return a * f.eval(x, mu) + b * g.eval(x, mu); };
  using XFn = std::function<void(ConstSpan, const ParticleCloud&, OutSpan)>;
  using YFn = std::function<void(ConstSpan, const ParticleCloud&, ConstSpan, OutSpan)>;
  auto combine_x = [a, b](XFn first, XFn second) -> XFn {
    return [=](ConstSpan x, const ParticleCloud& mu, OutSpan out) {
      std::vector<double> tmp(out.size());
      first(x, mu, out);
      second(x, mu, tmp);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b * tmp[i];
    };
  };
  auto combine_y = [a, b](YFn first, YFn second) -> YFn {
    return [=](ConstSpan x, const ParticleCloud& mu, ConstSpan y, OutSpan out) {
      std::vector<double> tmp(out.size());
      first(x, mu, y, out);
      second(x, mu, y, tmp);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b * tmp[i];
    };
  };
  h.dx = combine_x(f.dx, g.dx);
  h.dxx = combine_x(f.dxx, g.dxx);
  h.measure_dependent = f.measure_dependent || g.measure_dependent;
  if (h.measure_dependent) {
    const YFn none = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { zero(out); };
    h.dmu = combine_y(f.measure_dependent ? f.dmu : none, g.measure_dependent ? g.dmu : none);
    h.dy_dmu = combine_y(f.measure_dependent ? f.dy_dmu : none, g.measure_dependent ? g.dy_dmu : none);
  }
  h.bounded = f.bounded && g.bounded;
  return h;
}

}  // namespace test_functions

// ---------------------------------------------------------------------------

double apply_L0(const FastTestFunction& phi, const ModelSpec& model, const ParticleCloud& mu, ConstSpan z) {
  const std::size_t m = model.m;
  std::vector<double> grad(m), hess(m * m), b2(m), s2(m * m);
  phi.dz(z, grad);
  phi.dzz(z, hess);
  model.b2(mu, z, b2);
  model.sigma2(mu, z, s2);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) acc += grad[i] * b2[i];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      double a = 0.0;
      for (std::size_t j = 0; j < m; ++j) a += s2[i * m + j] * s2[k * m + j];
      acc += 0.5 * hess[i * m + k] * a;
    }
  return acc;
}

namespace {

// d_i F b^i + 1/2 d_ij F a^ij for a = s s^T.
double drift_diffusion_terms(ConstSpan grad, ConstSpan hess, ConstSpan b, ConstSpan s, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += grad[i] * b[i];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (hess[i * n + j] == 0.0) continue;
      double a = 0.0;
      for (std::size_t k = 0; k < n; ++k) a += s[i * n + k] * s[j * n + k];
      acc += 0.5 * hess[i * n + j] * a;
    }
  return acc;
}

template <class CoefficientsAt>
double generator(const TestFunction& f, std::size_t n, ConstSpan x, const ParticleCloud& mu, CoefficientsAt&& coeffs) {
  std::vector<double> grad(n), hess(n * n), b(n), s(n * n);
  f.dx(x, mu, grad);
  f.dxx(x, mu, hess);
  coeffs(x, b, s);
  double acc = drift_diffusion_terms(grad, hess, b, s, n);
  if (f.measure_dependent) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const auto y = mu.sample(i);
      f.dmu(x, mu, y, grad);
      f.dy_dmu(x, mu, y, hess);
      coeffs(y, b, s);
      acc += mu.weight(i) * drift_diffusion_terms(grad, hess, b, s, n);
    }
  }
  return acc;
}

}  // namespace

double apply_L(const TestFunction& f, const ModelSpec& model, ConstSpan x, const ParticleCloud& mu, ConstSpan z) {
  return generator(f, model.n, x, mu, [&](ConstSpan at, OutSpan b, OutSpan s) {
    model.b1(at, mu, z, b);
    model.sigma1(at, mu, z, s);
  });
}

double apply_Lbar(const TestFunction& f, const AveragedModel& avg, const AveragedModel::Entry& entry, ConstSpan x,
                  const ParticleCloud& mu) {
  return generator(f, avg.n(), x, mu, [&](ConstSpan at, OutSpan b, OutSpan s) {
    avg.drift(entry, at, mu, b);
    avg.diffusion(entry, at, mu, s);
  });
}

double apply_Lbar(const TestFunction& f, const AveragedModel& avg, ConstSpan x, const ParticleCloud& mu) {
  return apply_Lbar(f, avg, *avg.entry(mu), x, mu);
}

CorrectorEstimate estimate_corrector(const TestFunction& f, const ModelSpec& model, ConstSpan x,
                                     const ParticleCloud& mu, ConstSpan z, const CorrectorConfig& cfg,
                                     std::uint64_t seed) {
  model.check_well_formed();
  double horizon = 0.0;
  if (cfg.horizon) {
    horizon = *cfg.horizon;
  } else {
    if (!model.constants.beta_prime || !(*model.constants.beta_prime > 0.0))
      throw std::invalid_argument("estimate_corrector: no horizon given and beta_prime not declared");
    horizon = 10.0 / *model.constants.beta_prime;
  }
  if (!(horizon > 0.0)) throw std::invalid_argument("estimate_corrector: horizon must be positive");
  if (cfg.chains < 1) throw std::invalid_argument("estimate_corrector: need at least one chain");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("estimate_corrector: dt must be positive");

  // Phi_bar from the invariant sample.
  const auto nu = sample_invariant(model, mu, cfg.frozen, derive_seed(seed, 0x70686962));
  double phi_bar = 0.0;
  for (std::size_t i = 0; i < nu.cloud.size(); ++i) phi_bar += nu.cloud.weight(i) * apply_L(f, model, x, mu, nu.cloud.sample(i));

  const std::size_t m = model.m;
  const auto steps = static_cast<std::size_t>(std::max<long long>(1, std::llround(horizon / cfg.dt)));
  const double dt = horizon / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  const auto chains = static_cast<std::size_t>(cfg.chains);

  // Per-chain trapezoidal integrals and the chain-averaged integrand.
  std::vector<double> integral(chains, 0.0), curve(steps + 1, 0.0);
  std::vector<double> state(m), b2(m), s2(m * m), noise(m);
  for (std::size_t c = 0; c < chains; ++c) {
    const bool mirrored = cfg.antithetic && (c % 2 == 1);
    const auto stream_id = static_cast<std::uint32_t>(cfg.antithetic ? c / 2 : c);
    std::copy(z.begin(), z.end(), state.begin());
    for (std::size_t s = 0; s <= steps; ++s) {
      const double g = apply_L(f, model, x, mu, state) - phi_bar;
      curve[s] += g / static_cast<double>(chains);
      integral[c] += (s == 0 || s == steps ? 0.5 : 1.0) * g * dt;
      if (s == steps) break;
      model.b2(mu, state, b2);
      model.sigma2(mu, state, s2);
      fill_gaussian(RngKey{seed, StreamClass::W, stream_id, static_cast<std::uint32_t>(s), 0}, 1.0, noise);
      if (mirrored)
        for (double& v : noise) v = -v;
      for (std::size_t r = 0; r < m; ++r) {
        double acc = b2[r] * dt;
        for (std::size_t k = 0; k < m; ++k) acc += s2[r * m + k] * noise[k] * sqrt_dt;
        state[r] += acc;
      }
      for (double v : state)
        if (!std::isfinite(v)) throw BlowUpError("corrector chain blew up", s);
    }
  }

  CorrectorEstimate est;
  est.phi_bar = phi_bar;
  est.horizon = horizon;
  std::vector<double> units;
  if (cfg.antithetic) {
    for (std::size_t c = 0; c < chains; c += 2)
      units.push_back(c + 1 < chains ? 0.5 * (integral[c] + integral[c + 1]) : integral[c]);
  } else {
    units = integral;
  }
  double mean = 0.0;
  for (double v : units) mean += v;
  mean /= static_cast<double>(units.size());
  est.value = 0.0;
  for (double v : integral) est.value += v;
  est.value /= static_cast<double>(chains);
  if (units.size() > 1) {
    double ss = 0.0;
    for (double v : units) ss += (v - mean) * (v - mean);
    const double k = static_cast<double>(units.size());
    est.standard_error = std::sqrt(ss / (k - 1.0) / k);
  }

  // Exponential fit of |curve| over the first half of the horizon.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s <= steps / 2; ++s) {
    const double a = std::abs(curve[s]);
    if (!(a > 1e-300)) continue;
    const double t = static_cast<double>(s) * dt, y = std::log(a);
    sx += t;
    sy += y;
    sxx += t * t;
    sxy += t * y;
    ++count;
  }
  if (count >= 3) {
    const double cn = static_cast<double>(count);
    const double denom = cn * sxx - sx * sx;
    if (denom > 0.0) {
      const double slope = (cn * sxy - sx * sy) / denom;
      const double intercept = (sy - slope * sx) / cn;
      if (slope < 0.0) {
        const double eta = -slope;
        est.fitted_rate = eta;
        est.tail_bound = std::exp(intercept) * std::exp(-eta * horizon) / eta;
      }
    }
  }
  return est;
}

}  // namespace msmv
