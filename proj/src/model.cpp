#include "msmv/model.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "msmv/errors.hpp"
#include "msmv/random.hpp"

namespace msmv {

void LinearParams::validate() const {
  const double all[] = {a, c, g, sigma_x, beta, kappa, sigma_z, gamma1, gamma2, gamma3, x0, z0};
  for (double v : all)
    if (!std::isfinite(v)) throw ConfigError("linear model: all parameters must be finite");
  if (!(beta > 0.0)) throw ConfigError("linear model: beta must be > 0 (dissipativity)");
  if (!(sigma_x > 0.0)) throw ConfigError("linear model: sigma_x must be > 0 (ellipticity)");
  if (!(sigma_z > 0.0)) throw ConfigError("linear model: sigma_z must be > 0");
}

void SineParams::validate() const {
  const double all[] = {beta, a1, a2, x0, z0};
  for (double v : all)
    if (!std::isfinite(v)) throw ConfigError("sine model: all parameters must be finite");
  if (!(beta > 0.0)) throw ConfigError("sine model: beta must be > 0 (dissipativity)");
}

void ModelSpec::check_well_formed() const {
  if (n == 0 || m == 0 || l == 0) throw ConfigError("model " + name + ": dimensions must be >= 1");
  if (!b1 || !sigma1 || !b2 || !sigma2 || !h) throw ConfigError("model " + name + ": every evaluator must be set");
  if (x0.size() != n) throw ConfigError("model " + name + ": x0 has wrong dimension");
  if (z0.size() != m) throw ConfigError("model " + name + ": z0 has wrong dimension");
}

ModelSpec builtin_linear(const LinearParams& p) {
  p.validate();
  ModelSpec s;
  s.name = "linear";
  s.n = s.m = s.l = 1;
  s.linear = p;
  s.x0 = {p.x0};
  s.z0 = {p.z0};

  AdditiveSplit b1_split;
  b1_split.slow = [p](ConstSpan x, const ParticleCloud& mu, OutSpan out) { out[0] = -p.a * x[0] + p.c * mu.mean()[0]; };
  b1_split.fast = [p](ConstSpan z, OutSpan out) { out[0] = p.g * z[0]; };
  s.b1 = [p](ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan out) {
    out[0] = -p.a * x[0] + p.c * mu.mean()[0] + p.g * z[0];
  };
  s.b1_split = b1_split;
  s.sigma1 = [p](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = p.sigma_x; };
  s.sigma1_depends_on_z = false;
  s.b2 = [p](const ParticleCloud& mu, ConstSpan z, OutSpan out) { out[0] = -p.beta * z[0] + p.kappa * mu.mean()[0]; };
  s.sigma2 = [p](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = p.sigma_z; };

  AdditiveSplit h_split;
  h_split.slow = [p](ConstSpan x, const ParticleCloud& mu, OutSpan out) {
    out[0] = p.gamma1 * x[0] + p.gamma2 * mu.mean()[0];
  };
  h_split.fast = [p](ConstSpan z, OutSpan out) { out[0] = p.gamma3 * z[0]; };
  s.h = [p](ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan out) {
    out[0] = p.gamma1 * x[0] + p.gamma2 * mu.mean()[0] + p.gamma3 * z[0];
  };
  s.h_split = h_split;

  // |db1|^2 <= 3 max(a^2, c^2, g^2)(|dx|^2 + W2^2 + |dz|^2); likewise for b2.
  s.constants.lipschitz_b1_sigma1 = 3.0 * std::max({p.a * p.a, p.c * p.c, p.g * p.g});
  s.constants.ellipticity = p.sigma_x;
  s.constants.lipschitz_b2_sigma2 = 2.0 * std::max(p.beta * p.beta, p.kappa * p.kappa);
  s.constants.beta_prime = p.beta;
  s.constants.p = 12.0;
  return s;
}

namespace {

struct SinAbsTable {
  std::vector<double> u;  // sorted samples
  std::vector<double> cos_prefix, sin_prefix;
};

SinAbsTable build_sin_abs_table(const ParticleCloud& mu) {
  const std::size_t n = mu.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu.sample(a)[0] < mu.sample(b)[0]; });
  SinAbsTable t;
  t.u.reserve(n);
  t.cos_prefix.assign(n + 1, 0.0);
  t.sin_prefix.assign(n + 1, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = mu.sample(order[j])[0], w = mu.weight(order[j]);
    t.u.push_back(u);
    t.cos_prefix[j + 1] = t.cos_prefix[j] + w * std::cos(u);
    t.sin_prefix[j + 1] = t.sin_prefix[j] + w * std::sin(u);
  }
  return t;
}

}  // namespace

ModelSpec builtin_sine(const SineParams& p) {
  p.validate();
  ModelSpec s;
  s.name = "sine";
  s.n = s.m = s.l = 1;
  s.x0 = {p.x0};
  s.z0 = {p.z0};

  // Integral of b1~(x + u, z) = -(x + u) + a1 sin z over mu.
  AdditiveSplit b1_split;
  b1_split.slow = [](ConstSpan x, const ParticleCloud& mu, OutSpan out) { out[0] = -(x[0] + mu.mean()[0]); };
  b1_split.fast = [p](ConstSpan z, OutSpan out) { out[0] = p.a1 * std::sin(z[0]); };
  s.b1 = [p](ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan out) {
    out[0] = -(x[0] + mu.mean()[0]) + p.a1 * std::sin(z[0]);
  };
  s.b1_split = b1_split;
  s.sigma1 = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 1.0; };
  s.sigma1_depends_on_z = false;
  s.b2 = [p](const ParticleCloud& mu, ConstSpan z, OutSpan out) {
    const double sin_mean = mu.memo("sine.sin_u", [](ConstSpan u) { return std::sin(u[0]); });
    out[0] = -p.beta * z[0] + p.a2 * sin_mean;
  };
  s.sigma2 = [](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 1.0; };

  // int sin|x + u| mu(du) = sum_i sign(x + u_i) w_i (sin x cos u_i + cos x sin u_i):
  // with the samples sorted and prefix sums of w cos u, w sin u, one
  // evaluation is a binary search.
  auto measure_part = [](ConstSpan x, const ParticleCloud& mu) {
    const auto table = mu.cached<SinAbsTable>("sine.sin_abs", build_sin_abs_table);
    const auto k = static_cast<std::size_t>(std::lower_bound(table->u.begin(), table->u.end(), -x[0]) - table->u.begin());
    const double c = table->cos_prefix.back() - 2.0 * table->cos_prefix[k];
    const double s = table->sin_prefix.back() - 2.0 * table->sin_prefix[k];
    return std::sin(x[0]) * c + std::cos(x[0]) * s;
  };
  AdditiveSplit h_split;
  h_split.slow = [measure_part](ConstSpan x, const ParticleCloud& mu, OutSpan out) { out[0] = measure_part(x, mu); };
  h_split.fast = [](ConstSpan z, OutSpan out) { out[0] = std::sin(std::abs(z[0])); };
  s.h = [measure_part](ConstSpan x, const ParticleCloud& mu, ConstSpan z, OutSpan out) {
    out[0] = measure_part(x, mu) + std::sin(std::abs(z[0]));
  };
  s.h_split = h_split;

  s.constants.lipschitz_b1_sigma1 = 3.0 * std::max(1.0, p.a1 * p.a1);
  s.constants.ellipticity = 1.0;
  s.constants.lipschitz_b2_sigma2 = 2.0 * std::max(p.beta * p.beta, p.a2 * p.a2);
  s.constants.beta_prime = p.beta;
  s.constants.p = 12.0;
  s.constants.h_bound = 2.0;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

const char* status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "PASS";
    case CheckStatus::Fail: return "FAIL";
    case CheckStatus::NotDeclared: return "NOT_DECLARED";
  }
  return "?";
}

class NonFinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string describe(const char* evaluator, ConstSpan x, ConstSpan z) {
  std::ostringstream os;
  os.precision(17);
  os << evaluator << " returned a non-finite value at x=(";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  os << ") z=(";
  for (std::size_t i = 0; i < z.size(); ++i) os << (i ? "," : "") << z[i];
  os << ")";
  return os.str();
}

void require_finite(ConstSpan values, const char* evaluator, ConstSpan x, ConstSpan z) {
  for (double v : values)
    if (!std::isfinite(v)) throw NonFinite(describe(evaluator, x, z));
}

double sq_norm(ConstSpan a, ConstSpan b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

AssumptionCheck upper_check(std::string name, double observed, std::optional<double> declared, double slack,
                            std::string detail) {
  AssumptionCheck c{std::move(name), observed, declared, CheckStatus::NotDeclared, std::move(detail)};
  if (declared) c.status = observed <= *declared * (1.0 + slack) + slack ? CheckStatus::Pass : CheckStatus::Fail;
  return c;
}

AssumptionCheck lower_check(std::string name, double observed, std::optional<double> declared, double slack,
                            std::string detail) {
  AssumptionCheck c{std::move(name), observed, declared, CheckStatus::NotDeclared, std::move(detail)};
  if (declared) c.status = observed >= *declared * (1.0 - slack) - slack ? CheckStatus::Pass : CheckStatus::Fail;
  return c;
}

}  // namespace

bool ValidationReport::ok() const {
  return std::none_of(checks.begin(), checks.end(), [](const auto& c) { return c.status == CheckStatus::Fail; });
}

const AssumptionCheck& ValidationReport::check(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw std::out_of_range("no validation check named " + name);
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["seed"] = seed;
  j["ok"] = ok();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json e;
    e["name"] = c.name;
    e["observed"] = std::isfinite(c.observed) ? nlohmann::json(c.observed) : nlohmann::json(nullptr);
    e["declared"] = c.declared ? nlohmann::json(*c.declared) : nlohmann::json(nullptr);
    e["status"] = status_name(c.status);
    e["detail"] = c.detail;
    j["checks"].push_back(e);
  }
  j["warnings"] = warnings;
  return j;
}

ValidationReport validate_model(const ModelSpec& spec, const ValidationConfig& cfg, std::uint64_t seed) {
  spec.check_well_formed();
  if (cfg.n_pairs < 1 || cfg.cloud_size < 2 || !(cfg.state_scale > 0.0))
    throw ConfigError("validation: n_pairs >= 1, cloud_size >= 2 and state_scale > 0 required");

  const std::size_t n = spec.n, m = spec.m, l = spec.l;
  const auto cloud_n = static_cast<std::size_t>(cfg.cloud_size);
  ValidationReport report;
  report.model = spec.name;
  report.seed = seed;

  auto draw = [&](std::uint32_t pair, std::uint32_t slot, std::size_t dim, double scale) {
    std::vector<double> v(dim);
    fill_gaussian(RngKey{seed, StreamClass::Init, pair, slot, 0}, scale * scale, v);
    return v;
  };

  double lip1 = 0.0, lip2 = 0.0, margin = std::numeric_limits<double>::infinity();
  double ellipticity = std::numeric_limits<double>::infinity(), h_max = 0.0;
  std::vector<double> b1a(n), b1b(n), s1a(n * n), s1b(n * n), b2a(m), b2b(m), s2a(m * m), s2b(m * m), ha(l);

  try {
    for (int j = 0; j < cfg.n_pairs; ++j) {
      const auto pj = static_cast<std::uint32_t>(j);
      const auto x1 = draw(pj, 0, n, cfg.state_scale), x2 = draw(pj, 1, n, cfg.state_scale);
      const auto z1 = draw(pj, 2, m, cfg.state_scale), z2 = draw(pj, 3, m, cfg.state_scale);
      // mu2 is mu1 translated by v, so W2(mu1, mu2) = |v| exactly.
      auto base = draw(pj, 4, cloud_n * n, 1.0);
      const auto centre = draw(pj, 5, n, cfg.state_scale);
      const auto shift = draw(pj, 6, n, 0.5);
      auto shifted = base;
      for (std::size_t i = 0; i < cloud_n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          base[i * n + k] += centre[k];
          shifted[i * n + k] = base[i * n + k] + shift[k];
        }
      const auto mu1 = ParticleCloud::uniform(base, n);
      const auto mu2 = ParticleCloud::uniform(shifted, n);
      double w2sq = 0.0;
      for (double v : shift) w2sq += v * v;

      spec.b1(x1, mu1, z1, b1a);
      require_finite(b1a, "b1", x1, z1);
      spec.b1(x2, mu2, z2, b1b);
      require_finite(b1b, "b1", x2, z2);
      spec.sigma1(x1, mu1, z1, s1a);
      require_finite(s1a, "sigma1", x1, z1);
      spec.sigma1(x2, mu2, z2, s1b);
      require_finite(s1b, "sigma1", x2, z2);
      const double denom1 = sq_norm(x1, x2) + w2sq + sq_norm(z1, z2);
      if (denom1 > 1e-300) lip1 = std::max(lip1, (sq_norm(b1a, b1b) + sq_norm(s1a, s1b)) / denom1);

      Eigen::MatrixXd sym(n, n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) sym(r, c) = 0.5 * (s1a[r * n + c] + s1a[c * n + r]);
      ellipticity = std::min(ellipticity, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff());

      spec.b2(mu1, z1, b2a);
      require_finite(b2a, "b2", x1, z1);
      spec.b2(mu2, z2, b2b);
      require_finite(b2b, "b2", x2, z2);
      spec.sigma2(mu1, z1, s2a);
      require_finite(s2a, "sigma2", x1, z1);
      spec.sigma2(mu2, z2, s2b);
      require_finite(s2b, "sigma2", x2, z2);
      const double denom2 = w2sq + sq_norm(z1, z2);
      if (denom2 > 1e-300) lip2 = std::max(lip2, (sq_norm(b2a, b2b) + sq_norm(s2a, s2b)) / denom2);

      // Dissipativity at a common measure.
      spec.b2(mu1, z2, b2b);
      require_finite(b2b, "b2", x1, z2);
      spec.sigma2(mu1, z2, s2b);
      require_finite(s2b, "sigma2", x1, z2);
      const double dz2 = sq_norm(z1, z2);
      if (dz2 > 1e-300) {
        double inner = 0.0;
        for (std::size_t k = 0; k < m; ++k) inner += (z1[k] - z2[k]) * (b2a[k] - b2b[k]);
        const double value = -(2.0 * inner + (2.0 * spec.constants.p - 1.0) * sq_norm(s2a, s2b)) / dz2;
        margin = std::min(margin, value);
      }

      spec.h(x1, mu1, z1, ha);
      require_finite(ha, "h", x1, z1);
      h_max = std::max(h_max, std::sqrt(sq_norm(ha, std::vector<double>(l, 0.0))));
    }
  } catch (const NonFinite& e) {
    report.checks.push_back({"finite", 0.0, std::nullopt, CheckStatus::Fail, e.what()});
    return report;
  }

  const double slack = cfg.relative_slack;
  report.checks.push_back(upper_check("H1_b1_sigma1", lip1, spec.constants.lipschitz_b1_sigma1, slack,
                                      "max (|db1|^2+|dsigma1|^2)/(|dx|^2+W2^2+|dz|^2)"));
  report.checks.push_back(lower_check("H2_sigma1", ellipticity, spec.constants.ellipticity, slack,
                                      "min eigenvalue of sym(sigma1)"));
  report.checks.push_back(upper_check("H1_b2_sigma2", lip2, spec.constants.lipschitz_b2_sigma2, slack,
                                      "max (|db2|^2+|dsigma2|^2)/(W2^2+|dz|^2)"));
  report.checks.push_back(lower_check("H2prime_b2_sigma2", margin, spec.constants.beta_prime, slack,
                                      "min -[2<dz,db2>+(2p-1)|dsigma2|^2]/|dz|^2"));
  report.checks.push_back(upper_check("H_h", h_max, spec.constants.h_bound, slack, "max |h| over samples"));

  // The invariant-measure cache keys on (mean, second moment); flag fast
  // coefficients that see more of mu than that.
  {
    const double a = 1.0, b = std::sqrt(2.0);
    bool richer = false;
    for (int j = 0; j < 8 && !richer; ++j) {
      const auto shift = draw(static_cast<std::uint32_t>(cfg.n_pairs + j), 7, n, cfg.state_scale);
      const auto z = draw(static_cast<std::uint32_t>(cfg.n_pairs + j), 8, m, cfg.state_scale);
      std::vector<double> two, three;
      for (double s : {-a, a})
        for (std::size_t k = 0; k < n; ++k) two.push_back(shift[k] + (k == 0 ? s : 0.0));
      for (double s : {-b, 0.0, b})
        for (std::size_t k = 0; k < n; ++k) three.push_back(shift[k] + (k == 0 ? s : 0.0));
      const ParticleCloud mu_two(two, n, {0.5, 0.5});
      const ParticleCloud mu_three(three, n, {0.25, 0.5, 0.25});
      spec.b2(mu_two, z, b2a);
      spec.b2(mu_three, z, b2b);
      spec.sigma2(mu_two, z, s2a);
      spec.sigma2(mu_three, z, s2b);
      richer = sq_norm(b2a, b2b) + sq_norm(s2a, s2b) > 1e-20;
    }
    if (richer)
      report.warnings.push_back(
          "b2/sigma2 depend on the measure beyond its mean and second moment; the invariant-measure cache "
          "keys only on those two moments");
  }
  return report;
}

}  // namespace msmv
