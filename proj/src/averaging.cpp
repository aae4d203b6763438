#include "msmv/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msmv/errors.hpp"
#include "msmv/random.hpp"

namespace msmv {

void FrozenConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("frozen config: dt must be positive");
  if (!(burn_in >= 0.0)) throw std::invalid_argument("frozen config: burn_in must be >= 0");
  if (!(horizon > burn_in)) throw std::invalid_argument("frozen config: horizon must exceed burn_in");
  if (n_chains < 1) throw std::invalid_argument("frozen config: n_chains must be >= 1");
  if (thinning < 1) throw std::invalid_argument("frozen config: thinning must be >= 1");
  const auto kept = static_cast<long long>(std::llround((horizon - burn_in) / dt)) / thinning;
  if (kept < 1) throw std::invalid_argument("frozen config: no samples survive burn-in and thinning");
}

InvariantSample::Estimate InvariantSample::estimate(const std::function<double(ConstSpan)>& f,
                                                    std::size_t batches_per_chain) const {
  const std::size_t units = antithetic ? (n_chains + 1) / 2 : n_chains;
  const std::size_t batches = std::max<std::size_t>(1, std::min(batches_per_chain, per_chain));
  const std::size_t batch_len = per_chain / batches;
  std::vector<double> values(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) values[i] = f(cloud.sample(i));

  std::vector<double> batch_means;
  double total = 0.0;
  for (double v : values) total += v;
  for (std::size_t u = 0; u < units; ++u) {
    const std::size_t first = antithetic ? 2 * u : u;
    const std::size_t last = antithetic ? std::min(2 * u + 2, n_chains) : u + 1;
    for (std::size_t b = 0; b < batches; ++b) {
      double acc = 0.0;
      std::size_t count = 0;
      for (std::size_t c = first; c < last; ++c)
        for (std::size_t s = b * batch_len; s < (b + 1) * batch_len; ++s, ++count) acc += values[c * per_chain + s];
      if (count > 0) batch_means.push_back(acc / static_cast<double>(count));
    }
  }
  Estimate e;
  e.mean = total / static_cast<double>(values.size());
  if (batch_means.size() > 1) {
    double bm = 0.0;
    for (double v : batch_means) bm += v;
    bm /= static_cast<double>(batch_means.size());
    double ss = 0.0;
    for (double v : batch_means) ss += (v - bm) * (v - bm);
    const double k = static_cast<double>(batch_means.size());
    e.standard_error = std::sqrt(ss / (k - 1.0) / k);
  }
  return e;
}

InvariantSample sample_invariant(const ModelSpec& model, const ParticleCloud& mu, const FrozenConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  const std::size_t m = model.m;
  const auto total_steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));
  const auto burn_steps = static_cast<std::size_t>(std::llround(cfg.burn_in / cfg.dt));
  const auto thin = static_cast<std::size_t>(cfg.thinning);
  const std::size_t per_chain = (total_steps - burn_steps) / thin;
  const auto chains = static_cast<std::size_t>(cfg.n_chains);

  // Noise is drawn in blocks of kBlock steps; block b of a chain uses key (seed, W, chain, b).
  constexpr std::size_t kBlock = 1024;
  std::vector<double> samples(chains * per_chain * m);
  std::vector<double> z(m), drift(m), diff(m * m), noise(kBlock * m);
  for (std::size_t c = 0; c < chains; ++c) {
    const bool mirrored = cfg.antithetic && (c % 2 == 1);
    const auto stream_id = static_cast<std::uint32_t>(cfg.antithetic ? c / 2 : c);
    std::copy(model.z0.begin(), model.z0.end(), z.begin());
    std::size_t kept = 0;
    for (std::size_t s = 0; s < total_steps; ++s) {
      if (s % kBlock == 0) {
        fill_gaussian(RngKey{seed, StreamClass::W, stream_id, static_cast<std::uint32_t>(s / kBlock), 0}, cfg.dt, noise);
        if (mirrored)
          for (double& v : noise) v = -v;
      }
      const double* dw = noise.data() + (s % kBlock) * m;
      model.b2(mu, z, drift);
      model.sigma2(mu, z, diff);
      for (std::size_t r = 0; r < m; ++r) {
        double acc = drift[r] * cfg.dt;
        for (std::size_t k = 0; k < m; ++k) acc += diff[r * m + k] * dw[k];
        z[r] += acc;
      }
      for (double v : z)
        if (!std::isfinite(v)) throw BlowUpError("frozen chain " + std::to_string(c) + " blew up", s);
      const std::size_t after = s + 1;
      if (after > burn_steps && (after - burn_steps) % thin == 0 && kept < per_chain) {
        std::copy(z.begin(), z.end(), samples.begin() + static_cast<std::ptrdiff_t>((c * per_chain + kept) * m));
        ++kept;
      }
    }
  }
  return InvariantSample{ParticleCloud::uniform(std::move(samples), m), chains, per_chain, cfg.antithetic};
}

std::vector<double> averaged_drift(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                   const ParticleCloud& nu_hat) {
  std::vector<double> out(model.n, 0.0), tmp(model.n);
  for (std::size_t i = 0; i < nu_hat.size(); ++i) {
    model.b1(x, mu, nu_hat.sample(i), tmp);
    for (std::size_t k = 0; k < model.n; ++k) out[k] += nu_hat.weight(i) * tmp[k];
  }
  return out;
}

namespace {

void accumulate_outer(ConstSpan s, std::size_t n, double w, std::vector<double>& acc) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < n; ++k) v += s[r * n + k] * s[c * n + k];
      acc[r * n + c] += w * v;
    }
}

void symmetric_sqrt_into(std::vector<double>& sigma, std::size_t n, OutSpan out) {
  if (n == 1) {
    if (sigma[0] < -1e-10) throw NotPsdError("averaged diffusion: negative variance");
    out[0] = std::sqrt(std::max(sigma[0], 1e-12));
    return;
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = r + 1; c < n; ++c) {
      const double v = 0.5 * (sigma[r * n + c] + sigma[c * n + r]);
      sigma[r * n + c] = sigma[c * n + r] = v;
    }
  const auto root = sqrt_spd(sigma, n);
  std::copy(root.begin(), root.end(), out.begin());
}

}  // namespace

std::vector<double> averaged_diffusion(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                       const ParticleCloud& nu_hat) {
  const std::size_t n = model.n;
  std::vector<double> sigma(n * n, 0.0), s(n * n);
  for (std::size_t i = 0; i < nu_hat.size(); ++i) {
    model.sigma1(x, mu, nu_hat.sample(i), s);
    accumulate_outer(s, n, nu_hat.weight(i), sigma);
  }
  std::vector<double> out(n * n);
  symmetric_sqrt_into(sigma, n, out);
  return out;
}

std::vector<double> averaged_observation(const ModelSpec& model, ConstSpan x, const ParticleCloud& mu,
                                         const ParticleCloud& nu_hat) {
  std::vector<double> out(model.l, 0.0), tmp(model.l);
  for (std::size_t i = 0; i < nu_hat.size(); ++i) {
    model.h(x, mu, nu_hat.sample(i), tmp);
    for (std::size_t k = 0; k < model.l; ++k) out[k] += nu_hat.weight(i) * tmp[k];
  }
  return out;
}

// ---------------------------------------------------------------------------

AveragedModel::AveragedModel(ModelSpec base, FrozenConfig frozen, CacheConfig cache, std::uint64_t seed)
    : base_(std::move(base)), frozen_(frozen), cache_(cache), seed_(seed) {
  base_.check_well_formed();
  frozen_.validate();
  if (!(cache_.resolution > 0.0)) throw std::invalid_argument("cache resolution must be positive");
}

std::vector<std::int64_t> AveragedModel::bucket(const ParticleCloud& mu) const {
  std::vector<std::int64_t> key;
  key.reserve(mu.dim() + 1);
  for (double v : mu.mean()) key.push_back(static_cast<std::int64_t>(std::floor(v / cache_.resolution)));
  key.push_back(static_cast<std::int64_t>(std::floor(mu.second_moment() / cache_.resolution)));
  return key;
}

std::shared_ptr<const AveragedModel::Entry> AveragedModel::entry(const ParticleCloud& mu) const {
  const auto key = bucket(mu);
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) {
    ++hits_;
    return it->second;
  }
  auto e = std::make_shared<Entry>(Entry{sample_invariant(base_, mu, frozen_, seed_), {}, {}});
  const ParticleCloud& nu = e->nu.cloud;
  auto fast_mean = [&](const AdditiveSplit& split, std::size_t dim) {
    std::vector<double> acc(dim, 0.0), tmp(dim);
    for (std::size_t i = 0; i < nu.size(); ++i) {
      split.fast(nu.sample(i), tmp);
      for (std::size_t k = 0; k < dim; ++k) acc[k] += nu.weight(i) * tmp[k];
    }
    return acc;
  };
  if (base_.b1_split) e->b1_fast_mean = fast_mean(*base_.b1_split, base_.n);
  if (base_.h_split) e->h_fast_mean = fast_mean(*base_.h_split, base_.l);
  ++runs_;
  entries_.emplace(key, e);
  return e;
}

void AveragedModel::drift(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const {
  if (base_.b1_split) {
    base_.b1_split->slow(x, mu, out);
    for (std::size_t k = 0; k < base_.n; ++k) out[k] += e.b1_fast_mean[k];
    return;
  }
  const auto v = averaged_drift(base_, x, mu, e.nu.cloud);
  std::copy(v.begin(), v.end(), out.begin());
}

void AveragedModel::diffusion(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const {
  const std::size_t n = base_.n;
  if (!base_.sigma1_depends_on_z) {
    if (n == 1) {
      double s = 0.0;
      base_.sigma1(x, mu, base_.z0, OutSpan(&s, 1));
      out[0] = std::abs(s);
      return;
    }
    std::vector<double> s(n * n), sigma(n * n, 0.0);
    base_.sigma1(x, mu, base_.z0, s);
    accumulate_outer(s, n, 1.0, sigma);
    symmetric_sqrt_into(sigma, n, out);
    return;
  }
  const auto v = averaged_diffusion(base_, x, mu, e.nu.cloud);
  std::copy(v.begin(), v.end(), out.begin());
}

void AveragedModel::observation(const Entry& e, ConstSpan x, const ParticleCloud& mu, OutSpan out) const {
  if (base_.h_split) {
    base_.h_split->slow(x, mu, out);
    for (std::size_t k = 0; k < base_.l; ++k) out[k] += e.h_fast_mean[k];
    return;
  }
  const auto v = averaged_observation(base_, x, mu, e.nu.cloud);
  std::copy(v.begin(), v.end(), out.begin());
}

std::vector<double> AveragedModel::drift(ConstSpan x, const ParticleCloud& mu) const {
  std::vector<double> out(base_.n);
  drift(*entry(mu), x, mu, out);
  return out;
}

std::vector<double> AveragedModel::diffusion(ConstSpan x, const ParticleCloud& mu) const {
  std::vector<double> out(base_.n * base_.n);
  diffusion(*entry(mu), x, mu, out);
  return out;
}

std::vector<double> AveragedModel::observation(ConstSpan x, const ParticleCloud& mu) const {
  std::vector<double> out(base_.l);
  observation(*entry(mu), x, mu, out);
  return out;
}

std::size_t AveragedModel::frozen_runs() const {
  std::lock_guard lock(mutex_);
  return runs_;
}

std::size_t AveragedModel::cache_size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

nlohmann::json AveragedModel::cache_stats() const {
  std::lock_guard lock(mutex_);
  nlohmann::json j;
  j["entries"] = entries_.size();
  j["frozen_runs"] = runs_;
  j["hits"] = hits_;
  j["resolution"] = cache_.resolution;
  return j;
}

AveragedModel build_averaged_model(const ModelSpec& model, const FrozenConfig& frozen, const CacheConfig& cache,
                                   std::uint64_t seed) {
  return AveragedModel(model, frozen, cache, seed);
}

}  // namespace msmv
