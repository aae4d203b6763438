#include "msmv/measure.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "msmv/errors.hpp"
#include "msmv/io.hpp"

namespace msmv {

ParticleCloud::ParticleCloud(std::vector<double> samples, std::size_t dim, std::vector<double> weights)
    : dim_(dim), samples_(std::move(samples)), weights_(std::move(weights)), memo_(std::make_shared<Memo>()) {
  if (dim_ == 0) throw std::invalid_argument("ParticleCloud: dimension must be >= 1");
  if (weights_.empty()) throw std::invalid_argument("ParticleCloud: at least one particle required");
  if (samples_.size() != weights_.size() * dim_)
    throw std::invalid_argument("ParticleCloud: samples size does not match weights x dim");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("ParticleCloud: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("ParticleCloud: weights sum to zero");
  for (double v : samples_)
    if (!std::isfinite(v)) throw std::invalid_argument("ParticleCloud: non-finite sample");

  uniform_ = std::all_of(weights_.begin(), weights_.end(), [&](double w) { return w == weights_.front(); });
  const double inv = 1.0 / total;
  for (double& w : weights_) w *= inv;
  if (uniform_) std::fill(weights_.begin(), weights_.end(), 1.0 / static_cast<double>(weights_.size()));

  mean_.assign(dim_, 0.0);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const double w = weights_[i];
    double sq = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double v = samples_[i * dim_ + j];
      mean_[j] += w * v;
      sq += v * v;
    }
    second_moment_ += w * sq;
  }
}

ParticleCloud ParticleCloud::uniform(std::vector<double> samples, std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("ParticleCloud: dimension must be >= 1");
  const std::size_t n = samples.size() / dim;
  return ParticleCloud(std::move(samples), dim, std::vector<double>(n, 1.0));
}

ParticleCloud ParticleCloud::dirac(std::span<const double> point) {
  return ParticleCloud(std::vector<double>(point.begin(), point.end()), point.size(), {1.0});
}

std::shared_ptr<const void> ParticleCloud::cached_object(std::string_view tag,
                                                         const std::function<std::shared_ptr<const void>()>& build) const {
  std::lock_guard lock(memo_->mutex);
  for (const auto& [name, object] : memo_->objects)
    if (name == tag) return object;
  auto object = build();
  memo_->objects.emplace_back(std::string(tag), object);
  return object;
}

double ParticleCloud::memo(std::string_view tag, const std::function<double(std::span<const double>)>& f) const {
  std::lock_guard lock(memo_->mutex);
  for (const auto& [name, value] : memo_->entries)
    if (name == tag) return value;
  const double value = integrate(f);
  memo_->entries.emplace_back(std::string(tag), value);
  return value;
}

double ParticleCloud::integrate(const std::function<double(std::span<const double>)>& f) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i) acc += weights_[i] * f(sample(i));
  return acc;
}

LawFlow::LawFlow(std::vector<double> grid, std::vector<CloudPtr> clouds)
    : grid_(std::move(grid)), clouds_(std::move(clouds)) {
  if (grid_.size() != clouds_.size()) throw std::invalid_argument("LawFlow: one cloud per grid point required");
  for (std::size_t k = 1; k < grid_.size(); ++k)
    if (!(grid_[k] > grid_[k - 1])) throw std::invalid_argument("LawFlow: grid must be strictly increasing");
}

bool LawFlow::covers(const std::vector<double>& grid) const {
  if (grid.size() != grid_.size()) return false;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (std::abs(grid[k] - grid_[k]) > 1e-12) return false;
  return true;
}

std::vector<double> uniform_grid(double horizon, double dt) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw std::invalid_argument("uniform_grid: horizon and dt must be positive");
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (steps == 0 || std::abs(static_cast<double>(steps) * dt - horizon) > 1e-9 * std::max(1.0, horizon))
    throw std::invalid_argument("uniform_grid: horizon must be a multiple of dt");
  std::vector<double> grid(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) grid[k] = static_cast<double>(k) * dt;
  return grid;
}

std::vector<double> mean(const ParticleCloud& cloud) {
  return {cloud.mean().begin(), cloud.mean().end()};
}

std::vector<double> second_moment_matrix(const ParticleCloud& cloud) {
  const std::size_t d = cloud.dim();
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto x = cloud.sample(i);
    const double w = cloud.weight(i);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += w * x[r] * x[c];
  }
  return out;
}

double fourth_moment(const ParticleCloud& cloud) {
  return cloud.integrate([](std::span<const double> x) {
    double sq = 0.0;
    for (double v : x) sq += v * v;
    return sq * sq;
  });
}

std::vector<double> moment(const ParticleCloud& cloud, int order) {
  switch (order) {
    case 1: return mean(cloud);
    case 2: return second_moment_matrix(cloud);
    case 4: return {fourth_moment(cloud)};
    default: throw std::invalid_argument("moment: order must be 1, 2 or 4");
  }
}

MomentSummary summarize(const ParticleCloud& cloud, double time) {
  MomentSummary s;
  s.time = time;
  s.mean = mean(cloud);
  s.second_moment = cloud.second_moment();
  s.fourth_moment = fourth_moment(cloud);
  const auto [lo, hi] = std::minmax_element(cloud.samples().begin(), cloud.samples().end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

namespace {

struct Atom {
  double value;
  double weight;
};

std::vector<Atom> sorted_atoms(const ParticleCloud& c) {
  std::vector<Atom> atoms(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) atoms[i] = {c.sample(i)[0], c.weight(i)};
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.value < b.value; });
  return atoms;
}

// W2^2 between sorted atom lists by walking both quantile functions.
double w2_squared_sorted(const std::vector<Atom>& a, const std::vector<Atom>& b) {
  std::size_t i = 0, j = 0;
  double ra = a[0].weight, rb = b[0].weight;
  double acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double mass = std::min(ra, rb);
    const double diff = a[i].value - b[j].value;
    acc += mass * diff * diff;
    ra -= mass;
    rb -= mass;
    // Residual mass below round-off means the atom is exhausted.
    if (ra <= 1e-15) {
      if (++i < a.size()) ra += a[i].weight;
    }
    if (rb <= 1e-15) {
      if (++j < b.size()) rb += b[j].weight;
    }
  }
  return acc;
}

}  // namespace

double w2_1d(const ParticleCloud& a, const ParticleCloud& b) {
  if (a.dim() != 1 || b.dim() != 1) throw std::invalid_argument("w2_1d: clouds must be one-dimensional");
  return std::sqrt(std::max(0.0, w2_squared_sorted(sorted_atoms(a), sorted_atoms(b))));
}

double w2_sliced(const ParticleCloud& a, const ParticleCloud& b, int n_projections, const RngKey& key) {
  if (n_projections < 1) throw std::invalid_argument("w2_sliced: n_projections must be >= 1");
  if (a.dim() != b.dim()) throw std::invalid_argument("w2_sliced: dimension mismatch");
  const std::size_t d = a.dim();
  auto project = [](const ParticleCloud& c, const std::vector<double>& theta) {
    std::vector<Atom> atoms(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto x = c.sample(i);
      double v = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) v += x[k] * theta[k];
      atoms[i] = {v, c.weight(i)};
    }
    std::sort(atoms.begin(), atoms.end(), [](const Atom& p, const Atom& q) { return p.value < q.value; });
    return atoms;
  };
  std::vector<double> theta(d);
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    RngKey k = key;
    k.stream = StreamClass::Slicing;
    k.step = static_cast<std::uint32_t>(p);
    double norm = 0.0;
    do {
      fill_gaussian(k, 1.0, theta);
      norm = 0.0;
      for (double v : theta) norm += v * v;
      ++k.substep;
    } while (norm < 1e-24);
    norm = std::sqrt(norm);
    for (double& v : theta) v /= norm;
    acc += w2_squared_sorted(project(a, theta), project(b, theta));
  }
  return std::sqrt(std::max(0.0, acc / n_projections));
}

std::vector<double> sqrt_spd(std::span<const double> matrix, std::size_t dim) {
  if (matrix.size() != dim * dim) throw std::invalid_argument("sqrt_spd: matrix size mismatch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      matrix.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  if (!m.allFinite()) throw NotPsdError("sqrt_spd: non-finite entry");
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument("sqrt_spd: matrix is not symmetric");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -1e-10)
      throw NotPsdError("sqrt_spd: matrix is not positive semidefinite (eigenvalue " + std::to_string(values[i]) + ")");
    values[i] = std::sqrt(std::max(values[i], 1e-12));
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  Eigen::MatrixXd s = v * values.asDiagonal() * v.transpose();
  s = 0.5 * (s + s.transpose()).eval();
  std::vector<double> out(dim * dim);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return out;
}

void write_cloud_csv(std::ostream& os, const ParticleCloud& cloud) {
  os << "weight";
  for (std::size_t j = 0; j < cloud.dim(); ++j) os << ",x" << j;
  os << '\n';
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    os << format_real(cloud.weight(i));
    for (double v : cloud.sample(i)) os << ',' << format_real(v);
    os << '\n';
  }
}

}  // namespace msmv
