#pragma once

// Weighted empirical measures and the metric utilities built on them.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msmv/random.hpp"

namespace msmv {

/// A weighted point cloud in R^d approximating a probability measure.
///
/// Samples are stored row-major (N x d). Weights are normalized on
/// construction. The cloud is immutable; mean and second moment are computed
/// once, and `memo` caches further integrals under a caller-chosen tag.
class ParticleCloud {
 public:
  ParticleCloud(std::vector<double> samples, std::size_t dim, std::vector<double> weights);

  static ParticleCloud uniform(std::vector<double> samples, std::size_t dim);
  static ParticleCloud dirac(std::span<const double> point);

  std::size_t size() const noexcept { return weights_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool uniform_weights() const noexcept { return uniform_; }

  std::span<const double> sample(std::size_t i) const noexcept {
    return {samples_.data() + i * dim_, dim_};
  }
  double weight(std::size_t i) const noexcept { return weights_[i]; }
  const std::vector<double>& samples() const noexcept { return samples_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Weighted mean vector.
  std::span<const double> mean() const noexcept { return mean_; }
  /// ||mu||^2 = integral of |x|^2.
  double second_moment() const noexcept { return second_moment_; }

  /// Integral of f against the cloud, computed once per tag. Thread-safe.
  double memo(std::string_view tag, const std::function<double(std::span<const double>)>& f) const;

  /// Object derived from the cloud (sorted tables and the like), built once
  /// per tag. Thread-safe; `build` must not call back into the memo.
  template <class T, class Build>
  std::shared_ptr<const T> cached(std::string_view tag, Build&& build) const {
    return std::static_pointer_cast<const T>(
        cached_object(tag, [&]() -> std::shared_ptr<const void> { return std::make_shared<const T>(build(*this)); }));
  }

  /// Weighted average of f over the samples (not cached).
  double integrate(const std::function<double(std::span<const double>)>& f) const;

 private:
  struct Memo {
    std::mutex mutex;
    std::vector<std::pair<std::string, double>> entries;
    std::vector<std::pair<std::string, std::shared_ptr<const void>>> objects;
  };

  std::shared_ptr<const void> cached_object(std::string_view tag,
                                            const std::function<std::shared_ptr<const void>()>& build) const;

  std::size_t dim_;
  std::vector<double> samples_;
  std::vector<double> weights_;
  bool uniform_ = false;
  std::vector<double> mean_;
  double second_moment_ = 0.0;
  std::shared_ptr<Memo> memo_;
};

using CloudPtr = std::shared_ptr<const ParticleCloud>;

/// Scalar summary of one cloud; the per-time record of a trajectory.
struct MomentSummary {
  double time = 0.0;
  std::vector<double> mean;
  double second_moment = 0.0;
  double fourth_moment = 0.0;
  double min = 0.0;  // over all coordinates of all samples
  double max = 0.0;
};

/// Time-indexed clouds t_0 < ... < t_K.
class LawFlow {
 public:
  LawFlow() = default;
  LawFlow(std::vector<double> grid, std::vector<CloudPtr> clouds);

  const std::vector<double>& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return clouds_.size(); }
  const ParticleCloud& at(std::size_t k) const { return *clouds_.at(k); }
  const CloudPtr& ptr(std::size_t k) const { return clouds_.at(k); }

  /// True when the grids agree to 1e-12.
  bool covers(const std::vector<double>& grid) const;

 private:
  std::vector<double> grid_;
  std::vector<CloudPtr> clouds_;
};

/// Uniform grid 0, dt, ..., T. Throws std::invalid_argument for T <= 0 or dt <= 0.
std::vector<double> uniform_grid(double horizon, double dt);

std::vector<double> mean(const ParticleCloud& cloud);
/// Second-moment matrix E[x x^T], row-major d x d.
std::vector<double> second_moment_matrix(const ParticleCloud& cloud);
/// Integral of |x|^4.
double fourth_moment(const ParticleCloud& cloud);
/// order 1 -> mean vector, 2 -> second-moment matrix, 4 -> {E|x|^4}.
std::vector<double> moment(const ParticleCloud& cloud, int order);

MomentSummary summarize(const ParticleCloud& cloud, double time);

/// Exact W2 between two one-dimensional weighted clouds (quantile coupling).
double w2_1d(const ParticleCloud& a, const ParticleCloud& b);

/// Root-mean-square of w2_1d over random unit projections.
double w2_sliced(const ParticleCloud& a, const ParticleCloud& b, int n_projections, const RngKey& key);

/// Symmetric PSD square root of a row-major d x d symmetric matrix.
/// Eigenvalues in [-1e-10, 1e-12) are clamped to 1e-12; anything below
/// -1e-10 throws NotPsdError.
std::vector<double> sqrt_spd(std::span<const double> matrix, std::size_t dim);

/// Columnar CSV: header "weight,x0,x1,...", one row per particle.
void write_cloud_csv(std::ostream& os, const ParticleCloud& cloud);

}  // namespace msmv
