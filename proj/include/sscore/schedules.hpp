#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "sscore/error.hpp"
#include "sscore/random.hpp"

namespace sscore {

/// sigma_i = sigma_max * (sigma_min / sigma_max)^(i / (L-1)), i = 0..L-1.
inline std::vector<double> geometric_levels(double sigma_min, double sigma_max, std::size_t levels) {
  require(sigma_min > 0, "sigma_min must be positive, got ", sigma_min);
  require(sigma_max > sigma_min, "sigma_max (", sigma_max, ") must exceed sigma_min (", sigma_min, ")");
  require(levels >= 2, "noise ladder needs at least 2 levels, got ", levels);
  std::vector<double> out(levels);
  const double ratio = sigma_min / sigma_max;
  for (std::size_t i = 0; i < levels; ++i)
    out[i] = sigma_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(levels - 1));
  out.front() = sigma_max;
  out.back() = sigma_min;
  return out;
}

/// Geometric noise ladder (descending) and the annealing step-size rule
/// alpha_t = alpha_0 (sigma_t / sigma_min)^2.
class NoiseSchedule {
 public:
  NoiseSchedule(double sigma_min, double sigma_max, std::size_t levels, double alpha0 = 1e-5, double beta = 1.0)
      : levels_(geometric_levels(sigma_min, sigma_max, levels)), alpha0_(alpha0), beta_(beta) {
    require(alpha0 > 0, "alpha0 must be positive, got ", alpha0);
    require(beta >= 0, "beta must be non-negative, got ", beta);
  }

  const std::vector<double>& levels() const { return levels_; }
  std::size_t size() const { return levels_.size(); }
  double sigma_max() const { return levels_.front(); }
  double sigma_min() const { return levels_.back(); }
  double alpha0() const { return alpha0_; }
  double beta() const { return beta_; }
  double level(std::size_t i) const { return levels_.at(i); }

  double step_size(double sigma_t) const {
    const double r = sigma_t / sigma_min();
    return alpha0_ * r * r;
  }

  std::size_t sample_level(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, levels_.size() - 1);
    return pick(rng);
  }
  double sample_sigma(Rng& rng) const { return levels_[sample_level(rng)]; }

 private:
  std::vector<double> levels_;
  double alpha0_;
  double beta_;
};

/// Largest pairwise L2 distance over (at most) `subset` randomly chosen rows;
/// the default choice of sigma_max for a dataset.
inline double suggest_sigma_max(const Eigen::MatrixXd& samples, Rng& rng, std::size_t subset = 128) {
  require(samples.rows() >= 2, "need at least two samples to suggest sigma_max");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(samples.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(subset, idx.size()));
  double best = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      best = std::max(best, (samples.row(idx[i]) - samples.row(idx[j])).norm());
  return best;
}

}  // namespace sscore
