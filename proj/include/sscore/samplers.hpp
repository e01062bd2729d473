#pragma once

// Annealed Langevin dynamics, unconditional and with a linear measurement
// model:
//   x <- x + alpha_t ( A^H (y - A x) / (sigma_n^2 + gamma_t^2) + s(x; sigma_t) )
//          + sqrt(2 beta alpha_t) eta,      gamma_t^2 = sigma_t^2.
// sigma_n^2 is taken per packed real coordinate, so complex operators use
// half their CN variance. Chains are rows of a matrix; chain i draws its noise from its own stream
// derived from (seed, i), so results do not depend on the thread count.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "sscore/data.hpp"
#include "sscore/error.hpp"
#include "sscore/operators.hpp"
#include "sscore/parallel.hpp"
#include "sscore/random.hpp"
#include "sscore/schedules.hpp"
#include "sscore/score_net.hpp"

namespace sscore {

/// Batched score field: rows of x are chains.
using ScoreFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, double sigma)>;

inline ScoreFn network_score(const ScoreNetwork& net) {
  return [&net](const Eigen::MatrixXd& x, double sigma) { return net.score_values(x, sigma); };
}

inline ScoreFn analytic_score_fn(const SyntheticPrior& prior) {
  return [prior](const Eigen::MatrixXd& x, double sigma) { return analytic_score_rows(prior, x, sigma); };
}

inline ScoreFn zero_score() {
  return [](const Eigen::MatrixXd& x, double) { return Eigen::MatrixXd::Zero(x.rows(), x.cols()).eval(); };
}

struct SamplerConfig {
  NoiseSchedule schedule{0.01, 1.0, 30};
  std::size_t steps_per_level = 3;
  std::uint64_t seed = 0;
  /// One Tweedie step at sigma_min after the last level.
  bool final_denoise = true;
  /// Run the last level with beta = 0.
  bool quench_final_level = false;
  /// Chains averaged into each point estimate.
  std::size_t average = 1;

  void validate() const {
    require(steps_per_level >= 1, "steps_per_level must be >= 1");
    require(average >= 1, "average must be >= 1");
  }
};

namespace detail {

inline void langevin_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> x, const Eigen::RowVectorXd& score, const Eigen::VectorXd* y,
                         const LinearOperator* op, double sigma_t, double alpha_t, double beta, Rng& rng) {
  Eigen::RowVectorXd drift = score;
  if (op) {
    const Eigen::VectorXd xv = x.transpose();
    const double denom = op->coordinate_noise_variance() + sigma_t * sigma_t;
    drift += (op->adjoint(*y - op->apply(xv)) / denom).transpose();
  }
  x += alpha_t * drift;
  if (beta > 0) {
    const double s = std::sqrt(2.0 * beta * alpha_t);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += s * standard_normal(rng);
  }
}

/// Runs the full anneal on the chains in x (rows). ys holds one measurement
/// per chain when op is set.
inline void anneal(Eigen::MatrixXd& x, const std::vector<Eigen::VectorXd>* ys, const LinearOperator* op,
                   const ScoreFn& score, const SamplerConfig& cfg, std::vector<Rng>& rngs) {
  cfg.validate();
  const auto& sched = cfg.schedule;
  for (std::size_t level = 0; level < sched.size(); ++level) {
    const double sigma = sched.level(level);
    const double alpha = sched.step_size(sigma);
    const bool last = level + 1 == sched.size();
    const double beta = (last && cfg.quench_final_level) ? 0.0 : sched.beta();
    for (std::size_t step = 0; step < cfg.steps_per_level; ++step) {
      const Eigen::MatrixXd s = score(x, sigma);
      parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t r) {
        const auto row = static_cast<Eigen::Index>(r);
        langevin_row(x.row(row), s.row(row), ys ? &(*ys)[r] : nullptr, op, sigma, alpha, beta, rngs[r]);
      });
    }
    require(x.allFinite(), "sampler diverged (non-finite iterate) at level ", level, " (sigma ", sigma, ")");
  }
  if (cfg.final_denoise) {
    const double s = sched.sigma_min();
    x += s * s * score(x, s);
  }
}

inline std::vector<Rng> chain_streams(std::uint64_t seed, std::size_t chains) {
  std::vector<Rng> rngs;
  rngs.reserve(chains);
  for (std::size_t i = 0; i < chains; ++i) rngs.push_back(substream(seed, {0x5a3b1e, i}));
  return rngs;
}

inline Eigen::MatrixXd initial_chains(std::vector<Rng>& rngs, Eigen::Index dim) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rngs.size()), dim);
  for (std::size_t i = 0; i < rngs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = normal_vector(rngs[i], dim).transpose();
  return x;
}

}  // namespace detail

/// One update of a single chain.
inline Eigen::VectorXd posterior_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& y, const LinearOperator& op,
                                      const ScoreFn& score, double sigma_t, double alpha_t, double beta, Rng& rng) {
  require(x_t.size() == op.signal_dim(), "posterior_step: iterate length ", x_t.size(), ", operator expects ",
          op.signal_dim());
  require(y.size() == op.measurement_dim(), "posterior_step: measurement length ", y.size(), ", operator expects ",
          op.measurement_dim());
  Eigen::MatrixXd x = x_t.transpose();
  const Eigen::MatrixXd s = score(x, sigma_t);
  detail::langevin_row(x.row(0), s.row(0), &y, &op, sigma_t, alpha_t, beta, rng);
  return x.row(0).transpose();
}

/// Unconditional samples (measurement term dropped), one per row.
inline Eigen::MatrixXd prior_sample(const ScoreFn& score, Eigen::Index dim, const SamplerConfig& cfg,
                                    std::size_t n_samples) {
  require(n_samples >= 1 && dim >= 1, "prior_sample: need positive sample count and dimension");
  auto rngs = detail::chain_streams(cfg.seed, n_samples);
  Eigen::MatrixXd x = detail::initial_chains(rngs, dim);
  detail::anneal(x, nullptr, nullptr, score, cfg, rngs);
  return x;
}

/// Point estimates for a batch of measurements (one per row of the result).
/// Each estimate is the mean of cfg.average independent chains.
inline Eigen::MatrixXd posterior_sample(const ScoreFn& score, const LinearOperator& op,
                                        const std::vector<Eigen::VectorXd>& measurements, const SamplerConfig& cfg) {
  cfg.validate();
  require(!measurements.empty(), "posterior_sample: no measurements");
  for (const auto& y : measurements)
    require(y.size() == op.measurement_dim(), "posterior_sample: measurement length ", y.size(),
            ", operator expects ", op.measurement_dim());
  const std::size_t k = cfg.average;
  const std::size_t chains = measurements.size() * k;
  std::vector<Eigen::VectorXd> ys;
  ys.reserve(chains);
  for (const auto& y : measurements)
    for (std::size_t j = 0; j < k; ++j) ys.push_back(y);
  auto rngs = detail::chain_streams(cfg.seed, chains);
  Eigen::MatrixXd x = detail::initial_chains(rngs, op.signal_dim());
  detail::anneal(x, &ys, &op, score, cfg, rngs);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(measurements.size()), x.cols());
  for (std::size_t c = 0; c < chains; ++c) out.row(static_cast<Eigen::Index>(c / k)) += x.row(static_cast<Eigen::Index>(c));
  return out / static_cast<double>(k);
}

inline Eigen::VectorXd posterior_sample(const ScoreFn& score, const LinearOperator& op, const Eigen::VectorXd& y,
                                        const SamplerConfig& cfg) {
  return posterior_sample(score, op, std::vector<Eigen::VectorXd>{y}, cfg).row(0).transpose();
}

/// Conjugate-Gaussian posterior mean for a real dense operator and a
/// Gaussian prior: (A^T A / s^2 + C^{-1})^{-1} (A^T y / s^2 + C^{-1} mu).
inline Eigen::VectorXd gaussian_posterior_mean(const GaussianPrior& prior, const Eigen::MatrixXd& a,
                                               const Eigen::VectorXd& y, double sigma_n) {
  require(sigma_n > 0, "sigma_n must be positive for the closed-form posterior");
  const Eigen::MatrixXd prec_prior = prior.cov.inverse();
  const double inv = 1.0 / (sigma_n * sigma_n);
  const Eigen::MatrixXd prec = inv * a.transpose() * a + prec_prior;
  return prec.llt().solve(inv * a.transpose() * y + prec_prior * prior.mean);
}

}  // namespace sscore
