#pragma once

// Training objectives. Every loss takes a batch x[rows x N] (one sample per
// row) and returns the mean over rows as a scalar tensor.

#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sscore/autodiff.hpp"
#include "sscore/error.hpp"
#include "sscore/random.hpp"
#include "sscore/schedules.hpp"
#include "sscore/score_net.hpp"

namespace sscore {

struct LossConfig {
  double lambda = 1.0;
  double epsilon = 1e-3;
  double sigma_w = 1.0;
  bool detach_denoiser_in_dsm = false;

  void validate() const {
    require(lambda >= 0, "lambda must be non-negative, got ", lambda);
    require(epsilon > 0, "epsilon must be positive, got ", epsilon);
    require(sigma_w > 0, "sigma_w must be positive, got ", sigma_w);
  }
};

/// Per-step randomness: one sigma from the ladder, one perturbation z ~ N(0, sigma^2 I)
/// and one divergence probe n ~ N(0, I) per sample.
struct BatchDraw {
  std::vector<double> sigmas;
  Eigen::MatrixXd z;
  Eigen::MatrixXd n;
};

inline BatchDraw draw_batch(const NoiseSchedule& schedule, Eigen::Index rows, Eigen::Index dim, Rng& rng) {
  BatchDraw d;
  d.sigmas.resize(static_cast<std::size_t>(rows));
  d.z.resize(rows, dim);
  d.n.resize(rows, dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double s = schedule.sample_sigma(rng);
    d.sigmas[static_cast<std::size_t>(r)] = s;
    for (Eigen::Index c = 0; c < dim; ++c) d.z(r, c) = s * normal(rng);
    for (Eigen::Index c = 0; c < dim; ++c) d.n(r, c) = normal(rng);
  }
  return d;
}

namespace detail {

inline std::size_t batch_rows(const Tensor& x) { return x.rank() == 1 ? 1 : x.shape()[0]; }

inline Tensor as_batch(const Tensor& x) { return x.rank() == 1 ? reshape(x, {1, x.size()}) : x; }

inline Tensor constant_like(const Tensor& x, const Eigen::MatrixXd& m) {
  Tensor t = Tensor::from_matrix(m);
  require(t.size() == x.size(), "random draw shape [", m.rows(), "x", m.cols(), "] does not match ",
          shape_string(x.shape()));
  return reshape(t, x.shape());
}

}  // namespace detail

using VectorField = std::function<Tensor(const Tensor&)>;

/// Monte-Carlo divergence n^T (g(x + eps n) - g(x)) / eps, summed over rows.
/// `gx` may carry an already computed g(x).
inline Tensor mc_divergence(const VectorField& g, const Tensor& x, const Tensor& n, double epsilon,
                            const Tensor* gx = nullptr) {
  require(epsilon > 0, "divergence epsilon must be positive, got ", epsilon);
  require(x.shape() == n.shape(), "probe shape ", shape_string(n.shape()), " does not match input ",
          shape_string(x.shape()));
  Tensor base = gx ? *gx : g(x);
  Tensor shifted = g(add(x, scale(n, epsilon)));
  return scale(sum(mul(n, sub(shifted, base))), 1.0 / epsilon);
}

/// Graph-free variant for arbitrary vector fields on single vectors.
inline double mc_divergence(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& n, double epsilon) {
  require(epsilon > 0, "divergence epsilon must be positive, got ", epsilon);
  require(x.size() == n.size(), "probe length ", n.size(), " does not match input length ", x.size());
  return n.dot(g(x + epsilon * n) - g(x)) / epsilon;
}

/// sigma^2 || s(x + z; sigma) + z / sigma^2 ||^2 averaged over rows.
inline Tensor dsm_loss(const ScoreNetwork& net, const Tensor& x_clean, std::span<const double> sigmas,
                       const Eigen::MatrixXd& z) {
  const Tensor x = detail::as_batch(x_clean);
  const std::size_t rows = x.shape()[0];
  require(sigmas.size() == rows, "dsm_loss: ", sigmas.size(), " sigmas for ", rows, " rows");
  for (double s : sigmas) require(s > 0, "noise level must be positive, got ", s);
  Eigen::MatrixXd target = z;
  for (std::size_t r = 0; r < rows; ++r) target.row(static_cast<Eigen::Index>(r)) /= sigmas[r] * sigmas[r];
  const Tensor zt = detail::constant_like(x, z);
  const Tensor residual = add(net.score(add(x, zt), sigmas), detail::constant_like(x, target));
  return scale(norm_sq(scale_rows(residual, sigmas)), 1.0 / static_cast<double>(rows));
}

inline Tensor dsm_loss(const ScoreNetwork& net, const Tensor& x_clean, double sigma, const Eigen::MatrixXd& z) {
  require(sigma > 0, "noise level must be positive, got ", sigma);
  return dsm_loss(net, x_clean, std::vector<double>(detail::batch_rows(x_clean), sigma), z);
}

/// ||x - g(x)||^2 + 2 sigma_w^2 div g(x), g the Tweedie denoiser at sigma_w,
/// averaged over rows. Exceeds the true denoising MSE by N sigma_w^2 in
/// expectation; see sure_risk_offset().
inline Tensor sure_loss(const ScoreNetwork& net, const Tensor& x_noisy, double sigma_w, const Eigen::MatrixXd& n,
                        double epsilon) {
  const Tensor x = detail::as_batch(x_noisy);
  const std::size_t rows = x.shape()[0];
  VectorField g = [&](const Tensor& u) { return tweedie_denoise(net, u, sigma_w); };
  const Tensor gx = g(x);
  const Tensor fidelity = norm_sq(sub(x, gx));
  const Tensor div = mc_divergence(g, x, detail::constant_like(x, n), epsilon, &gx);
  return scale(add(fidelity, scale(div, 2.0 * sigma_w * sigma_w)), 1.0 / static_cast<double>(rows));
}

/// Constant separating the SURE training loss from an unbiased MSE estimate.
inline double sure_risk_offset(std::size_t dim, double sigma_w) { return static_cast<double>(dim) * sigma_w * sigma_w; }

/// SURE for an arbitrary denoiser on a single sample (same form as sure_loss).
inline double sure_value(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& denoiser,
                         const Eigen::VectorXd& x_noisy, double sigma_w, const Eigen::VectorXd& n, double epsilon) {
  require(sigma_w > 0, "sigma_w must be positive, got ", sigma_w);
  const Eigen::VectorXd gx = denoiser(x_noisy);
  const double div = n.dot(denoiser(x_noisy + epsilon * n) - gx) / epsilon;
  return (x_noisy - gx).squaredNorm() + 2.0 * sigma_w * sigma_w * div;
}

/// Joint objective written directly in terms of the score network:
///   sigma^2 || s(x + sw^2 s(x; sw) + z; sigma) + z/sigma^2 ||^2
///   + lambda || sw^2 s(x; sw) ||^2 + 2 lambda sw^2 div(x + sw^2 s(x; sw)),
/// averaged over rows. Both network calls are differentiated unless
/// cfg.detach_denoiser_in_dsm is set.
inline Tensor sure_score_loss(const ScoreNetwork& net, const Tensor& x_noisy, std::span<const double> sigmas,
                              const Eigen::MatrixXd& z, const Eigen::MatrixXd& n, const LossConfig& cfg) {
  cfg.validate();
  const Tensor x = detail::as_batch(x_noisy);
  const std::size_t rows = x.shape()[0];
  const double sw2 = cfg.sigma_w * cfg.sigma_w;

  const Tensor correction = scale(net.score(x, cfg.sigma_w), sw2);
  const Tensor denoised = add(x, correction);
  const Tensor dsm_input = cfg.detach_denoiser_in_dsm ? detach(denoised) : denoised;
  const Tensor dsm_term = dsm_loss(net, dsm_input, sigmas, z);
  if (cfg.lambda == 0.0) return dsm_term;

  VectorField tweedie = [&](const Tensor& u) { return add(u, scale(net.score(u, cfg.sigma_w), sw2)); };
  const Tensor div = mc_divergence(tweedie, x, detail::constant_like(x, n), cfg.epsilon, &denoised);
  const Tensor sure_terms = add(norm_sq(correction), scale(div, 2.0 * sw2));
  return add(dsm_term, scale(sure_terms, cfg.lambda / static_cast<double>(rows)));
}

inline Tensor sure_score_loss(const ScoreNetwork& net, const Tensor& x_noisy, double sigma,
                              const Eigen::MatrixXd& z, const Eigen::MatrixXd& n, const LossConfig& cfg) {
  return sure_score_loss(net, x_noisy, std::vector<double>(detail::batch_rows(x_noisy), sigma), z, n, cfg);
}

struct LambdaChoice {
  double lambda = 1.0;
  bool fallback = false;
};

/// lambda = mean DSM / mean SURE; falls back to 1 when the SURE mean is not positive.
inline LambdaChoice balance_lambda(double dsm_mean, double sure_mean) {
  if (!(sure_mean > 0) || !std::isfinite(dsm_mean)) return {1.0, true};
  return {dsm_mean / sure_mean, false};
}

/// Balances the two terms of the joint loss on the first batch at initialisation.
inline LambdaChoice lambda_init(const ScoreNetwork& net, const Eigen::MatrixXd& first_batch, const BatchDraw& draw,
                                const LossConfig& cfg) {
  require(first_batch.rows() > 0, "lambda_init needs a nonempty batch");
  const Tensor x = Tensor::from_matrix(first_batch);
  const Tensor denoised = detach(tweedie_denoise(net, x, cfg.sigma_w));
  const double dsm = dsm_loss(net, denoised, draw.sigmas, draw.z).item();
  const double sure = sure_loss(net, x, cfg.sigma_w, draw.n, cfg.epsilon).item();
  const auto choice = balance_lambda(dsm, sure);
  if (choice.fallback)
    std::clog << "warning: first-batch SURE mean " << sure << " is not positive; using lambda = 1\n";
  return choice;
}

}  // namespace sscore
