#pragma once

// Linear forward models y = A x + n for the sampler. Signals and measurements
// cross this interface as packed real vectors; complex operators unpack, do
// their algebra in the complex domain and pack the result. For a complex
// linear map the packed adjoint is exactly the transpose of the packed
// forward map, so the real and complex views agree.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "sscore/error.hpp"
#include "sscore/random.hpp"
#include "sscore/score_net.hpp"

namespace sscore {

class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  /// Packed real lengths.
  virtual Eigen::Index signal_dim() const = 0;
  virtual Eigen::Index measurement_dim() const = 0;

  virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const = 0;

  /// Prior-free reconstruction used as the "Linear" baseline; A^H y unless
  /// the operator has a better closed form.
  virtual Eigen::VectorXd linear_estimate(const Eigen::VectorXd& y) const { return adjoint(y); }

  /// One draw of the measurement noise n (packed).
  virtual Eigen::VectorXd draw_noise(Rng& rng) const = 0;

  virtual nlohmann::json describe() const = 0;

  double sigma_n() const { return sigma_n_; }
  /// Noise variance on each packed real coordinate of a measurement.
  virtual double coordinate_noise_variance() const { return sigma_n_ * sigma_n_; }
  void set_sigma_n(double s) {
    require(s >= 0, "measurement noise std must be non-negative, got ", s);
    sigma_n_ = s;
  }

  Eigen::VectorXd measure(const Eigen::VectorXd& x, Rng& rng) const {
    Eigen::VectorXd y = apply(x);
    if (sigma_n_ > 0) y += draw_noise(rng);
    return y;
  }

 protected:
  void check_signal(const Eigen::VectorXd& x) const {
    require(x.size() == signal_dim(), "operator expects signal length ", signal_dim(), ", got ", x.size());
  }
  void check_measurement(const Eigen::VectorXd& y) const {
    require(y.size() == measurement_dim(), "operator expects measurement length ", measurement_dim(), ", got ",
            y.size());
  }

  double sigma_n_ = 0.0;
};

/// Real dense matrix with real Gaussian noise N(0, sigma_n^2 I).
class DenseOperator final : public LinearOperator {
 public:
  explicit DenseOperator(Eigen::MatrixXd a, double sigma_n = 0.0) : a_(std::move(a)) { set_sigma_n(sigma_n); }

  Eigen::Index signal_dim() const override { return a_.cols(); }
  Eigen::Index measurement_dim() const override { return a_.rows(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
    check_signal(x);
    return a_ * x;
  }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
    check_measurement(y);
    return a_.transpose() * y;
  }
  Eigen::VectorXd draw_noise(Rng& rng) const override { return normal_vector(rng, a_.rows(), sigma_n_); }
  nlohmann::json describe() const override {
    return {{"type", "dense"}, {"rows", a_.rows()}, {"cols", a_.cols()}, {"sigma_n", sigma_n_}};
  }
  const Eigen::MatrixXd& matrix() const { return a_; }

 private:
  Eigen::MatrixXd a_;
};

/// Complex operator with circular complex noise CN(0, sigma_n^2 I).
class ComplexOperator : public LinearOperator {
 public:
  virtual Eigen::Index complex_signal_dim() const = 0;
  virtual Eigen::Index complex_measurement_dim() const = 0;
  virtual Eigen::VectorXcd forward(const Eigen::VectorXcd& x) const = 0;
  virtual Eigen::VectorXcd backward(const Eigen::VectorXcd& y) const = 0;

  Eigen::Index signal_dim() const override { return 2 * complex_signal_dim(); }
  Eigen::Index measurement_dim() const override { return 2 * complex_measurement_dim(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override {
    check_signal(x);
    return pack(forward(unpack(x)));
  }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override {
    check_measurement(y);
    return pack(backward(unpack(y)));
  }
  Eigen::VectorXd draw_noise(Rng& rng) const override {
    return pack(complex_normal_vector(rng, complex_measurement_dim(), sigma_n_ * sigma_n_));
  }
  double coordinate_noise_variance() const override { return 0.5 * sigma_n_ * sigma_n_; }
};

// ---------------------------------------------------------------------------
// Compressed pilot sensing: Y = H P + N, H in C^{Nr x Nt}, P in C^{Nt x Np}.
// The channel is vectorised column-major, so vec(HP) = (P^T kron I_Nr) vec(H).

/// sigma_n for a target pilot SNR, taken as received signal power per
/// measurement (Nt for unit-power channel entries and unit-modulus pilots)
/// over noise power.
inline double pilot_noise_std(std::size_t n_t, double pilot_snr_db) {
  return std::sqrt(static_cast<double>(n_t) * std::pow(10.0, -pilot_snr_db / 10.0));
}

/// Pilot count for density alpha = Np / Nt.
inline std::size_t pilots_for_density(std::size_t n_t, double alpha) {
  require(alpha > 0 && alpha <= 1, "pilot density must lie in (0, 1], got ", alpha);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n_t))));
}

class PilotOperator final : public ComplexOperator {
 public:
  PilotOperator(std::size_t n_r, Eigen::MatrixXcd pilots, double sigma_n = 0.0, std::uint64_t seed = 0)
      : n_r_(n_r), p_(std::move(pilots)), seed_(seed) {
    require(n_r >= 1, "need at least one receive antenna");
    require(p_.cols() >= 1 && p_.cols() <= p_.rows(), "pilot count must lie in [1, Nt], got ", p_.cols(), " for Nt=",
            p_.rows());
    set_sigma_n(sigma_n);
  }

  std::size_t n_r() const { return n_r_; }
  std::size_t n_t() const { return static_cast<std::size_t>(p_.rows()); }
  std::size_t n_p() const { return static_cast<std::size_t>(p_.cols()); }
  double alpha() const { return static_cast<double>(n_p()) / static_cast<double>(n_t()); }
  const Eigen::MatrixXcd& pilots() const { return p_; }

  Eigen::Index complex_signal_dim() const override { return static_cast<Eigen::Index>(n_r_ * n_t()); }
  Eigen::Index complex_measurement_dim() const override { return static_cast<Eigen::Index>(n_r_ * n_p()); }

  Eigen::VectorXcd forward(const Eigen::VectorXcd& h) const override {
    require(h.size() == complex_signal_dim(), "pilot_forward: channel length ", h.size(), ", expected ",
            complex_signal_dim());
    Eigen::Map<const Eigen::MatrixXcd> hm(h.data(), static_cast<Eigen::Index>(n_r_), p_.rows());
    Eigen::MatrixXcd y = hm * p_;
    return Eigen::Map<const Eigen::VectorXcd>(y.data(), y.size());
  }

  Eigen::VectorXcd backward(const Eigen::VectorXcd& y) const override {
    require(y.size() == complex_measurement_dim(), "pilot_adjoint: measurement length ", y.size(), ", expected ",
            complex_measurement_dim());
    Eigen::Map<const Eigen::MatrixXcd> ym(y.data(), static_cast<Eigen::Index>(n_r_), p_.cols());
    Eigen::MatrixXcd h = ym * p_.adjoint();
    return Eigen::Map<const Eigen::VectorXcd>(h.data(), h.size());
  }

  /// Minimum-norm least squares: H = Y (P^H P)^{-1} P^H.
  Eigen::VectorXd linear_estimate(const Eigen::VectorXd& y_packed) const override {
    check_measurement(y_packed);
    const Eigen::VectorXcd y = unpack(y_packed);
    Eigen::Map<const Eigen::MatrixXcd> ym(y.data(), static_cast<Eigen::Index>(n_r_), p_.cols());
    const Eigen::MatrixXcd gram = p_.adjoint() * p_;
    Eigen::MatrixXcd h = gram.ldlt().solve(ym.adjoint()).adjoint() * p_.adjoint();
    return pack(Eigen::Map<const Eigen::VectorXcd>(h.data(), h.size()));
  }

  nlohmann::json describe() const override {
    return {{"type", "pilot"}, {"n_r", n_r_},       {"n_t", n_t()},        {"n_p", n_p()},
            {"alpha", alpha()}, {"seed", seed_}, {"sigma_n", sigma_n_}};
  }

 private:
  std::size_t n_r_;
  Eigen::MatrixXcd p_;
  std::uint64_t seed_;
};

/// QPSK pilots: every entry uniform over (+-1 +- j)/sqrt(2).
inline PilotOperator make_pilot_operator(std::size_t n_r, std::size_t n_t, std::size_t n_p, std::uint64_t seed,
                                         double sigma_n = 0.0) {
  require(n_r >= 1 && n_t >= 1, "antenna counts must be positive");
  require(n_p >= 1 && n_p <= n_t, "pilot count must lie in [1, Nt=", n_t, "], got ", n_p);
  Rng rng = substream(seed, {0x9175});
  std::bernoulli_distribution coin(0.5);
  const double a = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXcd p(static_cast<Eigen::Index>(n_t), static_cast<Eigen::Index>(n_p));
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double re = coin(rng) ? a : -a;
      const double im = coin(rng) ? a : -a;
      p(i, j) = {re, im};
    }
  return PilotOperator(n_r, std::move(p), sigma_n, seed);
}

// ---------------------------------------------------------------------------
// Multi-coil Cartesian imaging: y_i = M F S_i x + n_i.

/// Unitary DFT matrix with the zero frequency at row n/2:
/// F[k, j] = exp(-2 pi i (k - n/2) j / n) / sqrt(n).
inline Eigen::MatrixXcd centered_dft_matrix(Eigen::Index n) {
  Eigen::MatrixXcd f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto freq = static_cast<double>(k - n / 2);
      // reduce the phase argument first to keep it exact for large products
      const double turns = std::fmod(freq * static_cast<double>(j), static_cast<double>(n)) / static_cast<double>(n);
      f(k, j) = std::polar(scale, -2.0 * std::numbers::pi * turns);
    }
  return f;
}

/// Vertical line mask over the phase-encode (column) axis.
struct SamplingMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> columns;  // 1 = line acquired
  double accel = 1.0;
  double center_fraction = 0.0;
  std::uint64_t seed = 0;

  std::size_t lines() const { return static_cast<std::size_t>(std::count(columns.begin(), columns.end(), 1)); }
  double fraction() const { return static_cast<double>(lines()) / static_cast<double>(width); }
};

/// Central band of round(center_fraction * width) lines plus uniformly random
/// lines elsewhere, round(width / accel) lines in total.
inline SamplingMask make_mask(std::size_t height, std::size_t width, double accel, double center_fraction,
                              std::uint64_t seed) {
  require(height >= 1 && width >= 1, "mask dimensions must be positive");
  require(accel >= 1, "acceleration must be >= 1, got ", accel);
  require(center_fraction >= 0 && center_fraction <= 1, "center_fraction must lie in [0, 1], got ", center_fraction);
  SamplingMask m{height, width, std::vector<std::uint8_t>(width, 0), accel, center_fraction, seed};
  const auto total = static_cast<std::size_t>(std::lround(static_cast<double>(width) / accel));
  const auto center = static_cast<std::size_t>(std::lround(center_fraction * static_cast<double>(width)));
  require(center <= total, "center_fraction ", center_fraction, " needs ", center, " central lines but accel ", accel,
          " allows only ", total);
  const std::size_t first = width / 2 - std::min(width / 2, center / 2);
  for (std::size_t c = first; c < first + center && c < width; ++c) m.columns[c] = 1;
  std::vector<std::size_t> free;
  for (std::size_t c = 0; c < width; ++c)
    if (!m.columns[c]) free.push_back(c);
  Rng rng = substream(seed, {0x3a5c});
  std::shuffle(free.begin(), free.end(), rng);
  for (std::size_t i = 0; i + center < total && i < free.size(); ++i) m.columns[free[i]] = 1;
  return m;
}

/// Smooth Gaussian-bump coil profiles with gentle phase ramps, normalised so
/// that sum_i |S_i|^2 = 1 at every pixel. One coil gives the constant map 1.
inline std::vector<Eigen::VectorXcd> synthesize_coils(std::size_t height, std::size_t width, std::size_t n_coils,
                                                      std::uint64_t seed) {
  require(n_coils >= 1, "need at least one coil");
  const auto n = static_cast<Eigen::Index>(height * width);
  if (n_coils == 1) return {Eigen::VectorXcd::Ones(n)};
  Rng rng = substream(seed, {0xc011});
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  const double spread = 0.6 * std::max(h, w);
  std::vector<Eigen::VectorXcd> coils;
  Eigen::VectorXd energy = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < n_coils; ++i) {
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(i) + 0.25 * unit(rng)) /
                         static_cast<double>(n_coils);
    const double cy = 0.5 * h + 0.6 * h * std::sin(angle);
    const double cx = 0.5 * w + 0.6 * w * std::cos(angle);
    const double ky = 0.5 * unit(rng) / h;
    const double kx = 0.5 * unit(rng) / w;
    Eigen::VectorXcd s(n);
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const double dy = static_cast<double>(r) - cy;
        const double dx = static_cast<double>(c) - cx;
        const double mag = std::exp(-(dx * dx + dy * dy) / (2.0 * spread * spread));
        const double phase = 2.0 * std::numbers::pi * (ky * static_cast<double>(r) + kx * static_cast<double>(c));
        s[static_cast<Eigen::Index>(r * width + c)] = std::polar(mag, phase);
      }
    energy += s.cwiseAbs2();
    coils.push_back(std::move(s));
  }
  const Eigen::VectorXd inv = energy.cwiseSqrt().cwiseInverse();
  for (auto& s : coils) s = s.cwiseProduct(inv.cast<std::complex<double>>());
  return coils;
}

class MultiCoilOperator final : public ComplexOperator {
 public:
  MultiCoilOperator(std::vector<Eigen::VectorXcd> coils, SamplingMask mask, double sigma_n = 0.0,
                    std::uint64_t coil_seed = 0)
      : coils_(std::move(coils)), mask_(std::move(mask)), coil_seed_(coil_seed) {
    require(!coils_.empty(), "need at least one coil");
    const auto n = static_cast<Eigen::Index>(mask_.height * mask_.width);
    Eigen::VectorXd energy = Eigen::VectorXd::Zero(n);
    for (const auto& s : coils_) {
      require(s.size() == n, "coil map length ", s.size(), " does not match image size ", n);
      energy += s.cwiseAbs2();
    }
    require(energy.minCoeff() > 0, "coil sensitivities vanish at some pixel");
    for (std::size_t c = 0; c < mask_.width; ++c)
      if (mask_.columns[c]) sampled_.push_back(static_cast<Eigen::Index>(c));
    require(!sampled_.empty(), "sampling mask selects no lines");
    f_rows_ = centered_dft_matrix(static_cast<Eigen::Index>(mask_.height));
    f_cols_ = centered_dft_matrix(static_cast<Eigen::Index>(mask_.width));
    set_sigma_n(sigma_n);
  }

  std::size_t coil_count() const { return coils_.size(); }
  const SamplingMask& mask() const { return mask_; }
  const std::vector<Eigen::VectorXcd>& coils() const { return coils_; }

  Eigen::Index complex_signal_dim() const override { return static_cast<Eigen::Index>(mask_.height * mask_.width); }
  Eigen::Index complex_measurement_dim() const override {
    return static_cast<Eigen::Index>(coils_.size() * mask_.height * sampled_.size());
  }

  Eigen::VectorXcd forward(const Eigen::VectorXcd& x) const override {
    require(x.size() == complex_signal_dim(), "mri_forward: image length ", x.size(), ", expected ",
            complex_signal_dim());
    const auto h = static_cast<Eigen::Index>(mask_.height);
    const auto lines = static_cast<Eigen::Index>(sampled_.size());
    Eigen::VectorXcd y(complex_measurement_dim());
    Eigen::Index out = 0;
    for (const auto& s : coils_) {
      const Eigen::MatrixXcd k = kspace(s.cwiseProduct(x));
      for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index j = 0; j < lines; ++j) y[out++] = k(r, sampled_[static_cast<std::size_t>(j)]);
    }
    return y;
  }

  Eigen::VectorXcd backward(const Eigen::VectorXcd& y) const override {
    require(y.size() == complex_measurement_dim(), "mri_adjoint: measurement length ", y.size(), ", expected ",
            complex_measurement_dim());
    const auto h = static_cast<Eigen::Index>(mask_.height);
    const auto w = static_cast<Eigen::Index>(mask_.width);
    const auto lines = static_cast<Eigen::Index>(sampled_.size());
    Eigen::VectorXcd x = Eigen::VectorXcd::Zero(h * w);
    Eigen::Index in = 0;
    for (const auto& s : coils_) {
      Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(h, w);
      for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index j = 0; j < lines; ++j) k(r, sampled_[static_cast<std::size_t>(j)]) = y[in++];
      // image = F_rows^H K conj(F_cols)
      Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> img =
          f_rows_.adjoint() * k * f_cols_.conjugate();
      Eigen::Map<const Eigen::VectorXcd> flat(img.data(), img.size());
      x += s.conjugate().cwiseProduct(flat);
    }
    return x;
  }

  nlohmann::json describe() const override {
    return {{"type", "multicoil"},
            {"height", mask_.height},
            {"width", mask_.width},
            {"coils", coils_.size()},
            {"coil_seed", coil_seed_},
            {"accel", mask_.accel},
            {"alpha", mask_.fraction()},
            {"center_fraction", mask_.center_fraction},
            {"mask_seed", mask_.seed},
            {"sigma_n", sigma_n_}};
  }

 private:
  /// Full centred k-space of a row-major image.
  Eigen::MatrixXcd kspace(const Eigen::VectorXcd& image) const {
    const auto h = static_cast<Eigen::Index>(mask_.height);
    const auto w = static_cast<Eigen::Index>(mask_.width);
    Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> img(
        image.data(), h, w);
    return f_rows_ * img * f_cols_.transpose();
  }

  std::vector<Eigen::VectorXcd> coils_;
  SamplingMask mask_;
  std::uint64_t coil_seed_;
  std::vector<Eigen::Index> sampled_;
  Eigen::MatrixXcd f_rows_;
  Eigen::MatrixXcd f_cols_;
};

}  // namespace sscore
