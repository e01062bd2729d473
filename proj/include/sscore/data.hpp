#pragma once

// Synthetic priors with closed-form oracles, toy channel / image generators,
// and the noisy training sets built from them.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sscore/binary_io.hpp"
#include "sscore/error.hpp"
#include "sscore/operators.hpp"
#include "sscore/random.hpp"
#include "sscore/score_net.hpp"

namespace sscore {

enum class PriorKind : std::uint32_t { gaussian = 1, gmm = 2, toy_channel = 3, toy_image = 4 };

inline std::string_view to_string(PriorKind k) {
  switch (k) {
    case PriorKind::gaussian: return "gaussian";
    case PriorKind::gmm: return "gmm";
    case PriorKind::toy_channel: return "toy_channel";
    case PriorKind::toy_image: return "toy_image";
  }
  return "?";
}

struct GaussianPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct GmmPrior {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

/// H = sum_p g_p a_r(theta_p) a_t(phi_p)^H with unit-modulus ULA steering
/// vectors and g_p ~ CN(0, 1/paths): every entry has unit mean power.
struct ToyChannelPrior {
  std::size_t n_r = 4;
  std::size_t n_t = 16;
  std::size_t paths = 3;
};

/// Smooth complex images built from Gaussian blobs under a slowly varying
/// phase, scaled by the low-resolution 95th-percentile rule.
struct ToyImagePrior {
  std::size_t height = 16;
  std::size_t width = 16;
  double smoothness = 0.15;  // blob width relative to the image side
  std::size_t blobs = 6;
};

class SyntheticPrior {
 public:
  using Variant = std::variant<GaussianPrior, GmmPrior, ToyChannelPrior, ToyImagePrior>;

  static SyntheticPrior gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    require(mean.size() >= 1 && cov.rows() == mean.size() && cov.cols() == mean.size(),
            "gaussian prior: covariance must be ", mean.size(), "x", mean.size());
    require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()),
            "gaussian prior: covariance is not symmetric");
    require(cov.llt().info() == Eigen::Success, "gaussian prior: covariance is not positive definite");
    return SyntheticPrior(GaussianPrior{std::move(mean), std::move(cov)});
  }

  static SyntheticPrior gmm(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                            std::vector<Eigen::MatrixXd> covs) {
    require(!weights.empty() && weights.size() == means.size() && weights.size() == covs.size(),
            "gmm prior: weights, means and covariances must have equal nonzero counts");
    double total = 0.0;
    for (double w : weights) {
      require(w > 0, "gmm prior: weights must be positive");
      total += w;
    }
    require(std::abs(total - 1.0) < 1e-9, "gmm prior: weights sum to ", total, ", expected 1");
    const auto d = means.front().size();
    for (std::size_t k = 0; k < means.size(); ++k) {
      require(means[k].size() == d && covs[k].rows() == d && covs[k].cols() == d, "gmm prior: component ", k,
              " has inconsistent dimensions");
      require(covs[k].llt().info() == Eigen::Success, "gmm prior: covariance ", k, " is not positive definite");
    }
    return SyntheticPrior(GmmPrior{std::move(weights), std::move(means), std::move(covs)});
  }

  static SyntheticPrior toy_channel(std::size_t n_r, std::size_t n_t, std::size_t paths = 3) {
    require(n_r >= 1 && n_t >= 1 && paths >= 1, "toy channel: antenna and path counts must be positive");
    return SyntheticPrior(ToyChannelPrior{n_r, n_t, paths});
  }

  static SyntheticPrior toy_image(std::size_t height, std::size_t width, double smoothness = 0.15,
                                  std::size_t blobs = 6) {
    require(height >= 2 && width >= 2, "toy image: dimensions must be >= 2");
    require(smoothness > 0, "toy image: smoothness must be positive");
    require(blobs >= 1, "toy image: need at least one blob");
    return SyntheticPrior(ToyImagePrior{height, width, smoothness, blobs});
  }

  PriorKind kind() const { return static_cast<PriorKind>(value_.index() + 1); }
  const Variant& value() const { return value_; }
  bool is_complex() const { return kind() == PriorKind::toy_channel || kind() == PriorKind::toy_image; }

  /// Natural dimensions (vector length, Nr x Nt, or H x W).
  std::vector<std::uint32_t> dims() const {
    return std::visit(
        [](const auto& p) -> std::vector<std::uint32_t> {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianPrior>) return {static_cast<std::uint32_t>(p.mean.size())};
          if constexpr (std::is_same_v<T, GmmPrior>) return {static_cast<std::uint32_t>(p.means.front().size())};
          if constexpr (std::is_same_v<T, ToyChannelPrior>)
            return {static_cast<std::uint32_t>(p.n_r), static_cast<std::uint32_t>(p.n_t)};
          if constexpr (std::is_same_v<T, ToyImagePrior>)
            return {static_cast<std::uint32_t>(p.height), static_cast<std::uint32_t>(p.width)};
        },
        value_);
  }

  /// Length of one sample as a real (packed) vector.
  Eigen::Index sample_dim() const {
    Eigen::Index n = 1;
    for (auto d : dims()) n *= static_cast<Eigen::Index>(d);
    return is_complex() ? 2 * n : n;
  }

 private:
  explicit SyntheticPrior(Variant v) : value_(std::move(v)) {}
  Variant value_;
};

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

inline Eigen::VectorXcd steering_vector(std::size_t n, double angle) {
  Eigen::VectorXcd a(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k)
    a[static_cast<Eigen::Index>(k)] = std::polar(1.0, std::numbers::pi * static_cast<double>(k) * std::sin(angle));
  return a;
}

inline Eigen::VectorXcd draw_channel(const ToyChannelPrior& p, Rng& rng) {
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 2, std::numbers::pi / 2);
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(p.n_r), static_cast<Eigen::Index>(p.n_t));
  for (std::size_t k = 0; k < p.paths; ++k) {
    const auto gain = complex_normal_vector(rng, 1, 1.0 / static_cast<double>(p.paths))[0];
    const auto ar = steering_vector(p.n_r, angle(rng));
    const auto at = steering_vector(p.n_t, angle(rng));
    h += gain * ar * at.adjoint();
  }
  return Eigen::Map<const Eigen::VectorXcd>(h.data(), h.size());
}

}  // namespace detail

/// Scale that maps an image to unit 95th-percentile magnitude of its
/// low-resolution reconstruction (central `window` x `window` k-space block).
/// For unit-energy coil maps the coil root-sum-of-squares of that
/// reconstruction equals its magnitude, so no coils are needed here.
inline double low_resolution_percentile(const Eigen::VectorXcd& image, std::size_t height, std::size_t width,
                                        std::size_t window = 24, double percentile = 0.95) {
  const auto h = static_cast<Eigen::Index>(height);
  const auto w = static_cast<Eigen::Index>(width);
  const Eigen::MatrixXcd fr = centered_dft_matrix(h);
  const Eigen::MatrixXcd fc = centered_dft_matrix(w);
  Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> img(
      image.data(), h, w);
  Eigen::MatrixXcd k = fr * img * fc.transpose();
  const auto wh = std::min<Eigen::Index>(static_cast<Eigen::Index>(window), h);
  const auto ww = std::min<Eigen::Index>(static_cast<Eigen::Index>(window), w);
  Eigen::MatrixXcd low = Eigen::MatrixXcd::Zero(h, w);
  low.block(h / 2 - wh / 2, w / 2 - ww / 2, wh, ww) = k.block(h / 2 - wh / 2, w / 2 - ww / 2, wh, ww);
  const Eigen::MatrixXcd recon = fr.adjoint() * low * fc.conjugate();
  std::vector<double> mags(static_cast<std::size_t>(recon.size()));
  for (Eigen::Index i = 0; i < recon.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(recon.data()[i]);
  std::sort(mags.begin(), mags.end());
  const auto idx = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(mags.size() - 1)));
  return mags[idx];
}

namespace detail {

inline Eigen::VectorXcd draw_image(const ToyImagePrior& p, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = static_cast<double>(p.height);
  const double w = static_cast<double>(p.width);
  Eigen::VectorXcd img = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(p.height * p.width));
  for (std::size_t b = 0; b < p.blobs; ++b) {
    const double cy = (0.2 + 0.6 * unit(rng)) * h;
    const double cx = (0.2 + 0.6 * unit(rng)) * w;
    const double s = p.smoothness * std::max(h, w) * (0.5 + unit(rng));
    const double amp = 0.5 + unit(rng);
    for (std::size_t r = 0; r < p.height; ++r)
      for (std::size_t c = 0; c < p.width; ++c) {
        const double dy = static_cast<double>(r) - cy;
        const double dx = static_cast<double>(c) - cx;
        img[static_cast<Eigen::Index>(r * p.width + c)] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
      }
  }
  const double ky = (unit(rng) - 0.5) / h;
  const double kx = (unit(rng) - 0.5) / w;
  const double offset = 2.0 * std::numbers::pi * unit(rng);
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) {
      const double phase =
          offset + 2.0 * std::numbers::pi * (ky * static_cast<double>(r) + kx * static_cast<double>(c));
      img[static_cast<Eigen::Index>(r * p.width + c)] *= std::polar(1.0, phase);
    }
  return img / low_resolution_percentile(img, p.height, p.width);
}

}  // namespace detail

/// n i.i.d. samples, one per row (complex priors packed). Sample i only
/// depends on (seed, i).
inline Eigen::MatrixXd sample_prior(const SyntheticPrior& prior, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "sample_prior: need at least one sample");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), prior.sample_dim());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = substream(seed, {0x9a1e, i});
    const auto row = static_cast<Eigen::Index>(i);
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, GaussianPrior>) {
            const Eigen::MatrixXd l = p.cov.llt().matrixL();
            out.row(row) = (p.mean + l * normal_vector(rng, p.mean.size())).transpose();
          } else if constexpr (std::is_same_v<T, GmmPrior>) {
            std::discrete_distribution<std::size_t> pick(p.weights.begin(), p.weights.end());
            const auto k = pick(rng);
            const Eigen::MatrixXd l = p.covs[k].llt().matrixL();
            out.row(row) = (p.means[k] + l * normal_vector(rng, p.means[k].size())).transpose();
          } else if constexpr (std::is_same_v<T, ToyChannelPrior>) {
            out.row(row) = pack(detail::draw_channel(p, rng)).transpose();
          } else {
            out.row(row) = pack(detail::draw_image(p, rng)).transpose();
          }
        },
        prior.value());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form oracles for Gaussian and Gaussian-mixture priors perturbed by
// N(0, sigma^2 I).

namespace detail {

struct ComponentTerms {
  std::vector<double> log_weight;         // log w_k + log N(x; mu_k, C_k + sigma^2 I)
  std::vector<Eigen::VectorXd> solve;     // (C_k + sigma^2 I)^{-1} (x - mu_k)
};

inline ComponentTerms component_terms(const std::vector<double>& weights, const std::vector<Eigen::VectorXd>& means,
                                      const std::vector<Eigen::MatrixXd>& covs, const Eigen::VectorXd& x,
                                      double sigma) {
  ComponentTerms t;
  const auto d = x.size();
  for (std::size_t k = 0; k < means.size(); ++k) {
    require(means[k].size() == d, "oracle: input length ", d, " does not match prior dimension ", means[k].size());
    const Eigen::MatrixXd c = covs[k] + sigma * sigma * Eigen::MatrixXd::Identity(d, d);
    const Eigen::LLT<Eigen::MatrixXd> llt(c);
    const Eigen::VectorXd diff = x - means[k];
    const Eigen::VectorXd sol = llt.solve(diff);
    const Eigen::MatrixXd l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    t.log_weight.push_back(std::log(weights[k]) - 0.5 * diff.dot(sol) - 0.5 * logdet -
                           0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
    t.solve.push_back(sol);
  }
  return t;
}

inline std::vector<double> responsibilities(const std::vector<double>& log_weight) {
  const double top = *std::max_element(log_weight.begin(), log_weight.end());
  std::vector<double> r(log_weight.size());
  double total = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) total += (r[k] = std::exp(log_weight[k] - top));
  for (auto& v : r) v /= total;
  return r;
}

inline void require_analytic(const SyntheticPrior& prior) {
  require(prior.kind() == PriorKind::gaussian || prior.kind() == PriorKind::gmm, "prior kind ",
          to_string(prior.kind()), " has no closed-form oracle");
}

}  // namespace detail

/// grad log of the prior convolved with N(0, sigma^2 I), at x.
inline Eigen::VectorXd analytic_score(const SyntheticPrior& prior, const Eigen::VectorXd& x, double sigma) {
  detail::require_analytic(prior);
  require(sigma >= 0, "noise level must be non-negative, got ", sigma);
  if (const auto* g = std::get_if<GaussianPrior>(&prior.value())) {
    require(x.size() == g->mean.size(), "oracle: input length ", x.size(), " does not match prior dimension ",
            g->mean.size());
    const Eigen::MatrixXd c = g->cov + sigma * sigma * Eigen::MatrixXd::Identity(x.size(), x.size());
    return -c.llt().solve(x - g->mean);
  }
  const auto& m = std::get<GmmPrior>(prior.value());
  const auto t = detail::component_terms(m.weights, m.means, m.covs, x, sigma);
  const auto r = detail::responsibilities(t.log_weight);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(x.size());
  for (std::size_t k = 0; k < r.size(); ++k) s -= r[k] * t.solve[k];
  return s;
}

/// log density of the prior convolved with N(0, sigma^2 I).
inline double analytic_log_density(const SyntheticPrior& prior, const Eigen::VectorXd& x, double sigma) {
  detail::require_analytic(prior);
  if (const auto* g = std::get_if<GaussianPrior>(&prior.value()))
    return detail::component_terms({1.0}, {g->mean}, {g->cov}, x, sigma).log_weight[0];
  const auto& m = std::get<GmmPrior>(prior.value());
  const auto t = detail::component_terms(m.weights, m.means, m.covs, x, sigma);
  const double top = *std::max_element(t.log_weight.begin(), t.log_weight.end());
  double total = 0.0;
  for (double lw : t.log_weight) total += std::exp(lw - top);
  return top + std::log(total);
}

/// E[x | x + w = x_noisy] for w ~ N(0, sigma_w^2 I).
inline Eigen::VectorXd analytic_mmse(const SyntheticPrior& prior, const Eigen::VectorXd& x_noisy, double sigma_w) {
  detail::require_analytic(prior);
  require(sigma_w >= 0, "noise level must be non-negative, got ", sigma_w);
  if (const auto* g = std::get_if<GaussianPrior>(&prior.value())) {
    require(x_noisy.size() == g->mean.size(), "oracle: input length ", x_noisy.size(),
            " does not match prior dimension ", g->mean.size());
    const Eigen::MatrixXd c = g->cov + sigma_w * sigma_w * Eigen::MatrixXd::Identity(x_noisy.size(), x_noisy.size());
    return g->mean + g->cov * c.llt().solve(x_noisy - g->mean);
  }
  const auto& m = std::get<GmmPrior>(prior.value());
  const auto t = detail::component_terms(m.weights, m.means, m.covs, x_noisy, sigma_w);
  const auto r = detail::responsibilities(t.log_weight);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x_noisy.size());
  for (std::size_t k = 0; k < r.size(); ++k) out += r[k] * (m.means[k] + m.covs[k] * t.solve[k]);
  return out;
}

inline Eigen::MatrixXd analytic_score_rows(const SyntheticPrior& prior, const Eigen::MatrixXd& x, double sigma) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out.row(r) = analytic_score(prior, x.row(r).transpose(), sigma).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Noisy datasets

/// sigma_w for a training SNR in dB on unit-power data (SNR = 1 / sigma_w^2);
/// +inf dB gives a noise-free set.
inline double noise_std_for_snr(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 20.0);
}

struct NoisyDataset {
  PriorKind kind = PriorKind::gaussian;
  std::vector<std::uint32_t> dims;
  bool complex = false;
  Eigen::MatrixXd noisy;
  std::optional<Eigen::MatrixXd> clean;  // held out for evaluation only
  double sigma_w = 0.0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(noisy.rows()); }
  Eigen::Index sample_dim() const { return noisy.cols(); }

  /// Noise std per real coordinate seen by the network: complex noise
  /// CN(0, sigma_w^2) puts sigma_w^2 / 2 on each of the real and imaginary parts.
  double real_noise_std() const { return complex ? sigma_w / std::sqrt(2.0) : sigma_w; }

  const Eigen::MatrixXd& clean_samples() const {
    require(clean.has_value(), "dataset was exported noisy-only; clean samples are unavailable");
    return *clean;
  }
};

/// x_noisy = x + w with one independent noise draw per sample: CN(0, sigma_w^2 I)
/// for complex data, N(0, sigma_w^2 I) for real data.
inline NoisyDataset corrupt(const Eigen::MatrixXd& clean, const SyntheticPrior& prior, double snr_db,
                            std::uint64_t seed) {
  require(clean.cols() == prior.sample_dim(), "corrupt: sample width ", clean.cols(), " does not match prior (",
          prior.sample_dim(), ")");
  NoisyDataset ds;
  ds.kind = prior.kind();
  ds.dims = prior.dims();
  ds.complex = prior.is_complex();
  ds.sigma_w = noise_std_for_snr(snr_db);
  ds.snr_db = snr_db;
  ds.seed = seed;
  ds.clean = clean;
  ds.noisy = clean;
  if (ds.sigma_w > 0) {
    for (Eigen::Index i = 0; i < clean.rows(); ++i) {
      Rng rng = substream(seed, {0x7015e, static_cast<std::uint64_t>(i)});
      const Eigen::VectorXd w = ds.complex ? pack(complex_normal_vector(rng, clean.cols() / 2, ds.sigma_w * ds.sigma_w))
                                           : normal_vector(rng, clean.cols(), ds.sigma_w);
      ds.noisy.row(i) += w.transpose();
    }
  }
  return ds;
}

struct DatasetSplit {
  NoisyDataset train;
  NoisyDataset test;
};

/// Last round(test_fraction * n) samples form the held-out test split.
inline DatasetSplit split_dataset(const NoisyDataset& ds, double test_fraction = 0.1) {
  require(test_fraction > 0 && test_fraction < 1, "test fraction must lie in (0, 1)");
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto n_test = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(test_fraction * n)));
  require(n_test < n, "dataset too small to split");
  DatasetSplit s{ds, ds};
  s.train.noisy = ds.noisy.topRows(n - n_test);
  s.test.noisy = ds.noisy.bottomRows(n_test);
  if (ds.clean) {
    s.train.clean = ds.clean->topRows(n - n_test);
    s.test.clean = ds.clean->bottomRows(n_test);
  }
  return s;
}

// Dataset file: "SSDS", u32 version, u32 kind, u32 flags (bit 0 noisy-only,
// bit 1 complex), u32 ndims, u32 dims[ndims], u32 sample_dim, u64 count,
// f64 sigma_w, f64 snr_db, u64 seed, f64 noisy[count * sample_dim], then the
// clean payload of the same size unless noisy-only. Little-endian.

inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const NoisyDataset& ds, const std::filesystem::path& path, bool noisy_only = false) {
  const bool has_clean = ds.clean.has_value() && !noisy_only;
  io::Writer w;
  w.magic("SSDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.kind));
  w.u32((has_clean ? 0u : 1u) | (ds.complex ? 2u : 0u));
  w.u32(static_cast<std::uint32_t>(ds.dims.size()));
  for (auto d : ds.dims) w.u32(d);
  w.u32(static_cast<std::uint32_t>(ds.sample_dim()));
  w.u64(ds.size());
  w.f64(ds.sigma_w);
  w.f64(ds.snr_db);
  w.u64(ds.seed);
  auto put_rows = [&](const Eigen::MatrixXd& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    w.f64s(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
  };
  put_rows(ds.noisy);
  if (has_clean) put_rows(*ds.clean);
  w.save(path);
}

inline NoisyDataset load_dataset(const std::filesystem::path& path) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic("SSDS");
  const auto version = r.u32();
  require(version == kDatasetVersion, path.string(), ": unsupported dataset version ", version, " (expected ",
          kDatasetVersion, ")");
  NoisyDataset ds;
  const auto kind = r.u32();
  require(kind >= 1 && kind <= 4, path.string(), ": unknown prior kind tag ", kind);
  ds.kind = static_cast<PriorKind>(kind);
  const auto flags = r.u32();
  require(flags < 4, path.string(), ": unknown flags ", flags);
  ds.complex = (flags & 2u) != 0;
  const auto ndims = r.u32();
  require(ndims >= 1 && ndims <= 8, path.string(), ": implausible dimension count ", ndims);
  for (std::uint32_t i = 0; i < ndims; ++i) ds.dims.push_back(r.u32());
  const auto dim = r.u32();
  const auto count = r.u64();
  require(dim > 0 && count > 0, path.string(), ": empty dataset header");
  ds.sigma_w = r.f64();
  ds.snr_db = r.f64();
  ds.seed = r.u64();
  auto get_rows = [&]() {
    const auto values = r.f64s(static_cast<std::size_t>(count) * dim);
    return Eigen::MatrixXd(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim)));
  };
  ds.noisy = get_rows();
  if (!(flags & 1u)) ds.clean = get_rows();
  r.expect_end();
  return ds;
}

}  // namespace sscore
