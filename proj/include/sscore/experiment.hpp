#pragma once

// End-to-end runs: dataset construction, training of each mode, denoising and
// reconstruction evaluation, and the files a run leaves behind.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "sscore/binary_io.hpp"
#include "sscore/config.hpp"
#include "sscore/losses.hpp"
#include "sscore/data.hpp"
#include "sscore/metrics.hpp"
#include "sscore/operators.hpp"
#include "sscore/parallel.hpp"
#include "sscore/samplers.hpp"
#include "sscore/schedules.hpp"
#include "sscore/score_net.hpp"
#include "sscore/train.hpp"

namespace sscore {

// Stream tags for everything random in a run. Each named seed below is
// substream(cfg.seed, {tag}) drawn once.
enum class SeedTag : std::uint64_t {
  data = 0xda7a,
  noise = 0x0015e,
  init = 0x1417,
  train = 0x7a17,
  ladder = 0x1add,
  pilots = 0x9170,
  mask = 0x3a5,
  coils = 0xc01,
  measurement = 0x3ea5,
  sampler = 0x5a3,
};

inline std::uint64_t derive_seed(std::uint64_t seed, SeedTag tag, std::uint64_t index = 0) {
  Rng rng = substream(seed, {static_cast<std::uint64_t>(tag), index});
  return rng();
}

inline SyntheticPrior make_prior(const ExperimentConfig& c) {
  if (c.prior == "gaussian") {
    require(c.gaussian_dim >= 1, "config key gaussian.dim: must be >= 1");
    const auto d = static_cast<Eigen::Index>(c.gaussian_dim);
    return SyntheticPrior::gaussian(Eigen::VectorXd::Zero(d), c.gaussian_variance * Eigen::MatrixXd::Identity(d, d));
  }
  if (c.prior == "gmm") {
    require(c.gmm_components >= 1 && c.gmm_dim >= 2, "config keys gmm.components / gmm.dim: need >= 1 and >= 2");
    const auto d = static_cast<Eigen::Index>(c.gmm_dim);
    std::vector<double> w(c.gmm_components, 1.0 / static_cast<double>(c.gmm_components));
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    // means evenly spaced on a circle in the first two coordinates
    for (std::size_t k = 0; k < c.gmm_components; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(c.gmm_components);
      Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
      m[0] = c.gmm_radius * std::cos(angle);
      m[1] = c.gmm_radius * std::sin(angle);
      means.push_back(m);
      covs.push_back(c.gmm_variance * Eigen::MatrixXd::Identity(d, d));
    }
    return SyntheticPrior::gmm(std::move(w), std::move(means), std::move(covs));
  }
  if (c.prior == "toy_channel") return SyntheticPrior::toy_channel(c.channel_n_r, c.channel_n_t, c.channel_paths);
  return SyntheticPrior::toy_image(c.image_height, c.image_width, c.image_smoothness, c.image_blobs);
}

/// Full noisy dataset (clean kept alongside for evaluation).
inline NoisyDataset build_dataset(const ExperimentConfig& c) {
  const auto prior = make_prior(c);
  const Eigen::MatrixXd clean = sample_prior(prior, c.samples, derive_seed(c.seed, SeedTag::data));
  return corrupt(clean, prior, c.snr_w_db, derive_seed(c.seed, SeedTag::noise));
}

inline NoiseSchedule make_schedule(const ExperimentConfig& c, const Eigen::MatrixXd& train_rows) {
  double sigma_max = c.sigma_max;
  if (sigma_max == 0.0) {
    Rng rng = substream(c.seed, {static_cast<std::uint64_t>(SeedTag::ladder)});
    sigma_max = suggest_sigma_max(train_rows, rng);
  }
  return NoiseSchedule(c.sigma_min, sigma_max, c.levels, c.alpha0, c.beta);
}

struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path dataset() const { return dir / "data.ssds"; }
  std::filesystem::path noisy_export() const { return dir / "train_noisy.ssds"; }
  std::filesystem::path weights(TrainMode m) const { return dir / ("weights_" + std::string(to_string(m)) + ".sscr"); }
  std::filesystem::path train_log(TrainMode m) const {
    return dir / ("train_log_" + std::string(to_string(m)) + ".csv");
  }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path config() const { return dir / "config.txt"; }
};

struct TrainedModel {
  TrainMode mode = TrainMode::supervised_dsm;
  ScoreNetwork net;
  TrainingLog log;
  double lambda = 0.0;
};

/// Rows a mode is allowed to see: clean for supervised, noisy otherwise.
inline Eigen::MatrixXd training_rows(const ExperimentConfig& c, const NoisyDataset& train_split, TrainMode mode) {
  const Eigen::MatrixXd& rows = mode == TrainMode::supervised_dsm ? train_split.clean_samples() : train_split.noisy;
  if (c.train_subset == 0 || c.train_subset >= static_cast<std::size_t>(rows.rows())) return rows;
  return rows.topRows(static_cast<Eigen::Index>(c.train_subset));
}

inline TrainedModel train_model(const ExperimentConfig& c, const NoisyDataset& train_split,
                                const NoiseSchedule& schedule, TrainMode mode) {
  TrainedModel m;
  m.mode = mode;
  const Eigen::MatrixXd rows = training_rows(c, train_split, mode);
  m.net = ScoreNetwork::init(static_cast<std::size_t>(rows.cols()), c.widths, derive_seed(c.seed, SeedTag::init),
                             {.activation = c.activation, .sigma_input = c.sigma_input});
  LossConfig loss{.lambda = c.lambda,
                  .epsilon = c.epsilon,
                  .sigma_w = train_split.real_noise_std(),
                  .detach_denoiser_in_dsm = c.detach_denoiser};
  TrainOptions opts{.mode = mode,
                    .epochs = c.epochs,
                    .batch_size = c.batch_size,
                    .seed = derive_seed(c.seed, SeedTag::train),
                    .adam = {.learning_rate = c.learning_rate},
                    .auto_lambda = c.auto_lambda,
                    .cosine_decay = c.cosine_decay};
  m.log = train(m.net, rows, schedule, loss, opts);
  m.lambda = m.log.empty() ? 0.0 : m.log.back().lambda;
  return m;
}

inline ScoreNetwork load_model(const RunPaths& paths, TrainMode mode, Activation activation) {
  const auto p = paths.weights(mode);
  require(std::filesystem::exists(p), "missing weights file ", p.string(), " (run `train --mode ", to_string(mode),
          "` first)");
  return read_weights(p, activation);
}

// ---------------------------------------------------------------------------
// Evaluation

struct ModelRef {
  TrainMode mode;
  const ScoreNetwork* net;
};

/// Tweedie denoising of the held-out noisy samples; NRMSE per mode.
inline MetricsTable run_denoising_eval(const ExperimentConfig& c, const NoisyDataset& test_split,
                                       const std::vector<ModelRef>& models) {
  const Eigen::MatrixXd& clean = test_split.clean_samples();
  const double sw = test_split.real_noise_std();
  MetricsTable table;
  for (const auto& m : models) {
    const Eigen::MatrixXd est = sw > 0 ? tweedie_denoise_values(*m.net, test_split.noisy, sw) : test_split.noisy;
    std::vector<double> per(static_cast<std::size_t>(clean.rows()));
    parallel_for(per.size(), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      per[i] = nrmse(est.row(r).transpose(), clean.row(r).transpose());
    });
    const auto s = summarize(per);
    table.push_back({std::string(to_string(m.mode)), c.snr_w_db, std::numeric_limits<double>::quiet_NaN(), "nrmse",
                     s.mean, s.std, s.n, c.seed});
  }
  return table;
}

/// NMSE row: mean is 10 log10 of the mean linear NMSE, std is over per-sample dB.
inline MetricRow nmse_row(const std::string& mode, const ExperimentConfig& c, double axis,
                          const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  std::vector<double> db(static_cast<std::size_t>(truth.rows()));
  double linear = 0.0;
  for (Eigen::Index r = 0; r < truth.rows(); ++r) {
    db[static_cast<std::size_t>(r)] = nmse_db(est.row(r).transpose(), truth.row(r).transpose());
    linear += (est.row(r) - truth.row(r)).squaredNorm() / truth.row(r).squaredNorm();
  }
  linear /= static_cast<double>(truth.rows());
  const auto s = summarize(db);
  return {mode, c.snr_w_db, axis, "nmse_db", linear > 0 ? 10.0 * std::log10(linear) : -INFINITY, s.std, s.n, c.seed};
}

inline MetricRow nrmse_row(const std::string& mode, const ExperimentConfig& c, double axis, const Eigen::MatrixXd& est,
                           const Eigen::MatrixXd& truth) {
  std::vector<double> v(static_cast<std::size_t>(truth.rows()));
  for (Eigen::Index r = 0; r < truth.rows(); ++r)
    v[static_cast<std::size_t>(r)] = nrmse(est.row(r).transpose(), truth.row(r).transpose());
  const auto s = summarize(v);
  return {mode, c.snr_w_db, axis, "nrmse", s.mean, s.std, s.n, c.seed};
}

inline SamplerConfig sampler_config(const ExperimentConfig& c, const NoiseSchedule& schedule, std::uint64_t seed) {
  return {.schedule = schedule,
          .steps_per_level = c.steps_per_level,
          .seed = seed,
          .final_denoise = c.final_denoise,
          .quench_final_level = c.quench_final_level,
          .average = c.average};
}

inline std::unique_ptr<LinearOperator> make_operator(const ExperimentConfig& c, double pilot_snr_db) {
  if (c.op == "pilot") {
    require(c.prior == "toy_channel", "operator.kind = pilot needs prior.kind = toy_channel");
    const auto n_p = pilots_for_density(c.channel_n_t, c.alpha);
    return std::make_unique<PilotOperator>(make_pilot_operator(c.channel_n_r, c.channel_n_t, n_p,
                                                               derive_seed(c.seed, SeedTag::pilots),
                                                               pilot_noise_std(c.channel_n_t, pilot_snr_db)));
  }
  require(c.prior == "toy_image", "operator.kind = multicoil needs prior.kind = toy_image");
  auto coils = synthesize_coils(c.image_height, c.image_width, c.coils, derive_seed(c.seed, SeedTag::coils));
  auto mask = make_mask(c.image_height, c.image_width, c.accel, c.center_fraction, derive_seed(c.seed, SeedTag::mask));
  return std::make_unique<MultiCoilOperator>(std::move(coils), std::move(mask), c.mri_sigma_n,
                                             derive_seed(c.seed, SeedTag::coils));
}

/// Sweep points: pilot SNRs for channels, the single acceleration for imaging.
inline std::vector<double> reconstruction_axis(const ExperimentConfig& c) {
  if (c.op == "pilot") return c.pilot_snr_db;
  return {c.accel};
}

struct ReconstructionOutput {
  MetricsTable table;
  /// Estimates per (axis index, mode) for the tensor files; "linear" included.
  std::map<std::pair<std::size_t, std::string>, Eigen::MatrixXd> estimates;
};

/// Posterior-sampling reconstructions of the first cfg.eval_samples test
/// signals, for every mode plus the prior-free "linear" baseline.
inline ReconstructionOutput run_reconstruction_eval(const ExperimentConfig& c, const NoisyDataset& test_split,
                                                    const NoiseSchedule& schedule,
                                                    const std::vector<ModelRef>& models) {
  const Eigen::MatrixXd& all = test_split.clean_samples();
  const auto n = std::min<Eigen::Index>(all.rows(), static_cast<Eigen::Index>(c.eval_samples));
  require(n >= 1, "no test samples to reconstruct");
  const Eigen::MatrixXd truth = all.topRows(n);
  const bool channel = c.op == "pilot";
  ReconstructionOutput out;
  const auto axis = reconstruction_axis(c);
  for (std::size_t a = 0; a < axis.size(); ++a) {
    const auto op = make_operator(c, axis[a]);
    std::vector<Eigen::VectorXd> ys(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      Rng rng = substream(c.seed, {static_cast<std::uint64_t>(SeedTag::measurement), a, static_cast<std::uint64_t>(i)});
      ys[static_cast<std::size_t>(i)] = op->measure(truth.row(i).transpose(), rng);
    }
    Eigen::MatrixXd linear(n, truth.cols());
    for (Eigen::Index i = 0; i < n; ++i) linear.row(i) = op->linear_estimate(ys[static_cast<std::size_t>(i)]).transpose();
    auto row_for = [&](const std::string& mode, const Eigen::MatrixXd& est) {
      return channel ? nmse_row(mode, c, axis[a], est, truth) : nrmse_row(mode, c, axis[a], est, truth);
    };
    out.table.push_back(row_for("linear", linear));
    out.estimates[{a, "linear"}] = linear;
    // every mode sees the same chain noise at a given sweep point
    const auto scfg = sampler_config(c, schedule, derive_seed(c.seed, SeedTag::sampler, a));
    for (const auto& m : models) {
      const Eigen::MatrixXd est = posterior_sample(network_score(*m.net), *op, ys, scfg);
      out.table.push_back(row_for(std::string(to_string(m.mode)), est));
      out.estimates[{a, std::string(to_string(m.mode))}] = est;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check: reverse mode vs central differences on a [16,16] network.

struct GradcheckResult {
  std::string loss;
  double max_rel_error = 0.0;
};

inline double gradient_rel_error(std::span<const double> a, std::span<const double> b) {
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  const double floor = 1e-6 * std::max(1.0, scale);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  return worst;
}

inline std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, Eigen::Index dim = 8, Eigen::Index rows = 4,
                                                  double h = 1e-5) {
  ScoreNetwork net = ScoreNetwork::init(static_cast<std::size_t>(dim), {16, 16}, seed);
  Rng rng = substream(seed, {0x9c});
  Eigen::MatrixXd x(rows, dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  const NoiseSchedule schedule(0.05, 2.0, 10);
  const BatchDraw draw = draw_batch(schedule, rows, dim, rng);
  const LossConfig cfg{.lambda = 0.7, .epsilon = 1e-3, .sigma_w = 0.5};
  const Tensor xt = Tensor::from_matrix(x);
  const std::vector<std::pair<std::string, std::function<Tensor()>>> losses = {
      {"dsm", [&] { return dsm_loss(net, xt, draw.sigmas, draw.z); }},
      {"sure", [&] { return sure_loss(net, xt, cfg.sigma_w, draw.n, cfg.epsilon); }},
      {"sure_score", [&] { return sure_score_loss(net, xt, draw.sigmas, draw.z, draw.n, cfg); }},
  };
  const auto params = net.parameters();
  std::vector<GradcheckResult> out;
  for (const auto& [name, f] : losses) {
    const auto grads = backward(f());
    const auto fd = finite_difference_gradient(f, params, h);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto g = grads.of(params[k]);
      worst = std::max(worst, gradient_rel_error(g, fd[k]));
    }
    out.push_back({name, worst});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor files: "SSTN", u32 version, u32 rank, u64 dims[rank], f64 values
// (row-major), little-endian; a JSON sidecar sits next to each file.

inline constexpr std::uint32_t kTensorVersion = 1;

inline void save_tensor(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  io::Writer w;
  w.magic("SSTN");
  w.u32(kTensorVersion);
  w.u32(2);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  w.f64s(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
  w.save(path);
}

inline Eigen::MatrixXd load_tensor(const std::filesystem::path& path) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic("SSTN");
  const auto version = r.u32();
  require(version == kTensorVersion, path.string(), ": unsupported tensor version ", version);
  const auto rank = r.u32();
  require(rank == 2, path.string(), ": expected a rank-2 tensor, found rank ", rank);
  const auto rows = r.u64();
  const auto cols = r.u64();
  const auto values = r.f64s(static_cast<std::size_t>(rows * cols));
  r.expect_end();
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline nlohmann::json schedule_json(const NoiseSchedule& s) {
  return {{"sigma_min", s.sigma_min()}, {"sigma_max", s.sigma_max()}, {"levels", s.size()},
          {"alpha0", s.alpha0()},       {"beta", s.beta()}};
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
  out << j.dump(2) << '\n';
}

/// Manifest: the full config plus every derived seed, enough to regenerate
/// each CSV value.
inline nlohmann::json manifest_json(const ExperimentConfig& c, const std::string& command,
                                    const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& f : detail::config_fields()) cfg[f.key] = f.get(c);
  nlohmann::json seeds = {{"data", derive_seed(c.seed, SeedTag::data)},
                          {"noise", derive_seed(c.seed, SeedTag::noise)},
                          {"init", derive_seed(c.seed, SeedTag::init)},
                          {"train", derive_seed(c.seed, SeedTag::train)},
                          {"pilots", derive_seed(c.seed, SeedTag::pilots)},
                          {"mask", derive_seed(c.seed, SeedTag::mask)},
                          {"coils", derive_seed(c.seed, SeedTag::coils)}};
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : outputs) files.push_back(p.filename().string());
  return {{"command", command}, {"config", cfg}, {"seeds", seeds}, {"outputs", files}};
}

}  // namespace sscore
