#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sscore/autodiff.hpp"
#include "sscore/error.hpp"
#include "sscore/format.hpp"
#include "sscore/losses.hpp"
#include "sscore/random.hpp"
#include "sscore/schedules.hpp"
#include "sscore/score_net.hpp"

namespace sscore {

enum class TrainMode { supervised_dsm, naive_dsm, sure_score };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::supervised_dsm: return "supervised";
    case TrainMode::naive_dsm: return "naive";
    case TrainMode::sure_score: return "sure_score";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "supervised" || s == "supervised_dsm") return TrainMode::supervised_dsm;
  if (s == "naive" || s == "naive_dsm") return TrainMode::naive_dsm;
  if (s == "sure_score") return TrainMode::sure_score;
  throw Error(detail::concat("unknown training mode \"", s, "\" (expected supervised, naive or sure_score)"));
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  void step(const Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!grads.contains(params_[k])) continue;
      const auto g = grads.of(params_[k]);
      auto w = params_[k].mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainOptions {
  TrainMode mode = TrainMode::supervised_dsm;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// sure_score only: balance lambda on the first batch instead of using LossConfig::lambda.
  bool auto_lambda = true;
  /// Cosine decay of the learning rate from adam.learning_rate to 0 over all steps.
  bool cosine_decay = false;
};

struct TrainingLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  TrainMode mode = TrainMode::supervised_dsm;
  double mean_loss = 0.0;
  double lambda = 0.0;
  double sigma_w = 0.0;
  std::uint64_t seed = 0;
};

using TrainingLog = std::vector<TrainingLogRow>;

/// Mini-batch Adam on `inputs` (one sample per row). The caller picks the
/// rows: clean samples for supervised_dsm, noisy samples otherwise; the naive
/// baseline is plain DSM on noisy rows. cfg.lambda is overwritten when
/// opts.auto_lambda is set in sure_score mode.
inline TrainingLog train(ScoreNetwork& net, const Eigen::MatrixXd& inputs, const NoiseSchedule& schedule,
                         LossConfig& cfg, const TrainOptions& opts) {
  require(inputs.rows() > 0, "training set is empty");
  require(static_cast<std::size_t>(inputs.cols()) == net.input_dim(), "training rows have width ", inputs.cols(),
          ", network expects ", net.input_dim());
  require(opts.batch_size > 0, "batch size must be positive");
  // noise-free data: the Tweedie map is the identity and the SURE terms vanish
  const bool joint = opts.mode == TrainMode::sure_score && cfg.sigma_w > 0;
  if (joint) cfg.validate();

  Adam optimizer(net.parameters(), opts.adam);
  const auto count = static_cast<std::size_t>(inputs.rows());
  const auto dim = inputs.cols();
  std::vector<Eigen::Index> order(count);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  const std::size_t per_epoch = (count + opts.batch_size - 1) / opts.batch_size;
  const double total_steps = static_cast<double>(per_epoch * opts.epochs);

  TrainingLog log;
  std::size_t step = 0;
  bool lambda_ready = !joint || !opts.auto_lambda;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng = substream(opts.seed, {0x7a1, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < count; start += opts.batch_size) {
      const std::size_t rows = std::min(opts.batch_size, count - start);
      Eigen::MatrixXd batch(static_cast<Eigen::Index>(rows), dim);
      for (std::size_t r = 0; r < rows; ++r)
        batch.row(static_cast<Eigen::Index>(r)) = inputs.row(order[start + r]);
      Rng draw_rng = substream(opts.seed, {0xd7a, step});
      const BatchDraw draw = draw_batch(schedule, batch.rows(), dim, draw_rng);

      if (!lambda_ready) {
        cfg.lambda = lambda_init(net, batch, draw, cfg).lambda;
        lambda_ready = true;
      }

      const Tensor x = Tensor::from_matrix(batch);
      const Tensor loss = joint ? sure_score_loss(net, x, draw.sigmas, draw.z, draw.n, cfg)
                                                             : dsm_loss(net, x, draw.sigmas, draw.z);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        const auto [lo, hi] = std::minmax_element(draw.sigmas.begin(), draw.sigmas.end());
        throw Error(detail::concat("non-finite loss at epoch ", epoch, " step ", step, " (sigma drawn in [", *lo,
                                   ", ", *hi, "])"));
      }
      if (opts.cosine_decay)
        optimizer.set_learning_rate(opts.adam.learning_rate * 0.5 *
                                    (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps)));
      optimizer.step(backward(loss));
      loss_sum += value;
      ++batches;
      ++step;
    }
    TrainingLogRow row;
    row.epoch = epoch;
    row.step = step;
    row.mode = opts.mode;
    row.mean_loss = loss_sum / static_cast<double>(batches);
    row.lambda = joint ? cfg.lambda : 0.0;
    row.sigma_w = opts.mode == TrainMode::sure_score ? cfg.sigma_w : 0.0;
    row.seed = opts.seed;
    log.push_back(row);
  }
  return log;
}

inline void write_training_log(const TrainingLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
  out << "epoch,step,mode,mean_loss,lambda,sigma_w,seed\n";
  for (const auto& r : log)
    out << r.epoch << ',' << r.step << ',' << to_string(r.mode) << ',' << format_double(r.mean_loss) << ','
        << format_double(r.lambda) << ',' << format_double(r.sigma_w) << ',' << r.seed << '\n';
}

}  // namespace sscore
