#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "sscore/data.hpp"
#include "sscore/losses.hpp"
#include "sscore/train.hpp"
#include "test_util.hpp"

using namespace sscore;

namespace {

Eigen::MatrixXd gaussian_rows(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return random_matrix(rng, rows, cols, stddev);
}

VectorField linear_field(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  // g(x) = W x + b on a single vector
  return [w, b](const Tensor& x) {
    const Eigen::VectorXd v = w * x.to_vector() + b;
    return Tensor::from_vector(v);
  };
}

}  // namespace

TEST(DsmLoss, ZeroNetworkIsNoiseEnergy) {
  auto net = ScoreNetwork::init(3, {8}, 0, {.zero_output_layer = true});
  const Eigen::MatrixXd z{{0.3, -0.1, 0.2}};
  const double sigma = 0.5;
  const double loss = dsm_loss(net, Tensor::vector({1, 2, 3}), sigma, z).item();
  EXPECT_NEAR(loss, z.squaredNorm() / (sigma * sigma), 1e-15);
}

TEST(DsmLoss, PerfectScoreGivesZero) {
  // zero last-layer weights: f(x) = bias, so s = bias / sigma; pick bias = -z / sigma
  auto net = ScoreNetwork::init(2, {4}, 0, {.zero_output_layer = true});
  const double sigma = 0.7;
  const Eigen::MatrixXd z{{0.2, -0.4}};
  Tensor last_bias = net.layers().back().bias;
  auto bias = last_bias.mutable_data();
  bias[0] = -z(0, 0) / sigma;
  bias[1] = -z(0, 1) / sigma;
  EXPECT_NEAR(dsm_loss(net, Tensor::vector({5, -1}), sigma, z).item(), 0.0, 1e-28);
}

TEST(DsmLoss, BatchMatchesLoopOracle) {
  auto net = ScoreNetwork::init(4, {16}, 3);
  NoiseSchedule schedule(0.01, 2.0, 10);
  const Eigen::MatrixXd x = gaussian_rows(1, 12, 4);
  Rng rng(9);
  const auto draw = draw_batch(schedule, 12, 4, rng);
  const double batched = dsm_loss(net, Tensor::from_matrix(x), draw.sigmas, draw.z).item();
  double loop = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double s = draw.sigmas[static_cast<std::size_t>(r)];
    const Eigen::VectorXd perturbed = x.row(r).transpose() + draw.z.row(r).transpose();
    const Eigen::VectorXd score = net.score_values(perturbed, s);
    loop += s * s * (score + draw.z.row(r).transpose() / (s * s)).squaredNorm();
  }
  loop /= static_cast<double>(x.rows());
  EXPECT_NEAR(batched, loop, 1e-12 * std::abs(loop));
}

TEST(DsmLoss, RejectsBadSigma) {
  auto net = ScoreNetwork::init(2, {4}, 0);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(1, 2);
  EXPECT_THROW(dsm_loss(net, Tensor::vector({1, 1}), 0.0, z), Error);
  EXPECT_THROW(dsm_loss(net, Tensor::vector({1, 1}), -2.0, z), Error);
}

TEST(BatchDraw, ReproducibleAndScaled) {
  NoiseSchedule schedule(0.1, 10.0, 5);
  Rng a(3), b(3);
  const auto d1 = draw_batch(schedule, 2000, 3, a);
  const auto d2 = draw_batch(schedule, 2000, 3, b);
  EXPECT_EQ(d1.sigmas, d2.sigmas);
  EXPECT_EQ(d1.z, d2.z);
  EXPECT_EQ(d1.n, d2.n);
  // z / sigma is standard normal
  double ss = 0;
  for (Eigen::Index r = 0; r < d1.z.rows(); ++r) ss += (d1.z.row(r) / d1.sigmas[static_cast<std::size_t>(r)]).squaredNorm();
  EXPECT_NEAR(ss / static_cast<double>(d1.z.size()), 1.0, 0.05);
}

TEST(McDivergence, LinearFieldExample) {
  const Eigen::MatrixXd w{{1, 2}, {3, 4}};
  const auto g = linear_field(w, Eigen::VectorXd::Zero(2));
  for (double eps : {1e-6, 1e-3, 1.0, 10.0})
    EXPECT_NEAR(mc_divergence(g, Tensor::vector({0.3, -0.2}), Tensor::vector({1, 1}), eps).item(), 10.0, 1e-9);
}

TEST(McDivergence, IdentityGivesProbeEnergy) {
  Rng rng(4);
  const Eigen::VectorXd n = normal_vector(rng, 7);
  VectorField id = [](const Tensor& x) { return x; };
  EXPECT_NEAR(mc_divergence(id, Tensor::from_vector(normal_vector(rng, 7)), Tensor::from_vector(n), 1e-3).item(),
              n.squaredNorm(), 1e-10);
}

TEST(McDivergence, AffineIsExactPerProbe) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd w = random_matrix(gen, 6, 6);
    const Eigen::VectorXd b = random_matrix(gen, 6, 1);
    const Eigen::VectorXd x = random_matrix(gen, 6, 1);
    const Eigen::VectorXd n = random_matrix(gen, 6, 1);
    auto g = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return w * u + b; };
    for (double eps : {1e-3, 0.1, 1.0})
      EXPECT_NEAR(mc_divergence(g, x, n, eps), n.dot(w * n), 1e-10) << "eps " << eps;
  }
}

TEST(McDivergence, MeanOverProbesApproachesTrace) {
  const Eigen::MatrixXd w{{1, 2}, {3, 4}};
  auto g = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return w * u; };
  Rng rng(6);
  double total = 0;
  const int probes = 10000;
  for (int i = 0; i < probes; ++i) total += mc_divergence(g, Eigen::VectorXd::Zero(2), normal_vector(rng, 2), 1e-3);
  EXPECT_NEAR(total / probes, 5.0, 0.02 * 5.0);
}

TEST(McDivergence, Errors) {
  VectorField id = [](const Tensor& x) { return x; };
  EXPECT_THROW(mc_divergence(id, Tensor::vector({1, 2}), Tensor::vector({1, 2}), 0.0), Error);
  EXPECT_THROW(mc_divergence(id, Tensor::vector({1, 2}), Tensor::vector({1, 2, 3}), 1e-3), Error);
}

TEST(McDivergence, LinearityOverTweedieMap) {
  auto net = ScoreNetwork::init(5, {16}, 8);
  const double sw = 0.6;
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = Tensor::from_vector(normal_vector(rng, 5));
    const Tensor n = Tensor::from_vector(normal_vector(rng, 5));
    VectorField tweedie = [&](const Tensor& u) { return tweedie_denoise(net, u, sw); };
    VectorField score = [&](const Tensor& u) { return net.score(u, sw); };
    const double lhs = mc_divergence(tweedie, x, n, 1e-3).item();
    const double rhs = norm_sq(n).item() + sw * sw * mc_divergence(score, x, n, 1e-3).item();
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(SureLoss, IdentityDenoiser) {
  auto net = ScoreNetwork::init(4, {8}, 0, {.zero_output_layer = true});
  const Eigen::MatrixXd n{{1.0, -0.5, 2.0, 0.1}};
  const double sw = 0.8;
  const double v = sure_loss(net, Tensor::vector({1, 2, 3, 4}), sw, n, 1e-3).item();
  EXPECT_NEAR(v, 2 * sw * sw * n.squaredNorm(), 1e-12);
  EXPECT_DOUBLE_EQ(sure_risk_offset(4, sw), 4 * sw * sw);
}

TEST(SureLoss, IdentityDenoiserExpectation) {
  // E[2 sw^2 n^T n] = 2 N sw^2; minus the offset this is the true MSE N sw^2
  auto identity = [](const Eigen::VectorXd& x) { return x; };
  Rng rng(2);
  const int draws = 20000;
  const double sw = 1.0;
  double total = 0;
  for (int i = 0; i < draws; ++i) total += sure_value(identity, normal_vector(rng, 4), sw, normal_vector(rng, 4), 1e-3);
  EXPECT_NEAR(total / draws - sure_risk_offset(4, sw), 4.0, 0.05 * 4.0);
}

TEST(SureLoss, UnbiasedForAnalyticMmse) {
  const int dim = 8;
  std::mt19937_64 gen(11);
  const Eigen::MatrixXd l = random_matrix(gen, dim, dim) / std::sqrt(static_cast<double>(dim));
  const auto prior = SyntheticPrior::gaussian(Eigen::VectorXd::Zero(dim),
                                              l * l.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim));
  const double sw = 1.0;
  const Eigen::MatrixXd clean = sample_prior(prior, 10000, 3);
  auto denoiser = [&](const Eigen::VectorXd& u) { return analytic_mmse(prior, u, sw); };
  Rng rng(4);
  double sure = 0, mse = 0;
  for (Eigen::Index i = 0; i < clean.rows(); ++i) {
    const Eigen::VectorXd x = clean.row(i).transpose();
    const Eigen::VectorXd noisy = x + normal_vector(rng, dim, sw);
    sure += sure_value(denoiser, noisy, sw, normal_vector(rng, dim), 1e-3);
    mse += (denoiser(noisy) - x).squaredNorm();
  }
  sure /= static_cast<double>(clean.rows());
  mse /= static_cast<double>(clean.rows());
  EXPECT_LT(std::abs(sure - sure_risk_offset(dim, sw) - mse) / mse, 0.03);
}

TEST(SureScoreLoss, ZeroNetwork) {
  auto net = ScoreNetwork::init(3, {8}, 0, {.zero_output_layer = true});
  const Eigen::MatrixXd z{{0.1, 0.2, -0.3}};
  const Eigen::MatrixXd n{{1.0, 1.5, -0.5}};
  LossConfig cfg{.lambda = 2.5, .epsilon = 1e-3, .sigma_w = 0.4};
  const double sigma = 0.3;
  const double v = sure_score_loss(net, Tensor::vector({1, -1, 2}), sigma, z, n, cfg).item();
  EXPECT_NEAR(v, z.squaredNorm() / (sigma * sigma) + 2 * cfg.lambda * 0.16 * n.squaredNorm(), 1e-11);
}

TEST(SureScoreLoss, LambdaZeroIsDsmOnDenoised) {
  auto net = ScoreNetwork::init(4, {12}, 2);
  const Eigen::MatrixXd x = gaussian_rows(1, 5, 4);
  const Eigen::MatrixXd z = gaussian_rows(2, 5, 4, 0.2);
  const Eigen::MatrixXd n = gaussian_rows(3, 5, 4);
  LossConfig cfg{.lambda = 0.0, .sigma_w = 0.5};
  const double joint = sure_score_loss(net, Tensor::from_matrix(x), 0.2, z, n, cfg).item();
  const Tensor denoised = tweedie_denoise(net, Tensor::from_matrix(x), cfg.sigma_w);
  EXPECT_EQ(joint, dsm_loss(net, denoised, 0.2, z).item());
}

// Composed evaluation (separate operations) against the expanded single expression.
TEST(SureScoreLoss, ComposedEqualsExpanded) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  NoiseSchedule schedule(0.01, 3.0, 12);
  for (int trial = 0; trial < 25; ++trial) {
    auto net = ScoreNetwork::init(6, {16, 16}, 100 + trial);
    const Eigen::MatrixXd x = random_matrix(gen, 4, 6);
    Rng rng(trial);
    const auto draw = draw_batch(schedule, 4, 6, rng);
    LossConfig cfg{.lambda = u(gen), .epsilon = 1e-3, .sigma_w = u(gen)};
    const Tensor xt = Tensor::from_matrix(x);
    const double expanded = sure_score_loss(net, xt, draw.sigmas, draw.z, draw.n, cfg).item();
    const double composed = dsm_loss(net, tweedie_denoise(net, xt, cfg.sigma_w), draw.sigmas, draw.z).item() +
                            cfg.lambda * sure_loss(net, xt, cfg.sigma_w, draw.n, cfg.epsilon).item();
    EXPECT_NEAR(expanded, composed, 1e-12 * std::max(1.0, std::abs(composed)));
  }
}

TEST(SureScoreLoss, DetachChangesOnlyGradients) {
  auto net = ScoreNetwork::init(3, {8}, 4);
  const Eigen::MatrixXd x = gaussian_rows(1, 3, 3);
  const Eigen::MatrixXd z = gaussian_rows(2, 3, 3, 0.3);
  const Eigen::MatrixXd n = gaussian_rows(3, 3, 3);
  LossConfig live{.lambda = 0.0, .sigma_w = 0.5};
  LossConfig frozen = live;
  frozen.detach_denoiser_in_dsm = true;
  const Tensor a = sure_score_loss(net, Tensor::from_matrix(x), 0.3, z, n, live);
  const Tensor b = sure_score_loss(net, Tensor::from_matrix(x), 0.3, z, n, frozen);
  EXPECT_EQ(a.item(), b.item());
  const auto w = net.layers()[0].weight;
  EXPECT_GT(max_rel_error(backward(a).of(w), backward(b).of(w)), 1e-6);
}

TEST(SureScoreLoss, TinyNoiseLimitIsDsm) {
  auto net = ScoreNetwork::init(4, {12}, 6);
  const Eigen::MatrixXd x = gaussian_rows(1, 6, 4);
  const Eigen::MatrixXd z = gaussian_rows(2, 6, 4, 0.5);
  const Eigen::MatrixXd n = gaussian_rows(3, 6, 4);
  // the Tweedie shift is sw * f(x), so it vanishes only linearly in sw
  LossConfig cfg{.lambda = 1.0, .sigma_w = 1e-7};
  const double joint = sure_score_loss(net, Tensor::from_matrix(x), 0.5, z, n, cfg).item();
  const double dsm = dsm_loss(net, Tensor::from_matrix(x), 0.5, z).item();
  EXPECT_NEAR(joint, dsm, 1e-5 * dsm);
}

TEST(LossConfigTest, Validation) {
  EXPECT_THROW((LossConfig{.lambda = -1}.validate()), Error);
  EXPECT_THROW((LossConfig{.epsilon = 0}.validate()), Error);
  EXPECT_THROW((LossConfig{.sigma_w = 0}.validate()), Error);
  EXPECT_NO_THROW(LossConfig{}.validate());
}

TEST(Lambda, Examples) {
  EXPECT_DOUBLE_EQ(balance_lambda(2.0, 0.5).lambda, 4.0);
  EXPECT_DOUBLE_EQ(balance_lambda(0.7, 0.7).lambda, 1.0);
  const auto neg = balance_lambda(1.0, -0.3);
  EXPECT_TRUE(neg.fallback);
  EXPECT_EQ(neg.lambda, 1.0);
  EXPECT_TRUE(balance_lambda(1.0, 0.0).fallback);
}

TEST(Lambda, InitMatchesSeparateLosses) {
  auto net = ScoreNetwork::init(4, {8}, 1);
  const Eigen::MatrixXd x = gaussian_rows(1, 16, 4);
  NoiseSchedule schedule(0.01, 2.0, 8);
  Rng rng(2);
  const auto draw = draw_batch(schedule, 16, 4, rng);
  LossConfig cfg{.sigma_w = 0.5};
  const auto choice = lambda_init(net, x, draw, cfg);
  const Tensor xt = Tensor::from_matrix(x);
  const double dsm = dsm_loss(net, tweedie_denoise(net, xt, 0.5), draw.sigmas, draw.z).item();
  const double sure = sure_loss(net, xt, 0.5, draw.n, 1e-3).item();
  ASSERT_GT(sure, 0);
  EXPECT_DOUBLE_EQ(choice.lambda, dsm / sure);
}

TEST(Lambda, NegativeSureWarns) {
  // identity denoiser and an all-zero probe: the SURE mean is exactly 0
  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  auto net = ScoreNetwork::init(2, {4}, 0, {.zero_output_layer = true});
  BatchDraw draw{{0.5}, Eigen::MatrixXd::Zero(1, 2), Eigen::MatrixXd::Zero(1, 2)};
  const auto choice = lambda_init(net, Eigen::MatrixXd::Ones(1, 2), draw, LossConfig{.sigma_w = 0.5});
  std::clog.rdbuf(old);
  EXPECT_TRUE(choice.fallback);
  EXPECT_EQ(choice.lambda, 1.0);
  EXPECT_NE(captured.str().find("warning"), std::string::npos);
}

// Reverse mode against central differences for every loss, frozen draws.
TEST(LossGradients, MatchFiniteDifferences) {
  auto net = ScoreNetwork::init(8, {16, 16}, 21);
  const Eigen::MatrixXd x = gaussian_rows(1, 4, 8);
  NoiseSchedule schedule(0.05, 2.0, 10);
  Rng rng(3);
  const auto draw = draw_batch(schedule, 4, 8, rng);
  LossConfig cfg{.lambda = 0.7, .epsilon = 1e-3, .sigma_w = 0.5};
  const Tensor xt = Tensor::from_matrix(x);
  std::vector<std::pair<const char*, std::function<Tensor()>>> losses = {
      {"dsm", [&] { return dsm_loss(net, xt, draw.sigmas, draw.z); }},
      {"sure", [&] { return sure_loss(net, xt, cfg.sigma_w, draw.n, cfg.epsilon); }},
      {"sure_score", [&] { return sure_score_loss(net, xt, draw.sigmas, draw.z, draw.n, cfg); }},
  };
  const auto params = net.parameters();
  for (auto& [name, f] : losses) {
    const auto grads = backward(f());
    const auto fd = finite_difference_gradient(f, params, 1e-5);
    double worst = 0;
    for (std::size_t k = 0; k < params.size(); ++k) worst = std::max(worst, max_rel_error(grads.of(params[k]), fd[k]));
    EXPECT_LT(worst, 1e-4) << name;
  }
}

TEST(Training, SupervisedLossDecreases) {
  const auto prior = SyntheticPrior::gaussian(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4));
  const Eigen::MatrixXd data = sample_prior(prior, 512, 1);
  auto net = ScoreNetwork::init(4, {32, 32}, 2);
  NoiseSchedule schedule(0.05, 3.0, 10);
  LossConfig cfg;
  TrainOptions opts{.mode = TrainMode::supervised_dsm, .epochs = 20, .batch_size = 64, .seed = 5};
  opts.adam.learning_rate = 1e-3;
  const auto log = train(net, data, schedule, cfg, opts);
  ASSERT_EQ(log.size(), 20u);
  EXPECT_LT(log.back().mean_loss, log.front().mean_loss);
  EXPECT_LT(log.back().mean_loss, 0.8 * log.front().mean_loss);
  EXPECT_EQ(log.back().step, 20u * 8u);
}

TEST(Training, NaiveIsDsmOnNoisyRows) {
  const auto prior = SyntheticPrior::gaussian(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  const auto ds = corrupt(sample_prior(prior, 128, 1), prior, 0.0, 2);
  NoiseSchedule schedule(0.05, 3.0, 10);
  auto a = ScoreNetwork::init(3, {8}, 3);
  auto b = a;
  LossConfig cfg;
  train(a, ds.noisy, schedule, cfg, {.mode = TrainMode::naive_dsm, .epochs = 2, .seed = 4});
  train(b, ds.noisy, schedule, cfg, {.mode = TrainMode::supervised_dsm, .epochs = 2, .seed = 4});
  const Eigen::MatrixXd probe = gaussian_rows(9, 4, 3);
  EXPECT_EQ(a.score_values(probe, 0.3), b.score_values(probe, 0.3));
}

TEST(Training, Deterministic) {
  const Eigen::MatrixXd data = gaussian_rows(1, 100, 3);
  NoiseSchedule schedule(0.05, 3.0, 10);
  auto run = [&] {
    auto net = ScoreNetwork::init(3, {8}, 3);
    LossConfig cfg{.sigma_w = 0.5};
    const auto log = train(net, data, schedule, cfg, {.mode = TrainMode::sure_score, .epochs = 2, .seed = 7});
    return std::make_pair(net.score_values(data, 0.2), log.back().mean_loss);
  };
  const auto r1 = run();
  const auto r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(Training, NoiseFreeSureScoreFallsBackToDsm) {
  const Eigen::MatrixXd data = gaussian_rows(1, 64, 3);
  NoiseSchedule schedule(0.05, 3.0, 10);
  auto a = ScoreNetwork::init(3, {8}, 3);
  auto b = a;
  LossConfig zero{.sigma_w = 0.0};
  LossConfig plain;
  const auto log = train(a, data, schedule, zero, {.mode = TrainMode::sure_score, .epochs = 2, .seed = 1});
  train(b, data, schedule, plain, {.mode = TrainMode::supervised_dsm, .epochs = 2, .seed = 1});
  EXPECT_EQ(a.score_values(data, 0.5), b.score_values(data, 0.5));
  EXPECT_EQ(log.back().lambda, 0.0);
}

TEST(Training, LogCsv) {
  const auto dir = scratch_dir("trainlog");
  TrainingLog log{{0, 4, TrainMode::sure_score, 1.5, 0.25, 1.0, 9}};
  write_training_log(log, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,step,mode,mean_loss,lambda,sigma_w,seed");
  EXPECT_EQ(row, "0,4,sure_score,1.5,0.25,1,9");
}

TEST(Training, NonFiniteLossNamesStep) {
  Eigen::MatrixXd data = gaussian_rows(1, 8, 2);
  data(0, 0) = std::numeric_limits<double>::quiet_NaN();
  NoiseSchedule schedule(0.05, 3.0, 10);
  auto net = ScoreNetwork::init(2, {4}, 3);
  LossConfig cfg;
  try {
    train(net, data, schedule, cfg, {.epochs = 1, .batch_size = 8});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos) << e.what();
  }
}
