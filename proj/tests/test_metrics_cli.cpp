#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "sscore/config.hpp"
#include "sscore/experiment.hpp"
#include "sscore/metrics.hpp"
#include "test_util.hpp"

using namespace sscore;
namespace fs = std::filesystem;

TEST(Metrics, NmseExamples) {
  EXPECT_DOUBLE_EQ(nmse_db(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0)), 0.0);
  EXPECT_EQ(nmse_db(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0)), -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(nmse_db(Eigen::Vector2d(1.1, 0), Eigen::Vector2d(1, 0)), -20.0, 1e-12);
  EXPECT_THROW(nmse_db(Eigen::Vector2d(1, 0), Eigen::Vector2d::Zero()), Error);
  EXPECT_THROW(nmse_db(Eigen::Vector3d::Zero(), Eigen::Vector2d(1, 0)), Error);
}

TEST(Metrics, NrmseExamples) {
  EXPECT_EQ(nrmse(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3)), 0.0);
  EXPECT_DOUBLE_EQ(nrmse(Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 2, 3)), 1.0);
  EXPECT_THROW(nrmse(Eigen::Vector2d(1, 0), Eigen::Vector2d::Zero()), Error);
}

TEST(Metrics, NmseIsTwentyLogNrmse) {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd truth = random_matrix(gen, 7, 1);
    const Eigen::VectorXd est = truth + random_matrix(gen, 7, 1, 0.3);
    EXPECT_NEAR(nmse_db(est, truth), 20.0 * std::log10(nrmse(est, truth)), 1e-10);
  }
}

TEST(Metrics, CsvSchemaAndInfSentinel) {
  MetricsTable t{{"sure_score", 0.0, 10.0, "nmse_db", -std::numeric_limits<double>::infinity(), 0.5, 3, 7},
                 {"linear", 0.0, std::numeric_limits<double>::quiet_NaN(), "nrmse", 0.25, 0.0, 1, 7}};
  const std::string csv = metrics_csv(t);
  EXPECT_EQ(csv,
            "mode,snr_w_db,pilot_snr_db_or_accel,metric,mean,std,n,seed\n"
            "sure_score,0,10,nmse_db,-inf,0.5,3,7\n"
            "linear,0,nan,nrmse,0.25,0,1,7\n");
}

TEST(Metrics, Summary) {
  const std::array<double, 4> v{1, 2, 3, 4};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_EQ(s.n, 4u);
}

TEST(Config, RoundTripsLosslessly) {
  ExperimentConfig c;
  c.seed = 18446744073709551615ull;
  c.snr_w_db = std::numeric_limits<double>::infinity();
  c.learning_rate = 0.1 + 0.2;
  c.widths = {7, 3, 11};
  c.pilot_snr_db = {-10.5, 1.0 / 3.0};
  c.mode = TrainMode::naive_dsm;
  c.eval_modes = {TrainMode::sure_score};
  c.name = "toy run";
  const std::string text = serialize_config(c);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.pilot_snr_db, c.pilot_snr_db);
  EXPECT_TRUE(std::isinf(back.snr_w_db));
  EXPECT_EQ(back.name, "toy run");
}

TEST(Config, CommentsAndOverrides) {
  const auto c = parse_config("# toy\nseed = 5   # trailing\n\nprior.kind = gmm\ntrain.mode = supervised\n");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.prior, "gmm");
  EXPECT_EQ(c.mode, TrainMode::supervised_dsm);
}

TEST(Config, NamedKeyErrors) {
  auto message = [](const std::string& text) {
    try {
      validate(parse_config(text));
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("schedule.levels = many\n").find("schedule.levels"), std::string::npos);
  EXPECT_NE(message("bogus.key = 1\n").find("bogus.key"), std::string::npos);
  EXPECT_NE(message("seed 4\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("schedule.sigma_min = 5\nschedule.sigma_max = 1\n").find("schedule.sigma"), std::string::npos);
  EXPECT_NE(message("train.mode = adversarial\n").find("train.mode"), std::string::npos);
}

TEST(Experiment, TensorRoundTrip) {
  const auto dir = scratch_dir("tensor");
  std::mt19937_64 gen(1);
  const Eigen::MatrixXd m = random_matrix(gen, 3, 5);
  save_tensor(m, dir / "t.sstn");
  EXPECT_EQ(load_tensor(dir / "t.sstn"), m);
  EXPECT_EQ(fs::file_size(dir / "t.sstn"), 4u + 4 + 4 + 16 + 8 * 15);
}

TEST(Experiment, GradcheckPasses) {
  for (const auto& r : run_gradcheck(3)) EXPECT_LT(r.max_rel_error, 1e-4) << r.loss;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct Result {
  int code = 0;
  std::string out;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string(SSCORE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path tiny_config(const fs::path& dir) {
  std::ofstream f(dir / "tiny.cfg");
  f << "# small enough to train in a second\n"
       "prior.kind = toy_channel\n"
       "channel.n_r = 2\nchannel.n_t = 4\n"
       "data.samples = 120\n"
       "model.widths = 16\n"
       "train.epochs = 2\ntrain.batch_size = 32\ntrain.learning_rate = 1e-3\n"
       "schedule.levels = 4\n"
       "sampler.steps_per_level = 2\nsampler.eval_samples = 3\n"
       "operator.pilot_snr_db = 0, 20\n"
       "output.dir = "
    << (dir / "run").string() << "\n";
  return dir / "tiny.cfg";
}

}  // namespace

TEST(Cli, UnknownSubcommandOrFlagIsUsageError) {
  const auto a = run_cli("frobnicate");
  EXPECT_EQ(a.code, 2) << a.out;
  EXPECT_NE(a.out.find("Usage"), std::string::npos) << a.out;
  const auto b = run_cli("train --no-such-flag");
  EXPECT_EQ(b.code, 2) << b.out;
  EXPECT_EQ(run_cli("").code, 2);
}

TEST(Cli, InvalidConfigNamesKey) {
  const auto dir = scratch_dir("cli_badcfg");
  std::ofstream(dir / "bad.cfg") << "schedule.levels = 0\n";
  const auto r = run_cli("gradcheck --config " + (dir / "bad.cfg").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("schedule.levels"), std::string::npos) << r.out;
}

TEST(Cli, Gradcheck) {
  const auto r = run_cli("gradcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max rel err"), std::string::npos);
}

TEST(Cli, EvalWithoutWeightsNamesPath) {
  const auto dir = scratch_dir("cli_noweights");
  const auto r = run_cli("eval --config " + tiny_config(dir).string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find((dir / "run" / "weights_supervised.sscr").string()), std::string::npos) << r.out;
  // one diagnostic line
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
}

TEST(Cli, TrainThenEvalWritesArtifacts) {
  const auto dir = scratch_dir("cli_pipeline");
  const auto cfg = tiny_config(dir).string();
  const auto run = dir / "run";
  ASSERT_EQ(run_cli("generate-data --config " + cfg).code, 0);
  EXPECT_TRUE(fs::exists(run / "data.ssds"));
  EXPECT_EQ(load_dataset(run / "train_noisy.ssds").clean, std::nullopt);

  const auto t = run_cli("train --mode sure_score --snr-w 0 --config " + cfg);
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(fs::exists(run / "weights_sure_score.sscr"));
  std::ifstream log(run / "train_log_sure_score.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header.substr(0, 5), "epoch");

  for (const char* m : {"supervised", "naive"}) ASSERT_EQ(run_cli(std::string("train --mode ") + m + " --config " + cfg).code, 0);
  const auto e = run_cli("eval --config " + cfg);
  ASSERT_EQ(e.code, 0) << e.out;
  std::ifstream csv(run / "metrics.csv");
  std::stringstream ss;
  ss << csv.rdbuf();
  const std::string first = ss.str();
  // 3 denoising rows + 2 sweep points x (linear + 3 modes)
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 1 + 3 + 8);
  EXPECT_TRUE(fs::exists(run / "manifest.json"));

  // the manifest alone reproduces the table
  fs::copy_file(run / "manifest.json", dir / "manifest.json");
  ASSERT_EQ(run_cli("eval --config " + (dir / "manifest.json").string()).code, 0);
  std::ifstream again(run / "metrics.csv");
  std::stringstream ss2;
  ss2 << again.rdbuf();
  EXPECT_EQ(ss2.str(), first);

  const auto s = run_cli("sample-prior --mode sure_score --config " + cfg);
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_EQ(load_tensor(run / "samples_sure_score.sstn").rows(), 3);
}
