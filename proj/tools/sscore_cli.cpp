// sscore: command-line front end for data generation, training and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sscore/sscore.hpp"

namespace fs = std::filesystem;
using namespace sscore;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> snr_w;
  std::optional<double> alpha;
  std::optional<double> accel;
  std::optional<std::string> out;
};

// A manifest doubles as a config: its "config" object holds every key.
ExperimentConfig read_config_file(const fs::path& path) {
  if (path.extension() != ".json") return load_config(path);
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config ", path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(detail::concat(path.string(), ": ", e.what()));
  }
  require(j.contains("config") && j["config"].is_object(), path.string(), ": manifest has no \"config\" object");
  ExperimentConfig c;
  for (const auto& [key, value] : j["config"].items()) set_config_value(c, key, value.get<std::string>());
  return c;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : read_config_file(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) set_config_value(c, "train.mode", *o.mode);
  if (o.snr_w) c.snr_w_db = *o.snr_w;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.accel) c.accel = *o.accel;
  if (o.out) c.out_dir = *o.out;
  validate(c);
  return c;
}

std::vector<TrainMode> modes_for(const ExperimentConfig& c, const Overrides& o) {
  if (o.mode) return {c.mode};
  return c.eval_modes;
}

struct Run {
  ExperimentConfig cfg;
  RunPaths paths;
  DatasetSplit split;
  NoiseSchedule schedule;
};

// The dataset is a pure function of the config, so every command rebuilds
// it rather than trusting whatever sits in the output directory.
Run prepare(const ExperimentConfig& c) {
  RunPaths paths{c.out_dir};
  fs::create_directories(paths.dir);
  DatasetSplit split = split_dataset(build_dataset(c), c.test_fraction);
  NoiseSchedule schedule = make_schedule(c, split.train.noisy);
  return {c, paths, std::move(split), std::move(schedule)};
}

void finish(const Run& run, const std::string& command, std::vector<fs::path> outputs) {
  save_config(run.cfg, run.paths.config());
  outputs.push_back(run.paths.config());
  nlohmann::json m = manifest_json(run.cfg, command, outputs);
  m["schedule"] = schedule_json(run.schedule);
  write_json(m, run.paths.manifest());
  for (const auto& p : outputs) std::cout << "wrote " << p.string() << '\n';
  std::cout << "wrote " << run.paths.manifest().string() << '\n';
}

void write_tensor(const Eigen::MatrixXd& m, const fs::path& path, nlohmann::json meta, std::vector<fs::path>& outputs) {
  save_tensor(m, path);
  meta["shape"] = {m.rows(), m.cols()};
  fs::path sidecar = path;
  sidecar += ".json";
  write_json(meta, sidecar);
  outputs.push_back(path);
  outputs.push_back(sidecar);
}

std::vector<ScoreNetwork> load_models(const Run& run, const std::vector<TrainMode>& modes) {
  std::vector<ScoreNetwork> nets;
  for (auto m : modes) nets.push_back(load_model(run.paths, m, run.cfg.activation));
  return nets;
}

std::vector<ModelRef> refs(const std::vector<TrainMode>& modes, const std::vector<ScoreNetwork>& nets) {
  std::vector<ModelRef> out;
  for (std::size_t i = 0; i < modes.size(); ++i) out.push_back({modes[i], &nets[i]});
  return out;
}

int cmd_generate(const ExperimentConfig& c) {
  const Run run = prepare(c);
  save_dataset(build_dataset(c), run.paths.dataset());
  // what the self-supervised modes are allowed to see
  save_dataset(run.split.train, run.paths.noisy_export(), true);
  finish(run, "generate-data", {run.paths.dataset(), run.paths.noisy_export()});
  return 0;
}

int cmd_train(const ExperimentConfig& c) {
  const Run run = prepare(c);
  const TrainedModel m = train_model(c, run.split.train, run.schedule, c.mode);
  save_weights(m.net, run.paths.weights(c.mode));
  write_training_log(m.log, run.paths.train_log(c.mode));
  if (!m.log.empty())
    std::cout << to_string(c.mode) << ": final loss " << format_double(m.log.back().mean_loss) << ", lambda "
              << format_double(m.lambda) << '\n';
  finish(run, "train", {run.paths.weights(c.mode), run.paths.train_log(c.mode)});
  return 0;
}

MetricsTable denoise(const Run& run, const std::vector<TrainMode>& modes, std::vector<fs::path>& outputs) {
  const auto nets = load_models(run, modes);
  const auto table = run_denoising_eval(run.cfg, run.split.test, refs(modes, nets));
  const double sw = run.split.test.real_noise_std();
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const auto name = std::string(to_string(modes[i]));
    const Eigen::MatrixXd est = sw > 0 ? tweedie_denoise_values(nets[i], run.split.test.noisy, sw) : run.split.test.noisy;
    write_tensor(est, run.paths.dir / ("denoised_" + name + ".sstn"), {{"mode", name}, {"sigma_w", sw}}, outputs);
  }
  return table;
}

MetricsTable reconstruct(const Run& run, const std::vector<TrainMode>& modes, std::vector<fs::path>& outputs) {
  const auto nets = load_models(run, modes);
  const auto rec = run_reconstruction_eval(run.cfg, run.split.test, run.schedule, refs(modes, nets));
  const auto axis = reconstruction_axis(run.cfg);
  for (const auto& [key, est] : rec.estimates) {
    const auto& [a, mode] = key;
    const std::string tag = run.cfg.op == "pilot" ? "pilot_snr" : "accel";
    write_tensor(est, run.paths.dir / ("recon_" + mode + "_" + tag + "_" + format_double(axis[a]) + ".sstn"),
                 {{"mode", mode}, {tag, axis[a]}, {"operator", run.cfg.op}}, outputs);
  }
  return rec.table;
}

int cmd_denoise(const ExperimentConfig& c, const Overrides& o) {
  const Run run = prepare(c);
  std::vector<fs::path> outputs;
  const auto table = denoise(run, modes_for(c, o), outputs);
  const fs::path csv = run.paths.dir / "denoise_metrics.csv";
  write_metrics(table, csv);
  std::cout << metrics_csv(table);
  outputs.insert(outputs.begin(), csv);
  finish(run, "denoise", outputs);
  return 0;
}

int cmd_reconstruct(const ExperimentConfig& c, const Overrides& o) {
  const Run run = prepare(c);
  std::vector<fs::path> outputs;
  const auto table = reconstruct(run, modes_for(c, o), outputs);
  const fs::path csv = run.paths.dir / "reconstruct_metrics.csv";
  write_metrics(table, csv);
  std::cout << metrics_csv(table);
  outputs.insert(outputs.begin(), csv);
  finish(run, "reconstruct", outputs);
  return 0;
}

int cmd_eval(const ExperimentConfig& c, const Overrides& o) {
  const Run run = prepare(c);
  const auto modes = modes_for(c, o);
  std::vector<fs::path> outputs;
  MetricsTable table = denoise(run, modes, outputs);
  const auto rec = reconstruct(run, modes, outputs);
  table.insert(table.end(), rec.begin(), rec.end());
  write_metrics(table, run.paths.metrics());
  std::cout << metrics_csv(table);
  outputs.insert(outputs.begin(), run.paths.metrics());
  finish(run, "eval", outputs);
  return 0;
}

int cmd_sample_prior(const ExperimentConfig& c) {
  const Run run = prepare(c);
  const ScoreNetwork net = load_model(run.paths, c.mode, c.activation);
  const auto scfg = sampler_config(c, run.schedule, derive_seed(c.seed, SeedTag::sampler, 0xff));
  const Eigen::MatrixXd x = prior_sample(network_score(net), net.input_dim(), scfg, c.eval_samples);
  std::vector<fs::path> outputs;
  const auto name = std::string(to_string(c.mode));
  write_tensor(x, run.paths.dir / ("samples_" + name + ".sstn"), {{"mode", name}}, outputs);
  finish(run, "sample-prior", outputs);
  return 0;
}

int cmd_gradcheck(const ExperimentConfig& c) {
  double worst = 0.0;
  for (const auto& r : run_gradcheck(c.seed)) {
    std::cout << r.loss << ": max rel err " << format_double(r.max_rel_error) << '\n';
    worst = std::max(worst, r.max_rel_error);
  }
  std::cout << "max rel err " << format_double(worst) << (worst < 1e-4 ? " ok" : " FAILED") << '\n';
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SURE-Score: score-based denoising and posterior sampling from noisy data", "sscore"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "config file (key = value) or a run manifest")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "base seed");
  app.add_option("--mode", o.mode, "training mode")->check(CLI::IsMember({"supervised", "naive", "sure_score"}));
  app.add_option("--snr-w", o.snr_w, "training-data SNR in dB (inf for clean)");
  app.add_option("--alpha", o.alpha, "pilot density");
  app.add_option("--accel", o.accel, "MRI acceleration");
  app.add_option("--out", o.out, "output directory");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate-data", "sample, corrupt and save the dataset"},
      {"train", "train one mode and save its weights and log"},
      {"denoise", "Tweedie denoising of the test split, NRMSE per mode"},
      {"sample-prior", "unconditional annealed Langevin samples"},
      {"reconstruct", "posterior-sampling reconstruction, NMSE/NRMSE per mode"},
      {"eval", "denoise + reconstruct into metrics.csv"},
      {"gradcheck", "finite-difference check of every loss gradient"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "sscore: " << e.what() << '\n' << app.help();
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig c = resolve(o);
    if (command == "generate-data") return cmd_generate(c);
    if (command == "train") return cmd_train(c);
    if (command == "denoise") return cmd_denoise(c, o);
    if (command == "sample-prior") return cmd_sample_prior(c);
    if (command == "reconstruct") return cmd_reconstruct(c, o);
    if (command == "eval") return cmd_eval(c, o);
    return cmd_gradcheck(c);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "sscore " << command << ": error: " << msg << '\n';
    return 1;
  }
}
