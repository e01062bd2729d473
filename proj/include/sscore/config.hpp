#pragma once

// Experiment configuration as flat "key = value" text with '#' comments.
// Every field has a key; writing and re-reading a config is lossless.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sscore/autodiff.hpp"
#include "sscore/error.hpp"
#include "sscore/format.hpp"
#include "sscore/train.hpp"

namespace sscore {

struct ExperimentConfig {
  std::string name = "toy_channel";
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  // prior
  std::string prior = "toy_channel";  // gaussian | gmm | toy_channel | toy_image
  std::size_t gaussian_dim = 16;
  double gaussian_variance = 1.0;
  std::size_t gmm_components = 2;
  std::size_t gmm_dim = 2;
  double gmm_radius = 2.0;
  double gmm_variance = 0.25;
  std::size_t channel_n_r = 4;
  std::size_t channel_n_t = 16;
  std::size_t channel_paths = 3;
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  double image_smoothness = 0.15;
  std::size_t image_blobs = 6;

  // data
  std::size_t samples = 4000;
  double test_fraction = 0.1;
  double snr_w_db = 0.0;

  // model
  std::vector<std::size_t> widths{256, 256};
  Activation activation = Activation::softplus;
  bool sigma_input = false;

  // training
  TrainMode mode = TrainMode::sure_score;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double lambda = 0.0;  // 0 with auto_lambda: balanced on the first batch
  bool auto_lambda = true;
  bool cosine_decay = true;
  double epsilon = 1e-3;
  bool detach_denoiser = false;
  std::size_t train_subset = 0;  // 0 = all training rows

  // noise ladder; sigma_max = 0 picks the max pairwise distance of the data
  double sigma_min = 0.01;
  double sigma_max = 0.0;
  std::size_t levels = 30;
  double alpha0 = 1e-5;
  double beta = 1.0;

  // sampler
  std::size_t steps_per_level = 3;
  bool final_denoise = true;
  bool quench_final_level = false;
  std::size_t average = 1;
  std::size_t eval_samples = 50;

  // operator
  std::string op = "pilot";  // pilot | multicoil
  double alpha = 0.6;
  std::vector<double> pilot_snr_db{-10, -5, 0, 5, 10, 15, 20, 25, 30};
  double accel = 4.0;
  double center_fraction = 0.125;
  std::size_t coils = 4;
  double mri_sigma_n = 0.01;

  // evaluation
  std::vector<TrainMode> eval_modes{TrainMode::supervised_dsm, TrainMode::naive_dsm, TrainMode::sure_score};
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && end == s.data() + s.size(), "not a non-negative integer: \"", s, "\"");
  return v;
}

inline bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(concat("not a boolean: \"", s, "\""));
}

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw Error(concat("unknown activation \"", s, "\""));
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

struct ConfigField {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename T>
ConfigField size_field(std::string key, T ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return std::to_string(c.*m); },
          [m](ExperimentConfig& c, std::string_view v) { c.*m = static_cast<T>(parse_u64(v)); }};
}

inline ConfigField real_field(std::string key, double ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return format_double(c.*m); },
          [m](ExperimentConfig& c, std::string_view v) { c.*m = parse_double(v); }};
}

inline ConfigField bool_field(std::string key, bool ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m](ExperimentConfig& c, std::string_view v) { c.*m = parse_bool(v); }};
}

inline ConfigField text_field(std::string key, std::string ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return c.*m; },
          [m](ExperimentConfig& c, std::string_view v) { c.*m = std::string(v); }};
}

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = {
      text_field("experiment.name", &C::name),
      size_field("seed", &C::seed),
      text_field("output.dir", &C::out_dir),
      {"prior.kind", [](const C& c) { return c.prior; },
       [](C& c, std::string_view v) {
         require(v == "gaussian" || v == "gmm" || v == "toy_channel" || v == "toy_image", "unknown prior \"", v, "\"");
         c.prior = std::string(v);
       }},
      size_field("gaussian.dim", &C::gaussian_dim),
      real_field("gaussian.variance", &C::gaussian_variance),
      size_field("gmm.components", &C::gmm_components),
      size_field("gmm.dim", &C::gmm_dim),
      real_field("gmm.radius", &C::gmm_radius),
      real_field("gmm.variance", &C::gmm_variance),
      size_field("channel.n_r", &C::channel_n_r),
      size_field("channel.n_t", &C::channel_n_t),
      size_field("channel.paths", &C::channel_paths),
      size_field("image.height", &C::image_height),
      size_field("image.width", &C::image_width),
      real_field("image.smoothness", &C::image_smoothness),
      size_field("image.blobs", &C::image_blobs),
      size_field("data.samples", &C::samples),
      real_field("data.test_fraction", &C::test_fraction),
      real_field("data.snr_w_db", &C::snr_w_db),
      {"model.widths", [](const C& c) { return join(c.widths, [](std::size_t w) { return std::to_string(w); }); },
       [](C& c, std::string_view v) {
         c.widths.clear();
         for (const auto& p : split_list(v)) c.widths.push_back(static_cast<std::size_t>(parse_u64(p)));
         require(!c.widths.empty(), "at least one width is required");
       }},
      {"model.activation", [](const C& c) { return std::string(activation_name(c.activation)); },
       [](C& c, std::string_view v) { c.activation = parse_activation(v); }},
      bool_field("model.sigma_input", &C::sigma_input),
      {"train.mode", [](const C& c) { return std::string(to_string(c.mode)); },
       [](C& c, std::string_view v) { c.mode = parse_train_mode(v); }},
      size_field("train.epochs", &C::epochs),
      size_field("train.batch_size", &C::batch_size),
      real_field("train.learning_rate", &C::learning_rate),
      real_field("train.lambda", &C::lambda),
      bool_field("train.auto_lambda", &C::auto_lambda),
      bool_field("train.cosine_decay", &C::cosine_decay),
      real_field("train.epsilon", &C::epsilon),
      bool_field("train.detach_denoiser", &C::detach_denoiser),
      size_field("train.subset", &C::train_subset),
      real_field("schedule.sigma_min", &C::sigma_min),
      real_field("schedule.sigma_max", &C::sigma_max),
      size_field("schedule.levels", &C::levels),
      real_field("schedule.alpha0", &C::alpha0),
      real_field("schedule.beta", &C::beta),
      size_field("sampler.steps_per_level", &C::steps_per_level),
      bool_field("sampler.final_denoise", &C::final_denoise),
      bool_field("sampler.quench_final_level", &C::quench_final_level),
      size_field("sampler.average", &C::average),
      size_field("sampler.eval_samples", &C::eval_samples),
      {"operator.kind", [](const C& c) { return c.op; },
       [](C& c, std::string_view v) {
         require(v == "pilot" || v == "multicoil", "unknown operator \"", v, "\"");
         c.op = std::string(v);
       }},
      real_field("operator.alpha", &C::alpha),
      {"operator.pilot_snr_db", [](const C& c) { return join(c.pilot_snr_db, format_double); },
       [](C& c, std::string_view v) {
         c.pilot_snr_db.clear();
         for (const auto& p : split_list(v)) c.pilot_snr_db.push_back(parse_double(p));
       }},
      real_field("operator.accel", &C::accel),
      real_field("operator.center_fraction", &C::center_fraction),
      size_field("operator.coils", &C::coils),
      real_field("operator.sigma_n", &C::mri_sigma_n),
      {"eval.modes",
       [](const C& c) { return join(c.eval_modes, [](TrainMode m) { return std::string(to_string(m)); }); },
       [](C& c, std::string_view v) {
         c.eval_modes.clear();
         for (const auto& p : split_list(v)) c.eval_modes.push_back(parse_train_mode(p));
         require(!c.eval_modes.empty(), "at least one mode is required");
       }},
  };
  return fields;
}

}  // namespace detail

/// Sets one key; errors name the key.
inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key != key) continue;
    try {
      f.set(cfg, detail::trim(value));
    } catch (const Error& e) {
      throw Error(detail::concat("config key ", key, ": ", e.what()));
    }
    return;
  }
  throw Error(detail::concat("unknown config key \"", key, "\""));
}

inline std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  for (const auto& f : detail::config_fields())
    if (f.key == key) return f.get(cfg);
  throw Error(detail::concat("unknown config key \"", key, "\""));
}

/// Range checks that a single key cannot express.
inline void validate(const ExperimentConfig& c) {
  auto check = [](bool ok, std::string_view key, auto... msg) {
    if (!ok) throw Error(detail::concat("config key ", key, ": ", msg...));
  };
  check(c.samples >= 2, "data.samples", "need at least 2 samples");
  check(c.test_fraction > 0 && c.test_fraction < 1, "data.test_fraction", "must lie in (0, 1)");
  check(c.epochs >= 1, "train.epochs", "must be >= 1");
  check(c.batch_size >= 1, "train.batch_size", "must be >= 1");
  check(c.learning_rate > 0, "train.learning_rate", "must be positive");
  check(c.lambda >= 0, "train.lambda", "must be non-negative");
  check(c.epsilon > 0, "train.epsilon", "must be positive");
  check(c.sigma_min > 0, "schedule.sigma_min", "must be positive");
  check(c.sigma_max == 0 || c.sigma_max > c.sigma_min, "schedule.sigma_max", "must exceed schedule.sigma_min (or be 0)");
  check(c.levels >= 2, "schedule.levels", "must be >= 2");
  check(c.alpha0 > 0, "schedule.alpha0", "must be positive");
  check(c.beta >= 0, "schedule.beta", "must be non-negative");
  check(c.steps_per_level >= 1, "sampler.steps_per_level", "must be >= 1");
  check(c.average >= 1, "sampler.average", "must be >= 1");
  check(c.alpha > 0 && c.alpha <= 1, "operator.alpha", "must lie in (0, 1]");
  check(c.accel >= 1, "operator.accel", "must be >= 1");
  check(c.coils >= 1, "operator.coils", "must be >= 1");
  check(c.mri_sigma_n >= 0, "operator.sigma_n", "must be non-negative");
}

inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig cfg = {}) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, "config line ", line_no, ": expected key = value");
    set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config ", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(cfg) + '\n';
  return out;
}

inline void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
  out << serialize_config(cfg);
}

}  // namespace sscore
