#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sscore/error.hpp"
#include "sscore/format.hpp"

namespace sscore {

/// 10 log10(||est - truth||^2 / ||truth||^2); -inf for an exact match.
inline double nmse_db(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  require(estimate.size() == truth.size(), "nmse_db: length mismatch ", estimate.size(), " vs ", truth.size());
  const double ref = truth.squaredNorm();
  require(ref > 0, "nmse_db: reference signal has zero norm");
  const double err = (estimate - truth).squaredNorm();
  if (err == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(err / ref);
}

/// ||est - truth|| / ||truth||.
inline double nrmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  require(estimate.size() == truth.size(), "nrmse: length mismatch ", estimate.size(), " vs ", truth.size());
  const double ref = truth.norm();
  require(ref > 0, "nrmse: reference signal has zero norm");
  return (estimate - truth).norm() / ref;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(s.n));
  return s;
}

/// One row of the metrics CSV.
struct MetricRow {
  std::string mode;
  double snr_w_db = 0.0;
  double pilot_snr_db_or_accel = 0.0;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

using MetricsTable = std::vector<MetricRow>;

inline std::string metrics_csv(const MetricsTable& table) {
  std::string out = "mode,snr_w_db,pilot_snr_db_or_accel,metric,mean,std,n,seed\n";
  for (const auto& r : table) {
    out += r.mode + ',' + format_double(r.snr_w_db) + ',' + format_double(r.pilot_snr_db_or_accel) + ',' + r.metric +
           ',' + format_double(r.mean) + ',' + format_double(r.std) + ',' + std::to_string(r.n) + ',' +
           std::to_string(r.seed) + '\n';
  }
  return out;
}

inline void write_metrics(const MetricsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
  out << metrics_csv(table);
}

}  // namespace sscore
