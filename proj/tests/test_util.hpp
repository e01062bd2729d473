#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sscore/autodiff.hpp"

inline std::vector<double> to_std(const sscore::Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Largest per-coordinate relative error, with the denominator floored at
/// 1e-6 * max(1, largest reference magnitude) so exact zeros compare absolutely.
inline double max_rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double scale = 1.0;
  for (double w : want) scale = std::max(scale, std::abs(w));
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max({std::abs(got[i]), std::abs(want[i]), 1e-6 * scale});
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Eigen::VectorXcd random_complex(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = {d(rng), d(rng)};
  return v;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sscore_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}
