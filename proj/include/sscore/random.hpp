#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace sscore {

using Rng = std::mt19937_64;

/// Independent stream derived from a base seed and a list of stream tags
/// (chain index, sample index, purpose code...). Identical tags always give
/// the identical stream.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

/// Circularly-symmetric complex Gaussian CN(0, variance): real and imaginary
/// parts each carry half of the variance.
inline Eigen::VectorXcd complex_normal_vector(Rng& rng, Eigen::Index n, double variance = 1.0) {
  std::normal_distribution<double> dist(0.0, std::sqrt(variance / 2.0));
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = dist(rng);
    const double im = dist(rng);
    v[i] = {re, im};
  }
  return v;
}

}  // namespace sscore
