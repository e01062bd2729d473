#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sscore/autodiff.hpp"
#include "sscore/binary_io.hpp"
#include "sscore/error.hpp"
#include "sscore/random.hpp"

namespace sscore {

// ---------------------------------------------------------------------------
// Complex <-> real packing: real parts first, then imaginary parts.

inline Eigen::VectorXd pack(const Eigen::VectorXcd& z) {
  const auto n = z.size();
  Eigen::VectorXd out(2 * n);
  out.head(n) = z.real();
  out.tail(n) = z.imag();
  return out;
}

inline Eigen::VectorXcd unpack(const Eigen::VectorXd& x) {
  require(x.size() % 2 == 0, "packed complex vector must have even length, got ", x.size());
  const auto n = x.size() / 2;
  Eigen::VectorXcd out(n);
  out.real() = x.head(n);
  out.imag() = x.tail(n);
  return out;
}

// ---------------------------------------------------------------------------

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
};

struct NetworkOptions {
  Activation activation = Activation::softplus;
  /// Conditions f on sigma: input rows are scaled by c = 1/sqrt(1 + sigma^2),
  /// log(sigma) is appended as an extra input, and -sigma c^2 x (the f of a
  /// unit-variance Gaussian) is added to the output so the layers fit a
  /// residual. Off by default: the output-only 1/sigma parameterization is the
  /// reference model.
  bool sigma_input = false;
  /// Initialise the last layer to zero (the network then returns a zero score).
  bool zero_output_layer = false;
};

/// Noise-conditional score model s(x; sigma) = f(x) / sigma, with f a
/// fully-connected network mapping R^N -> R^N.
class ScoreNetwork {
 public:
  static ScoreNetwork init(std::size_t input_dim, const std::vector<std::size_t>& widths, std::uint64_t seed,
                           NetworkOptions options = {}) {
    require(input_dim >= 1, "network input dimension must be >= 1");
    require(!widths.empty(), "network needs at least one hidden width");
    for (auto w : widths) require(w >= 1, "hidden widths must be positive");
    ScoreNetwork net;
    net.input_dim_ = input_dim;
    net.options_ = options;
    Rng rng = substream(seed, {0x5eed});
    std::vector<std::size_t> sizes{input_dim + (options.sigma_input ? 1 : 0)};
    sizes.insert(sizes.end(), widths.begin(), widths.end());
    sizes.push_back(input_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto fan_in = sizes[l];
      const auto fan_out = sizes[l + 1];
      const bool last = l + 2 == sizes.size();
      std::vector<double> w(fan_in * fan_out);
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : w) v = (last && options.zero_output_layer) ? 0.0 : normal(rng) * s;
      net.layers_.push_back({Tensor::trainable({fan_in, fan_out}, std::move(w)),
                             Tensor::trainable({fan_out}, std::vector<double>(fan_out, 0.0))});
    }
    return net;
  }

  /// Rebuild from explicit layer matrices (weights-file loader).
  static ScoreNetwork from_layers(std::size_t input_dim, std::vector<Eigen::MatrixXd> weights,
                                  std::vector<Eigen::VectorXd> biases, Activation activation = Activation::softplus) {
    require(weights.size() == biases.size() && weights.size() >= 2, "network needs >= 2 layers");
    ScoreNetwork net;
    net.input_dim_ = input_dim;
    net.options_.activation = activation;
    const auto in_rows = static_cast<std::size_t>(weights.front().rows());
    require(in_rows == input_dim || in_rows == input_dim + 1, "first layer has ", in_rows,
            " rows, incompatible with input_dim ", input_dim);
    net.options_.sigma_input = in_rows == input_dim + 1;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require(biases[l].size() == weights[l].cols(), "layer ", l, " bias length mismatch");
      if (l > 0) require(weights[l].rows() == weights[l - 1].cols(), "layer ", l, " shape mismatch");
      auto w = Tensor::from_matrix(weights[l]);
      auto b = Tensor::from_vector(biases[l]);
      net.layers_.push_back({Tensor::trainable(w.shape(), {w.data().begin(), w.data().end()}),
                             Tensor::trainable(b.shape(), {b.data().begin(), b.data().end()})});
    }
    require(static_cast<std::size_t>(weights.back().cols()) == input_dim, "last layer must output input_dim=",
            input_dim, ", has ", weights.back().cols());
    return net;
  }

  ScoreNetwork() = default;
  ScoreNetwork(const ScoreNetwork& other)
      : input_dim_(other.input_dim_), options_(other.options_) {
    for (const auto& l : other.layers_) layers_.push_back({l.weight.clone(), l.bias.clone()});
  }
  ScoreNetwork& operator=(const ScoreNetwork& other) {
    if (this != &other) *this = ScoreNetwork(other);
    return *this;
  }
  ScoreNetwork(ScoreNetwork&&) noexcept = default;
  ScoreNetwork& operator=(ScoreNetwork&&) noexcept = default;

  std::size_t input_dim() const { return input_dim_; }
  const NetworkOptions& options() const { return options_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// f(x) for a batch x[rows x N] (or a single vector [N]); sigmas holds one
  /// level per row and is only read when the network takes sigma as input.
  Tensor raw_output(const Tensor& x, std::span<const double> sigmas) const {
    const bool single = x.rank() == 1;
    Tensor h = single ? reshape(x, {1, x.size()}) : x;
    require(h.rank() == 2 && h.shape()[1] == input_dim_, "network expects input width ", input_dim_, ", got ",
            shape_string(x.shape()));
    const std::size_t rows = h.shape()[0];
    require(sigmas.size() == rows, "need one sigma per row: ", sigmas.size(), " for ", rows, " rows");
    const Tensor input = h;
    std::vector<double> skip(rows);
    if (options_.sigma_input) {
      std::vector<double> feature(rows);
      std::vector<double> c_in(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        feature[r] = std::log(sigmas[r]);
        c_in[r] = input_scale(sigmas[r]);
        skip[r] = -sigmas[r] * c_in[r] * c_in[r];
      }
      h = append_column(scale_rows(h, c_in), feature);
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = add_bias(matmul(h, layers_[l].weight), layers_[l].bias);
      if (l + 1 < layers_.size()) h = activation(h, options_.activation);
    }
    if (options_.sigma_input) h = add(h, scale_rows(input, skip));
    return single ? reshape(h, {input_dim_}) : h;
  }

  /// s(x; sigma_r) = f(x_r) / sigma_r row by row.
  Tensor score(const Tensor& x, std::span<const double> sigmas) const {
    for (double s : sigmas) require(s > 0, "noise level must be positive, got ", s);
    Tensor f = raw_output(x, sigmas);
    std::vector<double> inv(sigmas.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / sigmas[i];
    if (f.rank() == 1) return scale(f, inv[0]);
    return scale_rows(f, inv);
  }

  Tensor score(const Tensor& x, double sigma) const {
    require(sigma > 0, "noise level must be positive, got ", sigma);
    const std::size_t rows = x.rank() == 1 ? 1 : x.shape()[0];
    return score(x, std::vector<double>(rows, sigma));
  }

  /// Graph-free batched evaluation for inference; rows are samples.
  Eigen::MatrixXd score_values(const Eigen::MatrixXd& x, double sigma) const {
    require(sigma > 0, "noise level must be positive, got ", sigma);
    require(static_cast<std::size_t>(x.cols()) == input_dim_, "network expects input width ", input_dim_,
            ", got ", x.cols());
    Eigen::MatrixXd h;
    if (options_.sigma_input) {
      h.resize(x.rows(), x.cols() + 1);
      h.leftCols(x.cols()) = input_scale(sigma) * x;
      h.col(x.cols()).setConstant(std::log(sigma));
    } else {
      h = x;
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& w = layers_[l].weight;
      detail::ConstMap wm(w.data().data(), static_cast<Eigen::Index>(w.shape()[0]),
                          static_cast<Eigen::Index>(w.shape()[1]));
      Eigen::Map<const Eigen::RowVectorXd> b(layers_[l].bias.data().data(),
                                              static_cast<Eigen::Index>(layers_[l].bias.size()));
      Eigen::MatrixXd next = h * wm;
      next.rowwise() += b;
      if (l + 1 < layers_.size()) next = next.unaryExpr([&](double v) { return activate(options_.activation, v); });
      h = std::move(next);
    }
    if (options_.sigma_input) {
      const double c = input_scale(sigma);
      h -= sigma * c * c * x;
    }
    return h / sigma;
  }

  Eigen::VectorXd score_values(const Eigen::VectorXd& x, double sigma) const {
    return score_values(Eigen::MatrixXd(x.transpose()), sigma).row(0).transpose();
  }

 private:
  // keeps first-layer inputs O(1) across the ladder for roughly unit-scale data
  static double input_scale(double sigma) { return 1.0 / std::sqrt(1.0 + sigma * sigma); }

  std::size_t input_dim_ = 0;
  NetworkOptions options_;
  std::vector<DenseLayer> layers_;
};

/// Tweedie denoiser at noise level sigma_w: x + sigma_w^2 s(x; sigma_w).
inline Tensor tweedie_denoise(const ScoreNetwork& net, const Tensor& x_noisy, double sigma_w) {
  require(sigma_w > 0, "denoising noise level must be positive, got ", sigma_w);
  return add(x_noisy, scale(net.score(x_noisy, sigma_w), sigma_w * sigma_w));
}

inline Eigen::MatrixXd tweedie_denoise_values(const ScoreNetwork& net, const Eigen::MatrixXd& x_noisy,
                                              double sigma_w) {
  require(sigma_w > 0, "denoising noise level must be positive, got ", sigma_w);
  return x_noisy + sigma_w * sigma_w * net.score_values(x_noisy, sigma_w);
}

/// Score implied by a denoiser output: (g - x) / sigma^2.
template <typename A, typename B>
typename A::PlainObject score_from_denoiser(const Eigen::MatrixBase<A>& denoised, const Eigen::MatrixBase<B>& x_noisy,
                                            double sigma) {
  require(sigma > 0, "noise level must be positive, got ", sigma);
  return (denoised - x_noisy) / (sigma * sigma);
}

// ---------------------------------------------------------------------------
// Weights file: "SSCR", u32 version, u32 input_dim, u32 layer count, then per
// layer u32 rows, u32 cols, f64 weights (row-major), f64 bias. Little-endian.

inline constexpr std::uint32_t kWeightsVersion = 1;

inline void save_weights(const ScoreNetwork& net, const std::filesystem::path& path) {
  io::Writer w;
  w.magic("SSCR");
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(net.input_dim()));
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.weight.shape()[0]));
    w.u32(static_cast<std::uint32_t>(l.weight.shape()[1]));
    w.f64s(l.weight.data());
    w.f64s(l.bias.data());
  }
  w.save(path);
}

inline ScoreNetwork read_weights(const std::filesystem::path& path, Activation activation = Activation::softplus) {
  io::Reader r = io::Reader::open(path);
  r.expect_magic("SSCR");
  const auto version = r.u32();
  require(version == kWeightsVersion, path.string(), ": unsupported weights version ", version, " (expected ",
          kWeightsVersion, ")");
  const auto input_dim = r.u32();
  const auto count = r.u32();
  require(count >= 2 && count < 4096, path.string(), ": implausible layer count ", count);
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto rows = r.u32();
    const auto cols = r.u32();
    require(rows > 0 && cols > 0, path.string(), ": empty layer ", l);
    auto w = r.f64s(static_cast<std::size_t>(rows) * cols);
    auto b = r.f64s(cols);
    weights.push_back(detail::ConstMap(w.data(), rows, cols));
    biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), cols));
  }
  r.expect_end();
  return ScoreNetwork::from_layers(input_dim, std::move(weights), std::move(biases), activation);
}

/// Replaces net's parameters with the file's; net is untouched on error.
inline void load_weights(ScoreNetwork& net, const std::filesystem::path& path) {
  ScoreNetwork loaded = read_weights(path, net.options().activation);
  require(loaded.input_dim() == net.input_dim(), path.string(), ": input_dim mismatch, expected ",
          net.input_dim(), ", found ", loaded.input_dim());
  net = std::move(loaded);
}

}  // namespace sscore
