#pragma once

// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// A Tensor is a cheap handle onto an immutable graph node. Operations build a
// fresh graph per loss evaluation; trainable leaves (network parameters) are
// the only nodes that outlive it. backward() returns the gradients instead of
// writing into the leaves, so a parameter set can be shared by several graphs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sscore/error.hpp"

namespace sscore {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

enum class Activation { softplus, relu, tanh };

class Tensor;
class Gradients;

namespace detail {

struct Node;

/// Hands out zero-initialised gradient buffers for parents during backward.
class GradSink {
 public:
  explicit GradSink(std::unordered_map<const Node*, std::vector<double>>& grads) : grads_(grads) {}
  std::vector<double>& operator()(const Node& parent);

 private:
  std::unordered_map<const Node*, std::vector<double>>& grads_;
};

using BackwardFn = std::function<void(const Node& self, std::span<const double> grad, GradSink& sink)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool trainable = false;
  bool requires_grad = false;
};

inline std::vector<double>& GradSink::operator()(const Node& parent) {
  auto [it, inserted] = grads_.try_emplace(&parent);
  if (inserted) it->second.assign(parent.value.size(), 0.0);
  return it->second;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  /// Non-trainable leaf.
  Tensor(Shape shape, std::vector<double> data) {
    require(!std::count(shape.begin(), shape.end(), std::size_t{0}),
            "tensor extents must be positive, got ", shape_string(shape));
    require(shape_size(shape) == data.size(), "tensor data length ", data.size(),
            " does not match shape ", shape_string(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor zeros(Shape shape) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor vector(std::vector<double> data) {
    Shape s{data.size()};
    return Tensor(std::move(s), std::move(data));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
  }
  /// Leaf that receives gradients in backward().
  static Tensor trainable(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    t.node_->trainable = true;
    t.node_->requires_grad = true;
    return t;
  }
  static Tensor from_matrix(const Eigen::MatrixXd& m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), m.rows(), m.cols()) = m;
    return matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(data));
  }
  static Tensor from_vector(const Eigen::VectorXd& v) {
    return vector(std::vector<double>(v.data(), v.data() + v.size()));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    require(size() == 1, "item() on non-scalar tensor of shape ", shape_string(shape()));
    return node_->value[0];
  }

  bool is_leaf() const { return node_->parents.empty(); }
  bool is_trainable() const { return node_->trainable; }
  bool requires_grad() const { return node_->requires_grad; }

  /// In-place access for leaves only (optimizer updates, finite differences).
  std::span<double> mutable_data() {
    require(is_leaf(), "mutable_data() is only available on leaf tensors");
    return node_->value;
  }

  Eigen::MatrixXd to_matrix() const {
    require(rank() <= 2, "to_matrix() needs rank <= 2, got ", shape_string(shape()));
    const auto rows = rank() == 2 ? shape()[0] : 1;
    const auto cols = rank() == 2 ? shape()[1] : size();
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        node_->value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  Eigen::VectorXd to_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(node_->value.data(), static_cast<Eigen::Index>(size()));
  }

  /// Deep copy that keeps only the value (and the trainable flag for leaves).
  Tensor clone() const {
    Tensor t(shape(), node_->value);
    t.node_->trainable = is_leaf() && is_trainable();
    t.node_->requires_grad = t.node_->trainable;
    return t;
  }

  const detail::Node* id() const { return node_.get(); }

 private:
  friend class Gradients;
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, detail::BackwardFn);
  friend Gradients backward(const Tensor& loss);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gradient of a scalar w.r.t. every trainable leaf reachable from it.
class Gradients {
 public:
  /// Zeros when the leaf did not influence the loss.
  std::vector<double> of(const Tensor& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
    return it->second;
  }
  bool contains(const Tensor& leaf) const { return grads_.count(leaf.id()) > 0; }

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      detail::BackwardFn fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->parents.push_back(in.node_);
  }
  if (node->requires_grad) node->backward = std::move(fn);
  return Tensor(std::move(node));
}

inline Gradients backward(const Tensor& loss) {
  require(loss.size() == 1, "backward() needs a scalar loss, got shape ", shape_string(loss.shape()));
  Gradients out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS; each node is visited exactly once.
  std::vector<const detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack{{loss.node_.get(), 0}};
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const detail::Node*, std::vector<double>> grads;
  grads[loss.node_.get()] = {1.0};
  detail::GradSink sink(grads);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::Node* node = *it;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    if (node->parents.empty()) {
      if (node->trainable) out.grads_[node] = std::move(g->second);
      grads.erase(g);
      continue;
    }
    const std::vector<double> grad = std::move(g->second);
    grads.erase(g);
    node->backward(*node, grad, sink);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace detail {

enum class BinaryKind { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.size() == 1 && a.rank() <= 1;
  const bool b_scalar = b.size() == 1 && b.rank() <= 1;
  require(same || a_scalar || b_scalar, "shape mismatch: ", shape_string(a.shape()), " vs ",
          shape_string(b.shape()));
  const Tensor& big = (same || b_scalar) ? a : b;
  const std::size_t n = big.size();
  auto av = a.data();
  auto bv = b.data();
  const std::size_t sa = a.size() == n ? 1 : 0;  // stride 0 broadcasts the scalar
  const std::size_t sb = b.size() == n ? 1 : 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i * sa];
    const double y = bv[i * sb];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  return make_op(big.shape(), std::move(out), {a, b},
                 [kind, sa, sb, n](const Node& self, std::span<const double> g, GradSink& sink) {
                   const Node& pa = *self.parents[0];
                   const Node& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     auto& ga = sink(pa);
                     for (std::size_t i = 0; i < n; ++i) {
                       const double d = kind == BinaryKind::mul ? g[i] * pb.value[i * sb] : g[i];
                       ga[i * sa] += d;
                     }
                   }
                   if (pb.requires_grad) {
                     auto& gb = sink(pb);
                     for (std::size_t i = 0; i < n; ++i) {
                       double d = g[i];
                       if (kind == BinaryKind::sub) d = -d;
                       if (kind == BinaryKind::mul) d *= pa.value[i * sa];
                       gb[i * sb] += d;
                     }
                   }
                 });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::mul); }

/// Multiply by a constant.
inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return make_op(a.shape(), std::move(out), {a},
                 [c](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   auto& ga = sink(*self.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                 });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return scale(a, 1.0 / c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

/// Same values, cut from the graph.
inline Tensor detach(const Tensor& a) { return Tensor(a.shape(), {a.data().begin(), a.data().end()}); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_size(shape) == a.size(), "cannot reshape ", shape_string(a.shape()), " to ",
          shape_string(shape));
  return make_op(std::move(shape), {a.data().begin(), a.data().end()}, {a},
                 [](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   auto& ga = sink(*self.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul needs two matrices, got ", shape_string(a.shape()),
          " and ", shape_string(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  require(b.shape()[0] == a.shape()[1], "matmul inner dimension mismatch: ", shape_string(a.shape()),
          " vs ", shape_string(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.data().data(), m, k) * detail::ConstMap(b.data().data(), k, n);
  return make_op(Shape{a.shape()[0], b.shape()[1]}, std::move(out), {a, b},
                 [m, k, n](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   const auto& pa = *self.parents[0];
                   const auto& pb = *self.parents[1];
                   detail::ConstMap gm(g.data(), m, n);
                   if (pa.requires_grad) {
                     auto& ga = sink(pa);
                     detail::MutMap(ga.data(), m, k).noalias() +=
                         gm * detail::ConstMap(pb.value.data(), k, n).transpose();
                   }
                   if (pb.requires_grad) {
                     auto& gb = sink(pb);
                     detail::MutMap(gb.data(), k, n).noalias() +=
                         detail::ConstMap(pa.value.data(), m, k).transpose() * gm;
                   }
                 });
}

/// a[rows x n] + bias[n], bias repeated on every row (dense-layer bias).
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require(a.rank() == 2 && bias.size() == a.shape()[1], "add_bias: ", shape_string(a.shape()),
          " incompatible with bias ", shape_string(bias.shape()));
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return make_op(a.shape(), std::move(out), {a, bias},
                 [rows, cols](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   const auto& pa = *self.parents[0];
                   const auto& pb = *self.parents[1];
                   if (pa.requires_grad) {
                     auto& ga = sink(pa);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (pb.requires_grad) {
                     auto& gb = sink(pb);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                   }
                 });
}

/// Row r of a[rows x n] multiplied by the constant factors[r].
inline Tensor scale_rows(const Tensor& a, std::span<const double> factors) {
  require(a.rank() == 2 && factors.size() == a.shape()[0], "scale_rows: ", factors.size(),
          " factors for tensor ", shape_string(a.shape()));
  const std::size_t cols = a.shape()[1];
  std::vector<double> f(factors.begin(), factors.end());
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i / cols];
  return make_op(a.shape(), std::move(out), {a},
                 [f = std::move(f), cols](const detail::Node& self, std::span<const double> g,
                                          detail::GradSink& sink) {
                   auto& ga = sink(*self.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f[i / cols] * g[i];
                 });
}

/// Appends a constant column: [rows x n] -> [rows x (n+1)].
inline Tensor append_column(const Tensor& a, std::span<const double> column) {
  require(a.rank() == 2 && column.size() == a.shape()[0], "append_column: ", column.size(),
          " entries for tensor ", shape_string(a.shape()));
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  std::vector<double> out(rows * (cols + 1));
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * (cols + 1)));
    out[r * (cols + 1) + cols] = column[r];
  }
  return make_op(Shape{rows, cols + 1}, std::move(out), {a},
                 [rows, cols](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   auto& ga = sink(*self.parents[0]);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * (cols + 1) + c];
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::softplus: return detail::softplus(x);
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

inline double activate_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::softplus: return detail::sigmoid(x);
    case Activation::relu: return x > 0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline Tensor activation(const Tensor& a, Activation kind) {
  std::vector<double> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = activate(kind, av[i]);
  return make_op(a.shape(), std::move(out), {a},
                 [kind](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   const auto& pa = *self.parents[0];
                   auto& ga = sink(pa);
                   for (std::size_t i = 0; i < g.size(); ++i)
                     ga[i] += g[i] * activate_derivative(kind, pa.value[i]);
                 });
}

inline Tensor sum(const Tensor& a) {
  auto av = a.data();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_op(Shape{}, {s}, {a},
                 [](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   auto& ga = sink(*self.parents[0]);
                   for (auto& v : ga) v += g[0];
                 });
}

/// Sum of squares of all entries.
inline Tensor norm_sq(const Tensor& a) {
  auto av = a.data();
  double s = 0.0;
  for (double v : av) s += v * v;
  return make_op(Shape{}, {s}, {a},
                 [](const detail::Node& self, std::span<const double> g, detail::GradSink& sink) {
                   const auto& pa = *self.parents[0];
                   auto& ga = sink(pa);
                   for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * pa.value[i] * g[0];
                 });
}

// ---------------------------------------------------------------------------
// Test oracle

/// Central differences of a scalar-valued closure with respect to every entry
/// of the given leaves. The closure must rebuild its graph on every call.
inline std::vector<std::vector<double>> finite_difference_gradient(const std::function<Tensor()>& f,
                                                                   std::vector<Tensor> leaves,
                                                                   double h = 1e-6) {
  require(h > 0, "finite-difference step must be positive, got ", h);
  std::vector<std::vector<double>> out;
  out.reserve(leaves.size());
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_data();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace sscore
