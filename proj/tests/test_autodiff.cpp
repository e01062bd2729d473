#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sscore/autodiff.hpp"
#include "test_util.hpp"

using namespace sscore;

TEST(Autodiff, ElementwiseBasics) {
  auto a = Tensor::vector({1, 2});
  auto b = Tensor::vector({3, 4});
  EXPECT_EQ(to_std(add(a, b)), (std::vector<double>{4, 6}));
  EXPECT_EQ(to_std(mul(Tensor::vector({2, 3}), Tensor::scalar(0))), (std::vector<double>{0, 0}));
  EXPECT_EQ(to_std(sub(b, Tensor::scalar(1))), (std::vector<double>{2, 3}));
}

TEST(Autodiff, SubSelfHasZeroGradient) {
  auto x = Tensor::trainable({3}, {0.5, -1.0, 2.0});
  auto d = sub(x, x);
  EXPECT_EQ(to_std(d), (std::vector<double>{0, 0, 0}));
  auto g = backward(sum(d)).of(x);
  EXPECT_EQ(g, (std::vector<double>{0, 0, 0}));
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::vector({1, 2});
  auto b = Tensor::vector({1, 2, 3});
  try {
    add(a, b);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2]"), std::string::npos);
    EXPECT_NE(what.find("[3]"), std::string::npos);
  }
}

TEST(Autodiff, Matmul) {
  auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto v = Tensor::matrix(2, 1, {5, 7});
  EXPECT_EQ(to_std(matmul(eye, v)), (std::vector<double>{5, 7}));
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(to_std(matmul(a, Tensor::matrix(2, 1, {1, 1}))), (std::vector<double>{3, 7}));

  auto x = Tensor::trainable({2, 1}, {0.3, -0.2});
  // column sums of A
  EXPECT_EQ(backward(sum(matmul(a, x))).of(x), (std::vector<double>{4, 6}));
  EXPECT_THROW(matmul(a, Tensor::matrix(3, 1, {1, 1, 1})), Error);
}

TEST(Autodiff, Activations) {
  EXPECT_NEAR(activation(Tensor::scalar(0), Activation::softplus).item(), std::log(2.0), 1e-15);
  EXPECT_EQ(activation(Tensor::scalar(-3), Activation::relu).item(), 0.0);
  auto x = Tensor::trainable({}, {0.0});
  auto t = activation(x, Activation::tanh);
  EXPECT_EQ(t.item(), 0.0);
  EXPECT_EQ(backward(t).of(x)[0], 1.0);
  // large arguments must not overflow
  EXPECT_NEAR(activation(Tensor::scalar(800), Activation::softplus).item(), 800.0, 1e-12);
  EXPECT_NEAR(activation(Tensor::scalar(-800), Activation::softplus).item(), 0.0, 1e-300);
}

TEST(Autodiff, Reductions) {
  EXPECT_EQ(norm_sq(Tensor::vector({3, 4})).item(), 25.0);
  EXPECT_EQ(sum(Tensor::zeros({4, 3})).item(), 0.0);
  auto x = Tensor::trainable({2}, {1, -2});
  EXPECT_EQ(backward(norm_sq(x)).of(x), (std::vector<double>{2, -4}));
}

TEST(Autodiff, BackwardExamples) {
  auto w = Tensor::trainable({1}, {2.0});
  auto x = Tensor::vector({3.0});
  EXPECT_DOUBLE_EQ(backward(norm_sq(mul(w, x))).of(w)[0], 36.0);

  auto unused = Tensor::trainable({2}, {1, 1});
  auto g = backward(norm_sq(w));
  EXPECT_EQ(g.of(unused), (std::vector<double>{0, 0}));

  // a subgraph consumed twice: d/dx ||x + x||^2 = 8x
  auto y = Tensor::trainable({2}, {0.5, -1.5});
  auto f = [](const Tensor& t) { return t; };
  auto gy = backward(norm_sq(add(f(y), f(y)))).of(y);
  EXPECT_DOUBLE_EQ(gy[0], 4.0);
  EXPECT_DOUBLE_EQ(gy[1], -12.0);

  EXPECT_THROW(backward(Tensor::vector({1, 2})), Error);
}

TEST(Autodiff, NonTrainableLeavesGetNoGradient) {
  auto c = Tensor::vector({1, 2});
  auto w = Tensor::trainable({2}, {1, 1});
  auto g = backward(sum(mul(c, w)));
  EXPECT_FALSE(g.contains(c));
  EXPECT_EQ(g.of(w), (std::vector<double>{1, 2}));
}

TEST(Autodiff, SharedSubgraphEqualsSumOfConsumers) {
  auto x = Tensor::trainable({3}, {0.2, -0.7, 1.1});
  auto shared = activation(scale(x, 1.3), Activation::tanh);
  auto c1 = norm_sq(shared);
  auto c2 = sum(mul(shared, Tensor::vector({1, 2, 3})));
  auto both = backward(add(c1, c2)).of(x);
  auto g1 = backward(c1).of(x);
  auto g2 = backward(c2).of(x);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(both[i], g1[i] + g2[i], 1e-14);
}

TEST(Autodiff, FiniteDifferenceBasics) {
  auto x = Tensor::trainable({2}, {1, 2});
  auto fd = finite_difference_gradient([&] { return norm_sq(x); }, {x}, 1e-6);
  EXPECT_NEAR(fd[0][0], 2.0, 1e-8);
  EXPECT_NEAR(fd[0][1], 4.0, 1e-8);
  auto cst = finite_difference_gradient([] { return Tensor::scalar(3.0); }, {x}, 1e-6);
  EXPECT_EQ(cst[0], (std::vector<double>{0, 0}));
  EXPECT_THROW(finite_difference_gradient([&] { return norm_sq(x); }, {x}, 0.0), Error);
}

// Every differentiable op against central differences on random inputs in [-2, 2].
TEST(Autodiff, OpsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2);
  auto rand_leaf = [&](Shape s) {
    std::vector<double> v(shape_size(s));
    for (auto& e : v) e = u(rng);
    return Tensor::trainable(s, v);
  };
  const std::vector<double> factors{0.5, -1.5, 2.0};
  const std::vector<double> column{0.1, 0.2, -0.3};
  for (int trial = 0; trial < 5; ++trial) {
    auto a = rand_leaf({3, 4});
    auto b = rand_leaf({3, 4});
    auto w = rand_leaf({4, 2});
    auto bias = rand_leaf({2});
    auto s = rand_leaf({});
    auto w5 = rand_leaf({5, 2});
    std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return norm_sq(add(a, b)); }},
        {"sub", [&] { return norm_sq(sub(a, b)); }},
        {"mul", [&] { return norm_sq(mul(a, b)); }},
        {"scalar_mul", [&] { return norm_sq(mul(a, s)); }},
        {"scalar_sub", [&] { return norm_sq(sub(s, a)); }},
        {"scale", [&] { return sum(scale(a, -0.7)); }},
        {"matmul", [&] { return norm_sq(matmul(a, w)); }},
        {"add_bias", [&] { return norm_sq(add_bias(matmul(a, w), bias)); }},
        {"scale_rows", [&] { return norm_sq(scale_rows(a, factors)); }},
        {"append_column", [&] { return norm_sq(matmul(append_column(a, column), w5)); }},
        {"softplus", [&] { return norm_sq(activation(a, Activation::softplus)); }},
        {"tanh", [&] { return norm_sq(activation(a, Activation::tanh)); }},
        {"relu", [&] { return norm_sq(activation(a, Activation::relu)); }},
        {"reshape", [&] { return norm_sq(mul(reshape(a, {12}), reshape(b, {12}))); }},
        {"sum", [&] { return mul(sum(a), sum(b)); }},
    };
    for (auto& [name, f] : cases) {
      std::vector<Tensor> leaves{a, b, w, bias, s, w5};
      auto grads = backward(f());
      auto fd = finite_difference_gradient(f, leaves, 1e-6);
      for (std::size_t k = 0; k < leaves.size(); ++k)
        EXPECT_LT(max_rel_error(grads.of(leaves[k]), fd[k]), 1e-4) << name << " leaf " << k;
    }
  }
}

TEST(Autodiff, DetachStopsGradient) {
  auto x = Tensor::trainable({2}, {1, 2});
  auto g = backward(norm_sq(add(detach(x), x))).of(x);
  EXPECT_DOUBLE_EQ(g[0], 4.0);  // 2 (x + x) through the live branch only
  EXPECT_DOUBLE_EQ(g[1], 8.0);
}

TEST(Autodiff, TensorInvariants) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), Error);
  EXPECT_THROW(Tensor({0}, {}), Error);
  auto t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(t.is_leaf());
  EXPECT_FALSE(t.requires_grad());
  EXPECT_EQ(t.to_matrix()(1, 2), 6.0);
  auto op = add(t, t);
  EXPECT_THROW(op.mutable_data(), Error);
}
