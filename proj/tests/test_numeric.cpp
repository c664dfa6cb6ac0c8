#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dualformer/gradcheck.hpp"
#include "dualformer/ops.hpp"

using namespace dualformer;

namespace {

Tensor random_matrix(std::size_t m, std::size_t n, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(m * n);
  for (auto& x : v) x = dist(rng);
  return Tensor({m, n}, std::move(v), grad);
}

// Textbook triple loop, independent of the blocked kernels.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.at(i, p) * b.at(p, j);
  return c;
}

}  // namespace

TEST(Matmul, IdentityAndHandProduct) {
  auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  auto m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(eye, m).values(), m.values());
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})).item(), 11.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(7);
  for (std::size_t m : {1u, 5u, 17u, 32u})
    for (std::size_t n : {1u, 3u, 32u}) {
      auto a = random_matrix(m, 7, rng), b = random_matrix(7, n, rng);
      auto got = matmul(a, b);
      auto want = naive_matmul(a, b);
      for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos);
  }
}

TEST(Softmax, UniformStableAndOracle) {
  auto u = softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  auto s = softmax(Tensor::vector({1000, 0}), 0);
  EXPECT_NEAR(s[0], 1.0, 1e-15);
  EXPECT_LT(s[1], 1e-300);

  auto t = softmax(Tensor::vector({1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(t[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, SlicesSumToOneAlongEitherAxis) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = scale(random_matrix(6, 9, rng), 30.0);
    auto rows = softmax(x, 1);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) s += rows.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    auto cols = softmax(x, 0);
    for (std::size_t c = 0; c < 9; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < 6; ++r) s += cols.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_THROW(softmax(Tensor::vector({1, 2}), 1), ContractError);
}

TEST(LayerNorm, ConstantRowAndAffineCollapse) {
  auto x = Tensor::matrix({{3, 3, 3, 3}});
  auto one = Tensor::full({4}, 1.0), zero = Tensor::zeros({4});
  auto normed = layer_norm(x, one, zero);
  for (double v : normed.data()) EXPECT_EQ(v, 0.0);

  auto beta = Tensor::vector({1, -2, 3, 0.5});
  std::mt19937_64 rng(1);
  auto y = layer_norm(random_matrix(3, 4, rng), zero, beta);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(r, c), beta[c]);
}

TEST(LayerNorm, RowMoments) {
  std::mt19937_64 rng(11);
  auto x = scale(random_matrix(10, 16, rng), 5.0);
  auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-12);
  for (std::size_t r = 0; r < 10; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at(r, c);
    mu /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Backward, SumAndQuadratic) {
  auto x = Tensor({2, 3}, {1, -2, 3, 0.5, 7, -1}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  x.zero_grad();
  backward(scale(sum(mul(x, x)), 0.5));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
}

TEST(Backward, RejectsNonScalarAndDetachedLoss) {
  auto x = Tensor::zeros({2, 2}, true);
  EXPECT_THROW(backward(x * 2.0), ContractError);
  EXPECT_THROW(backward(sum(Tensor::zeros({2}))), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // y = x*x + x, dy/dx = 2x + 1 with x consumed three times.
  auto x = Tensor::vector({1.5, -2.0}, true);
  backward(sum(add(mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
}

TEST(Backward, GradientLinearity) {
  std::mt19937_64 rng(5);
  auto w = random_matrix(4, 3, rng, true);
  auto a = random_matrix(2, 4, rng), b = random_matrix(2, 4, rng);
  auto loss1 = [&] { return sum(softmax(matmul(a, w), 1) * matmul(a, w)); };
  auto loss2 = [&] { return mean(gelu(matmul(b, w))); };

  backward(loss1());
  backward(loss2());
  const auto separate = w.grad();
  w.zero_grad();
  backward(add(loss1(), loss2()));
  const auto joint = w.grad();
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(separate[i], joint[i], 1e-12);
}

TEST(Numeric, NonFiniteRaisesImmediately) {
  auto x = Tensor::vector({1e308, 1e308});
  EXPECT_THROW(scale(x, 10.0), NumericError);
  EXPECT_THROW(Tensor::vector({1.0}) * Tensor::vector({std::nan("")}), NumericError);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto f = [](const Tensor& x) { return scale(sum(mul(x, x)), 0.5); };
  EXPECT_LT(finite_diff_check(f, Tensor::vector({1, 2, 3})), 1e-8);
}

TEST(FiniteDiff, SoftmaxMatmulChain) {
  std::mt19937_64 rng(9);
  auto a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng);
  auto f = [&](const Tensor& x) { return sum(mul(softmax(matmul(x, b), 1), matmul(x, b))); };
  EXPECT_LT(finite_diff_check(f, a), 1e-6);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  // Forward says x^2, the analytic path only sees x (detached factor).
  auto f = [](const Tensor& x) { return sum(mul(x, x.detach())); };
  EXPECT_GT(finite_diff_check(f, Tensor::vector({1, 2, 3})), 0.1);
}

// Every differentiable op at 20 random points.
TEST(FiniteDiff, EveryOpAtRandomPoints) {
  std::mt19937_64 rng(2024);
  const auto w34 = random_matrix(3, 4, rng);
  const auto w46 = random_matrix(4, 6, rng);
  const auto w44 = random_matrix(4, 4, rng);
  auto contract = [](const Tensor& y, const Tensor& w) { return sum(mul(y, w)); };

  std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
      {"add", [&](const Tensor& x) { return contract(add(x, mul(x, x)), w34); }},
      {"sub", [&](const Tensor& x) { return contract(sub(x, mul(x, x)), w34); }},
      {"mul", [&](const Tensor& x) { return contract(mul(x, x), w34); }},
      {"matmul", [&](const Tensor& x) { return sum(mul(matmul(x, w46), matmul(x, w46))); }},
      {"transpose", [&](const Tensor& x) { return contract(matmul(transpose(x), x), w44); }},
      {"softmax0", [&](const Tensor& x) { return contract(softmax(x, 0), w34); }},
      {"softmax1", [&](const Tensor& x) { return contract(softmax(x, 1), w34); }},
      {"layer_norm", [&](const Tensor& x) {
         return contract(layer_norm(x, Tensor::vector({1, 2, 0.5, -1}), Tensor::vector({0, 1, 0, 1})), w34);
       }},
      {"gelu", [&](const Tensor& x) { return contract(gelu(x), w34); }},
      {"add_row", [&](const Tensor& x) { return contract(gelu(add_row(x, reshape(slice_rows(x, 0, 1), {4}))), w34); }},
      {"mean_cols", [&](const Tensor& x) { return sum(mul(mean_cols(x), mean_cols(x))); }},
      {"slice_cols", [&](const Tensor& x) { return sum(gelu(slice_cols(x, 1, 3))); }},
      {"concat_cols", [&](const Tensor& x) {
         return contract(gelu(concat_cols({slice_cols(x, 2, 4), slice_cols(x, 0, 2)})), w34);
       }},
      {"pad_rows", [&](const Tensor& x) { return sum(gelu(pad_rows(x, 2, 6))); }},
      {"reshape", [&](const Tensor& x) { return contract(reshape(gelu(x), {4, 3}), transpose(w34)); }},
      {"gather", [&](const Tensor& x) {
         return sum(mul(softmax(gather(x, {0, 5, 7, 11}), 0), Tensor::vector({1, 2, 3, 4})));
       }},
      {"mse", [&](const Tensor& x) { return mse_loss(x, w34); }},
  };
  for (auto& [name, f] : cases) {
    double worst = 0.0;
    for (int point = 0; point < 20; ++point)
      worst = std::max(worst, finite_diff_check(f, random_matrix(3, 4, rng)));
    EXPECT_LE(worst, 1e-4) << name;
  }
}

TEST(Shape, SliceConcatAndPad) {
  auto x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(slice_cols(x, 1, 3).values(), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_EQ(concat_cols({slice_cols(x, 2, 3), slice_cols(x, 0, 2)}).values(),
            (std::vector<double>{3, 1, 2, 6, 4, 5}));
  EXPECT_EQ(pad_rows(slice_rows(x, 1, 2), 1, 3).values(), (std::vector<double>{0, 0, 0, 4, 5, 6, 0, 0, 0}));
  EXPECT_THROW(pad_rows(x, 2, 3), ContractError);
  EXPECT_THROW(slice_cols(x, 2, 2), ContractError);
}
