#include <gtest/gtest.h>

#include "dsmm/tensor.hpp"
#include "oracles.hpp"

namespace dsmm {
namespace {

using testing::naive_conv;
using testing::random_tensor;

ConvSpec spec(Index k, Index stride, Index out, bool bias = false, Index pad = 0) {
  ConvSpec s;
  s.kernel_size = {k, k};
  s.stride = {stride, stride};
  s.out_channels = out;
  s.has_bias = bias;
  s.padding = {pad, pad};
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) { return (a.vec() - b.vec()).cwiseAbs().maxCoeff(); }

TEST(Tensor, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor({1, 0, 2}), DimensionError);
  try {
    Tensor({2, 3, -1});
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "axis 2");
  }
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, Eigen::VectorXd::Zero(3)), DimensionError);
  const Tensor t({2, 3, 1, 1});
  EXPECT_EQ(t.size(), 6);
}

TEST(Conv2d, HandExample) {
  const Tensor x({1, 1, 2, 2}, (Eigen::VectorXd(4) << 1, 2, 3, 4).finished());
  const Tensor k({1, 1, 2, 2}, (Eigen::VectorXd(4) << 1, 0, 0, 1).finished());
  const Tensor y = conv2d_forward(x, k, std::nullopt, spec(2, 2, 1));
  ASSERT_EQ(y.shape(), (Tensor::Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 5.0);
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
  const Tensor x = random_tensor({2, 3, 7, 5}, 1);
  const Tensor y = conv2d_forward(x, Tensor({4, 3, 3, 3}), std::nullopt, spec(3, 1, 4, false, 1));
  EXPECT_EQ(y.vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Conv2d, BlockConvEqualsDenseMatrixVector) {
  const Tensor x = random_tensor({1, 1, 32, 32}, 7);
  const Tensor k = random_tensor({102, 1, 32, 32}, 8);
  const Tensor y = conv2d_forward(x, k, std::nullopt, spec(32, 32, 102));
  const Eigen::Map<const RowMatrixXd> phi(k.data(), 102, 1024);
  const Eigen::VectorXd expect = phi * x.vec();
  ASSERT_EQ(y.shape(), (Tensor::Shape{1, 102, 1, 1}));
  EXPECT_LT((y.vec() - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Conv2d, MatchesNaiveConvolution) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({2, 3, 9, 7}, seed);
    const Tensor k = random_tensor({4, 3, 3, 3}, seed + 100);
    const Tensor b = random_tensor({4}, seed + 200);
    for (Index stride : {1, 2})
      for (Index pad : {0, 1}) {
        const Tensor y = conv2d_forward(x, k, b, spec(3, stride, 4, true, pad));
        const Tensor ref = naive_conv(x, k, &b, stride, pad);
        ASSERT_TRUE(y.same_shape(ref));
        EXPECT_LT(max_abs_diff(y, ref), 1e-12);
      }
  }
}

TEST(Conv2d, ShapeErrorsNameTheAxis) {
  const Tensor x({1, 2, 4, 4});
  try {
    conv2d_forward(x, Tensor({1, 3, 2, 2}), std::nullopt, spec(2, 2, 1));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "channels");
  }
  EXPECT_THROW(conv2d_forward(x, Tensor({1, 2, 5, 5}), std::nullopt, spec(5, 1, 1)), DimensionError);
  const Tensor y = conv2d_forward(x, Tensor({1, 2, 2, 2}), std::nullopt, spec(2, 2, 1));
  EXPECT_THROW(conv2d_backward(x, Tensor({1, 2, 2, 2}), spec(2, 2, 1), Tensor({1, 1, 3, 3})),
               DimensionError);
  EXPECT_EQ(y.dim(2), 2);
}

TEST(Conv2d, BackwardOfZeroGradIsZero) {
  const Tensor x = random_tensor({1, 2, 6, 6}, 3);
  const Tensor k = random_tensor({3, 2, 3, 3}, 4);
  const ConvSpec s = spec(3, 1, 3, true, 1);
  const ConvGrads g = conv2d_backward(x, k, s, Tensor({1, 3, 6, 6}));
  EXPECT_EQ(g.input.vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.kernels.vec().cwiseAbs().maxCoeff(), 0.0);
  ASSERT_TRUE(g.bias);
  EXPECT_EQ(g.bias->vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Conv2d, ScalarBackward) {
  const Tensor v({1, 1, 1, 1}, 3.0), w({1, 1, 1, 1}, -2.0), g({1, 1, 1, 1}, 5.0);
  const ConvGrads grads = conv2d_backward(v, w, spec(1, 1, 1), g);
  EXPECT_EQ(grads.input[0], -10.0);
  EXPECT_EQ(grads.kernels[0], 15.0);
  EXPECT_FALSE(grads.bias);
}

// Gradients of <conv(x), r> against central differences.
void check_conv_gradients(const Tensor& x, const Tensor& k, const Tensor& b, const ConvSpec& s,
                          std::uint64_t seed, double tol) {
  const Tensor y = conv2d_forward(x, k, b, s);
  const Tensor r = random_tensor(y.shape(), seed);
  const ConvGrads g = conv2d_backward(x, k, s, r);
  auto dot = [&](const Tensor& out) { return out.vec().dot(r.vec()); };
  const Tensor nx = finite_diff_grad([&](const Tensor& p) { return dot(conv2d_forward(p, k, b, s)); }, x, 1e-6);
  const Tensor nk = finite_diff_grad([&](const Tensor& p) { return dot(conv2d_forward(x, p, b, s)); }, k, 1e-6);
  const Tensor nb = finite_diff_grad([&](const Tensor& p) { return dot(conv2d_forward(x, k, p, s)); }, b, 1e-6);
  EXPECT_LT(relative_error(g.input, nx), tol);
  EXPECT_LT(relative_error(g.kernels, nk), tol);
  EXPECT_LT(relative_error(*g.bias, nb), tol);
}

TEST(Conv2d, StridedGradientsMatchFiniteDifferences) {
  const Tensor x = random_tensor({1, 1, 6, 6}, 11);
  const Tensor k = random_tensor({2, 1, 3, 3}, 12);
  const Tensor b = random_tensor({2}, 13);
  check_conv_gradients(x, k, b, spec(3, 3, 2, true), 14, 1e-5);
}

TEST(Conv2d, PaddedGradientsMatchFiniteDifferencesAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({2, 3, 5, 6}, seed);
    const Tensor k = random_tensor({4, 3, 3, 3}, seed + 10);
    const Tensor b = random_tensor({4}, seed + 20);
    check_conv_gradients(x, k, b, spec(3, 1, 4, true, 1), seed + 30, 1e-5);
  }
}

TEST(Conv2d, Linearity) {
  const Tensor k = random_tensor({3, 2, 3, 3}, 5);
  const ConvSpec s = spec(3, 1, 3, false, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x1 = random_tensor({1, 2, 8, 8}, seed), x2 = random_tensor({1, 2, 8, 8}, seed + 50);
    const double a = 0.3 + seed, b = -1.7;
    Tensor mix = x1;
    mix.vec() = a * x1.vec() + b * x2.vec();
    Tensor expect = conv2d_forward(x1, k, std::nullopt, s);
    expect.vec() = a * expect.vec() + b * conv2d_forward(x2, k, std::nullopt, s).vec();
    EXPECT_LT(max_abs_diff(conv2d_forward(mix, k, std::nullopt, s), expect), 1e-12);
  }
}

TEST(Conv2d, AdjointIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ConvSpec s = spec(3, 2, 4, false, 1);
    const Tensor x = random_tensor({1, 2, 9, 9}, seed);
    const Tensor k = random_tensor({4, 2, 3, 3}, seed + 1);
    const Tensor y = conv2d_forward(x, k, std::nullopt, s);
    const Tensor g = random_tensor(y.shape(), seed + 2);
    const double lhs = y.vec().dot(g.vec());
    const double rhs = x.vec().dot(conv2d_backward(x, k, s, g).input.vec());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
  }
}

TEST(Conv2d, Deterministic) {
  const Tensor x = random_tensor({2, 3, 12, 12}, 1);
  const Tensor k = random_tensor({8, 3, 3, 3}, 2);
  const ConvSpec s = spec(3, 1, 8, false, 1);
  const Tensor a = conv2d_forward(x, k, std::nullopt, s), b = conv2d_forward(x, k, std::nullopt, s);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(Relu, Examples) {
  const Tensor x({3}, (Eigen::VectorXd(3) << -1, 0, 2).finished());
  EXPECT_EQ(relu(x).vec(), (Eigen::VectorXd(3) << 0, 0, 2).finished());
  const Tensor pos({4}, (Eigen::VectorXd(4) << 0.5, 1, 2, 3).finished());
  EXPECT_EQ(relu(pos).vec(), pos.vec());
  const Tensor in({2}, (Eigen::VectorXd(2) << -1, 2).finished());
  const Tensor g({2}, (Eigen::VectorXd(2) << 5, 7).finished());
  EXPECT_EQ(relu_backward(in, g).vec(), (Eigen::VectorXd(2) << 0, 7).finished());
  const Tensor zero({1}, 0.0), one({1}, 1.0);
  EXPECT_EQ(relu_backward(zero, one)[0], 0.0);
}

TEST(Relu, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({1, 2, 4, 4}, seed);
    const Tensor r = random_tensor(x.shape(), seed + 9);
    const Tensor numeric = finite_diff_grad([&](const Tensor& p) { return relu(p).vec().dot(r.vec()); }, x, 1e-6);
    EXPECT_LT(relative_error(relu_backward(x, r), numeric), 1e-5);
  }
}

TEST(MseLoss, Examples) {
  const Tensor a = random_tensor({2, 1, 3, 3}, 4);
  const LossResult same = mse_loss(a, a);
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_EQ(same.grad.vec().cwiseAbs().maxCoeff(), 0.0);

  const Tensor pred({1, 1, 2, 2}, 1.0), target({1, 1, 2, 2}, 0.0);
  EXPECT_EQ(mse_loss(pred, target).loss, 2.0);
  EXPECT_EQ(mse_loss(pred, target, LossDivisor::kBatchAndPixels).loss, 0.5);
  EXPECT_THROW(mse_loss(pred, Tensor({1, 1, 2, 3})), DimensionError);
}

TEST(MseLoss, AveragesOverBatchOnly) {
  const Tensor pred({2, 1, 1, 2}, 1.0), target({2, 1, 1, 2}, 0.0);
  const LossResult r = mse_loss(pred, target);
  EXPECT_EQ(r.loss, 1.0);  // 4 unit residuals / (2 * N=2)
  EXPECT_EQ(r.grad[0], 0.5);
}

TEST(MseLoss, GradMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor p = random_tensor({3, 1, 4, 4}, seed), t = random_tensor({3, 1, 4, 4}, seed + 1);
    for (LossDivisor d : {LossDivisor::kBatch, LossDivisor::kBatchAndPixels}) {
      const Tensor numeric = finite_diff_grad([&](const Tensor& q) { return mse_loss(q, t, d).loss; }, p, 1e-6);
      EXPECT_LT(relative_error(mse_loss(p, t, d).grad, numeric), 1e-6);
    }
  }
}

TEST(FiniteDiff, SumGivesOnes) {
  const Tensor x = random_tensor({5}, 2);
  const Tensor g = finite_diff_grad([](const Tensor& p) { return p.vec().sum(); }, x, 1e-6);
  EXPECT_LT((g.vec().array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(FiniteDiff, HalfSquaredNormGivesPoint) {
  const Tensor x = random_tensor({6}, 3);
  const Tensor before = x;
  const Tensor g = finite_diff_grad([](const Tensor& p) { return 0.5 * p.vec().squaredNorm(); }, x, 1e-4);
  EXPECT_LT(max_abs_diff(g, x), 1e-8);
  EXPECT_EQ(x.vec(), before.vec());
}

TEST(FiniteDiff, RejectsNonPositiveEps) {
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor({1}), 0.0), ValidationError);
}

}  // namespace
}  // namespace dsmm
