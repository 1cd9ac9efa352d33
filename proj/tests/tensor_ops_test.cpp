#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmlganr/layers.hpp"

using namespace dmlganr;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

Tensor image(std::initializer_list<double> v, Index c, Index h, Index w) { return Tensor({c, h, w}, v); }

}  // namespace

TEST(TensorTest, ShapeAndStorage) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t(1, 2), 6);
  EXPECT_EQ(t.matrix().row(1).sum(), 15);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2})(2, 1), 6);
}

TEST(TensorTest, SliceRoundTrip) {
  std::mt19937_64 rng(3);
  Tensor t = random_tensor({3, 2, 2, 2}, rng);
  Tensor copy({3, 2, 2, 2});
  for (Index n = 0; n < 3; ++n) copy.set_slice(n, t.slice(n));
  EXPECT_EQ(copy, t);
}

TEST(ConvTest, ScalarKernelScalesInput) {
  const Tensor out = conv2d(image({1, 2, 3, 4}, 1, 2, 2), Tensor({1, 1, 1, 1}, {2.0}), Tensor({1}), 1, 0);
  EXPECT_EQ(out, image({2, 4, 6, 8}, 1, 2, 2));
}

TEST(ConvTest, ZeroKernelAnnihilates) {
  std::mt19937_64 rng(1);
  const Tensor out = conv2d(random_tensor({2, 5, 5}, rng), Tensor({3, 2, 3, 3}), Tensor({3}), 1, 1);
  EXPECT_EQ(out.vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(ConvTest, WindowSumOfOnes) {
  const Tensor out = conv2d(Tensor({1, 4, 4}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), 1, 0);
  ASSERT_EQ(out.shape(), (Shape{1, 2, 2}));
  for (double v : out.values()) EXPECT_EQ(v, 9.0);
}

TEST(ConvTest, OutputExtentFormula) {
  const Tensor out = conv2d(Tensor({2, 7, 9}), Tensor({4, 2, 3, 3}), Tensor({4}), 2, 1);
  EXPECT_EQ(out.shape(), (Shape{4, 4, 5}));
}

TEST(ConvTest, BadShapesThrow) {
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({2}), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 0, 0), DimensionError);
  EXPECT_THROW(conv2d_transposed(Tensor({2, 2, 2}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST(ConvTransposedTest, AdjointOnSmallCase) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({1, 4, 4}, rng);
  const Tensor k = random_tensor({1, 1, 3, 3}, rng);
  const Tensor g = random_tensor({1, 2, 2}, rng);
  const double lhs = dot(conv2d(a, k, Tensor({1}), 1, 0), g);
  const double rhs = dot(a, conv2d_transposed(g, k, 1, 0));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(ConvTransposedTest, ZeroGradGivesZero) {
  std::mt19937_64 rng(2);
  const Tensor r = conv2d_transposed(Tensor({2, 3, 3}), random_tensor({2, 3, 3, 3}, rng), 1, 1);
  EXPECT_EQ(r.vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(ConvTransposedTest, ScalarKernelMultiplies) {
  const Tensor g = image({1, -2, 3, 0.5}, 1, 2, 2);
  EXPECT_EQ(conv2d_transposed(g, Tensor({1, 1, 1, 1}, {-3.0}), 1, 0), image({-3, 6, -9, -1.5}, 1, 2, 2));
}

TEST(ConvTransposedTest, AdjointRandomGeometries) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const Index c = 1 + pick(rng) % 2, o = 1 + pick(rng), k = 1 + pick(rng), stride = 1 + pick(rng) % 2;
    const Index pad = std::min<Index>(pick(rng) % 2, k - 1);
    const Index hw = k + 2 + pick(rng) * 2;
    const Tensor a = random_tensor({c, hw, hw + 1}, rng);
    const Tensor w = random_tensor({o, c, k, k}, rng);
    const Tensor fwd = conv2d(a, w, Tensor({o}), stride, pad);
    const Tensor g = random_tensor(fwd.shape(), rng);
    const Tensor back = conv2d_transposed(g, w, stride, pad, std::array<Index, 2>{hw, hw + 1});
    EXPECT_NEAR(dot(fwd, g), dot(a, back), 1e-10 * (1 + std::abs(dot(fwd, g))));
    // The rotate-then-transposed form is the same operator.
    const Tensor rot = rotated_transposed_conv(rotate180(w), g, stride, pad, std::array<Index, 2>{hw, hw + 1});
    EXPECT_LT((rot.vec() - back.vec()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ConvTransposedTest, KernelGradMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Tensor a = random_tensor({2, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor g = random_tensor({3, 3, 3}, rng);
  const Tensor analytic = conv2d_kernel_grad(a, g, 3, 3, 1, 0);
  const double h = 1e-6;
  for (Index i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = dot(conv2d(a, w, Tensor({3}), 1, 0), g);
    w[i] = keep - h;
    const double down = dot(conv2d(a, w, Tensor({3}), 1, 0), g);
    w[i] = keep;
    EXPECT_NEAR(analytic[i], (up - down) / (2 * h), 1e-6 * std::max(1.0, std::abs(analytic[i])));
  }
}

TEST(ConvTransposedTest, InputGradMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({2, 6, 6}, rng);
  const Tensor w = random_tensor({2, 2, 3, 3}, rng);
  const Tensor g = random_tensor({2, 6, 6}, rng);
  const Tensor analytic = conv2d_transposed(g, w, 1, 1);
  const double h = 1e-6;
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double keep = a[i];
    a[i] = keep + h;
    const double up = dot(conv2d(a, w, Tensor({2}), 1, 1), g);
    a[i] = keep - h;
    const double down = dot(conv2d(a, w, Tensor({2}), 1, 1), g);
    a[i] = keep;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8}));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(PoolTest, SingleWindow) {
  const auto r = max_pool(image({1, 2, 3, 4}, 1, 2, 2), 2, 2);
  EXPECT_EQ(r.values[0], 4.0);
  EXPECT_EQ(r.map.argmax[0], 3);
  EXPECT_EQ(max_pool(image({1, 5, 7, 3}, 1, 2, 2), 2, 2).values[0], 7.0);
}

TEST(PoolTest, TiesGoToFirstCell) {
  const auto r = max_pool(Tensor({2, 4, 4}, 1.5), 2, 2);
  EXPECT_EQ(r.values.shape(), (Shape{2, 2, 2}));
  for (double v : r.values.values()) EXPECT_EQ(v, 1.5);
  const std::vector<Index> expected{0, 2, 8, 10, 16, 18, 24, 26};
  EXPECT_EQ(r.map.argmax, expected);
}

TEST(PoolTest, WindowLargerThanInputThrows) {
  EXPECT_THROW(max_pool(Tensor({1, 2, 2}), 3, 3), DimensionError);
}

TEST(PoolTest, UnpoolRoutesToArgmax) {
  const auto r = max_pool(image({1, 2, 3, 4}, 1, 2, 2), 2, 2);
  EXPECT_EQ(max_unpool(Tensor({1, 1, 1}, {2.5}), r.map, {1, 2, 2}), image({0, 0, 0, 2.5}, 1, 2, 2));
  EXPECT_EQ(max_unpool(Tensor({1, 1, 1}), r.map, {1, 2, 2}).vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(max_unpool(Tensor({1, 2, 1}), r.map, {1, 2, 2}), DimensionError);
}

TEST(PoolTest, IndicesStayInsideTheirWindow) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, 8, 8}, rng);
  const auto r = max_pool(x, 2, 2);
  Index cell = 0;
  for (Index c = 0; c < 3; ++c) {
    for (Index oy = 0; oy < 4; ++oy) {
      for (Index ox = 0; ox < 4; ++ox, ++cell) {
        const Index idx = r.map.argmax[static_cast<std::size_t>(cell)];
        EXPECT_EQ(idx / 64, c);
        EXPECT_EQ((idx % 64) / 8 / 2, oy);
        EXPECT_EQ((idx % 8) / 2, ox);
      }
    }
  }
}

TEST(PoolTest, AdjointIdentity) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 8, 8}, rng);
    const auto r = max_pool(x, 2, 2);
    const Tensor g = random_tensor(r.values.shape(), rng);
    EXPECT_NEAR(dot(r.values, g), dot(x, max_unpool(g, r.map, x.shape())), 1e-12);
  }
}

TEST(RotateTest, Examples) {
  EXPECT_EQ(rotate180(Tensor({2, 2}, {1, 2, 3, 4})), Tensor({2, 2}, {4, 3, 2, 1}));
  const Tensor sym({3, 3}, {1, 2, 1, 2, 4, 2, 1, 2, 1});
  EXPECT_EQ(rotate180(sym), sym);
  std::mt19937_64 rng(6);
  const Tensor k = random_tensor({3, 2, 4, 5}, rng);
  EXPECT_EQ(rotate180(rotate180(k)), k);
  EXPECT_THROW(rotate180(Tensor({4})), DimensionError);
}

TEST(ActivationTest, PointValues) {
  EXPECT_EQ(activate(ActivationKind::relu(), -3.0), 0.0);
  EXPECT_EQ(activate_deriv(ActivationKind::relu(), -3.0), 0.0);
  EXPECT_DOUBLE_EQ(activate(ActivationKind::leaky_relu(0.2), -1.0), -0.2);
  EXPECT_EQ(activate(ActivationKind::sigmoid(), 0.0), 0.5);
  EXPECT_EQ(activate_deriv(ActivationKind::sigmoid(), 0.0), 0.25);
  EXPECT_THROW(ActivationKind::leaky_relu(0.0), ValidationError);
  EXPECT_THROW(ActivationKind::leaky_relu(1.0), ValidationError);
}

TEST(ActivationTest, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const ActivationKind kinds[] = {ActivationKind::relu(), ActivationKind::leaky_relu(0.2), ActivationKind::tanh(),
                                  ActivationKind::sigmoid()};
  const double h = 1e-6;
  for (const auto& kind : kinds) {
    for (int i = 0; i < 500; ++i) {
      const double z = u(rng);
      if (std::abs(z) <= 1e-3) continue;
      const double numeric = (activate(kind, z + h) - activate(kind, z - h)) / (2 * h);
      EXPECT_NEAR(activate_deriv(kind, z), numeric, 1e-7);
    }
  }
}

TEST(ActivationTest, BoundedRanges) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> d(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double z = d(rng);
    const double t = activate(ActivationKind::tanh(), z);
    const double s = activate(ActivationKind::sigmoid(), z);
    EXPECT_TRUE(t > -1.0 && t < 1.0);
    EXPECT_TRUE(s > 0.0 && s < 1.0);
  }
  // Far tails saturate in double precision but never leave the closed range.
  EXPECT_EQ(activate(ActivationKind::sigmoid(), -800.0), 0.0);
  EXPECT_EQ(activate(ActivationKind::tanh(), 40.0), 1.0);
}

TEST(ActivationTest, OpsArePure) {
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 6, 6}, rng);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng);
  EXPECT_EQ(conv2d(x, k, Tensor({3}), 1, 1), conv2d(x, k, Tensor({3}), 1, 1));
  EXPECT_EQ(activate(ActivationKind::tanh(), x), activate(ActivationKind::tanh(), x));
}
