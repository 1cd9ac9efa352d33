#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dmlganr/gan.hpp"

using namespace dmlganr;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

Eigen::VectorXd random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

// Larger weights than the training init so finite differences stay well above rounding.
template <class Net>
void redraw(Net& net, std::mt19937_64& rng, double std = 0.3) {
  std::normal_distribution<double> d(0.0, std);
  for (Tensor* p : net.parameters()) {
    for (double& v : p->values()) v = d(rng);
  }
}

DiscriminatorArch bn_discriminator_arch() {
  DiscriminatorArch a = GanArchitecture::miniature(5).discriminator;
  a.convs[1].batch_norm = true;
  return a;
}

GeneratorArch bn_generator_arch() {
  GeneratorArch a = GanArchitecture::miniature(5).generator;
  a.blocks = {{4, 3, 1, 1, false, true}, {3, 4, 2, 1, true, false}};
  return a;
}

double weighted_probability(const DiscriminatorNet& d, const Tensor& x, const Eigen::VectorXd& w) {
  return d.forward(x).probabilities.dot(w);
}

double weighted_image(const GeneratorNet& g, const Tensor& u, const Tensor& r) {
  return g.forward(u).images().vec().dot(r.vec());
}

template <class Net, class Loss>
double max_fd_error(Net& net, const NetGradients& grads, Loss loss) {
  constexpr double h = 1e-5;
  double worst = 0;
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Index i = 0; i < params[k]->size(); ++i) {
      double& v = params[k]->values()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss();
      v = saved - h;
      const double down = loss();
      v = saved;
      const double fd = (up - down) / (2 * h);
      const double an = grads.params[k].values()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd) + std::abs(an)));
    }
  }
  return worst;
}

}  // namespace

TEST(GeneratorTest, ShapesAndRange) {
  std::mt19937_64 rng(1);
  const GeneratorArch arch = GanArchitecture::desk_scale(12).generator;
  const GeneratorNet g = GeneratorNet::initialized(arch, rng);
  const GeneratorCache c = g.forward(random_tensor({2, 12}, rng));
  ASSERT_EQ(c.images().shape(), (Shape{2, 3, 64, 64}));
  EXPECT_LT(c.images().vec().cwiseAbs().maxCoeff(), 1.0);
}

TEST(GeneratorTest, ZeroInputAndBiasesGiveBlankImage) {
  std::mt19937_64 rng(2);
  const GeneratorNet g = GeneratorNet::initialized(GanArchitecture::miniature(5).generator, rng);
  const GeneratorCache c = g.forward(Tensor({3, 5}));
  ASSERT_EQ(c.images().shape(), (Shape{3, 3, 8, 8}));
  EXPECT_EQ(c.images().vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(GeneratorTest, ZeroSensitivityGivesZeroGradients) {
  std::mt19937_64 rng(3);
  GeneratorNet g = GeneratorNet::initialized(GanArchitecture::miniature(5).generator, rng);
  redraw(g, rng);
  const GeneratorCache c = g.forward(random_tensor({2, 5}, rng));
  const NetGradients grads = g.backward(c, Tensor(c.images().shape()));
  for (const Tensor& t : grads.params) EXPECT_EQ(t.vec().cwiseAbs().maxCoeff(), 0.0);
  ASSERT_EQ(grads.input.shape(), (Shape{2, 5}));
  EXPECT_EQ(grads.input.vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(GeneratorTest, BatchNormGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  GeneratorNet g = GeneratorNet::initialized(bn_generator_arch(), rng);
  redraw(g, rng);
  const Tensor u = random_tensor({3, 5}, rng);
  const GeneratorCache c = g.forward(u);
  const Tensor r = random_tensor(c.images().shape(), rng);
  const NetGradients grads = g.backward(c, r);
  EXPECT_LT(max_fd_error(g, grads, [&] { return weighted_image(g, u, r); }), 1e-6);
}

TEST(DiscriminatorTest, ProbabilitiesInOpenUnitInterval) {
  std::mt19937_64 rng(5);
  const DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::desk_scale(8).discriminator, rng);
  const Tensor x = random_tensor({3, 3, 64, 64}, rng);
  const DiscriminatorCache c = d.forward(x);
  ASSERT_EQ(c.probabilities.size(), 3);
  EXPECT_GT(c.probabilities.minCoeff(), 0.0);
  EXPECT_LT(c.probabilities.maxCoeff(), 1.0);
}

TEST(DiscriminatorTest, IdenticalImagesGetIdenticalProbabilities) {
  std::mt19937_64 rng(6);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  redraw(d, rng);
  const Tensor one = random_tensor({3, 8, 8}, rng);
  Tensor batch({4, 3, 8, 8});
  for (Index s = 0; s < 4; ++s) batch.set_slice(s, one);
  const Eigen::VectorXd p = d.forward(batch).probabilities;
  for (Index s = 1; s < 4; ++s) EXPECT_EQ(p[s], p[0]);
}

TEST(DiscriminatorTest, FullScaleConcatWidth) {
  const auto layout = GanArchitecture::full_scale(4096).discriminator.layout();
  EXPECT_EQ(layout.concat_channels, 896);
  EXPECT_EQ(layout.concat_side, 4);
  EXPECT_EQ(layout.conv_out.back(), (Shape{512, 4, 4}));
}

TEST(DiscriminatorTest, OutOfRangeInputIsRejected) {
  std::mt19937_64 rng(7);
  const DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  Tensor x({1, 3, 8, 8});
  x.values()[10] = 1.5;
  EXPECT_THROW(d.forward(x), ValidationError);
  EXPECT_THROW(d.forward(Tensor({1, 3, 16, 16})), DimensionError);
}

TEST(DiscriminatorTest, ZeroSensitivityGivesZeroGradients) {
  std::mt19937_64 rng(8);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  redraw(d, rng);
  const DiscriminatorCache c = d.forward(random_tensor({2, 3, 8, 8}, rng));
  const NetGradients grads = d.backward(c, Eigen::VectorXd::Zero(2), true);
  for (const Tensor& t : grads.params) EXPECT_EQ(t.vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.input.vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(DiscriminatorTest, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  redraw(d, rng);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, -0.9, 0.9);
  const Eigen::VectorXd w = random_vector(2, rng);
  const NetGradients grads = d.backward(d.forward(x), w, true);
  ASSERT_EQ(grads.input.shape(), x.shape());
  constexpr double h = 1e-5;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.values()[i];
    x.values()[i] = saved + h;
    const double up = weighted_probability(d, x, w);
    x.values()[i] = saved - h;
    const double down = weighted_probability(d, x, w);
    x.values()[i] = saved;
    EXPECT_NEAR(grads.input.values()[i], (up - down) / (2 * h), 1e-7) << i;
  }
}

TEST(DiscriminatorTest, BatchNormGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  DiscriminatorNet d = DiscriminatorNet::initialized(bn_discriminator_arch(), rng);
  redraw(d, rng);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  const Eigen::VectorXd w = random_vector(4, rng);
  const NetGradients grads = d.backward(d.forward(x), w);
  EXPECT_LT(max_fd_error(d, grads, [&] { return weighted_probability(d, x, w); }), 1e-6);
}

TEST(DiscriminatorTest, WithoutBatchNormModesAgreeBitForBit) {
  std::mt19937_64 rng(11);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  redraw(d, rng);
  const Tensor x = random_tensor({3, 3, 8, 8}, rng);
  EXPECT_EQ(d.forward(x, Mode::Train).probabilities, d.forward(x, Mode::Eval).probabilities);
  const DiscriminatorCache c = d.forward(x);
  d.update_running_stats(c);
  EXPECT_EQ(d.forward(x).probabilities, c.probabilities);
}

TEST(DiscriminatorTest, RunningStatsFollowMomentum) {
  std::mt19937_64 rng(12);
  DiscriminatorNet d = DiscriminatorNet::initialized(bn_discriminator_arch(), rng);
  redraw(d, rng);
  const Tensor x = random_tensor({4, 3, 8, 8}, rng);
  const DiscriminatorCache c = d.forward(x);
  const Tensor& pre = c.conv[1].pre;
  const Index ch = pre.dim(1), hw = pre.dim(2) * pre.dim(3);
  d.update_running_stats(c, 0.1);
  const BatchNormState& bn = d.conv()[1].bn;
  for (Index k = 0; k < ch; ++k) {
    std::vector<double> vals;
    for (Index s = 0; s < pre.dim(0); ++s) {
      for (Index i = 0; i < hw; ++i) vals.push_back(pre.values()[(s * ch + k) * hw + i]);
    }
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double unbiased = ss / static_cast<double>(vals.size() - 1);
    EXPECT_NEAR(bn.running_mean[k], 0.1 * mean, 1e-12);
    EXPECT_NEAR(bn.running_var[k], 0.9 + 0.1 * unbiased, 1e-12);
  }
  // Eval mode uses the buffers and is batch independent.
  const Eigen::VectorXd all = d.forward(x, Mode::Eval).probabilities;
  const Tensor first = x.slice(0);
  Tensor single({1, 3, 8, 8});
  single.set_slice(0, first);
  EXPECT_NEAR(d.forward(single, Mode::Eval).probabilities[0], all[0], 1e-14);
}

TEST(GanLossTest, BlindDiscriminatorValue) {
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(6, 0.5);
  const GanLosses l = gan_losses(half, half);
  EXPECT_NEAR(l.discriminator, 2 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(l.value, -2 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(l.generator, std::numbers::ln2, 1e-12);
}

TEST(GanLossTest, NearPerfectDiscriminator) {
  constexpr double eps = 1e-7;
  const GanLosses l = gan_losses(Eigen::VectorXd::Constant(4, 1 - eps), Eigen::VectorXd::Constant(4, eps));
  EXPECT_NEAR(l.discriminator, 2 * eps, 1e-12);
}

TEST(GanLossTest, VariantsAndSensitivities) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Eigen::VectorXd real(5), fake(5);
  for (Index i = 0; i < 5; ++i) real[i] = u(rng), fake[i] = u(rng);
  const double m1 = (1 - fake.array()).log().mean();
  EXPECT_DOUBLE_EQ(gan_losses(real, fake, GeneratorLoss::LiteralEq10).generator, -m1);
  EXPECT_DOUBLE_EQ(gan_losses(real, fake, GeneratorLoss::MinimizeLog1m).generator, m1);
  EXPECT_DOUBLE_EQ(gan_losses(real, fake, GeneratorLoss::NonSaturating).generator, -fake.array().log().mean());
  constexpr double h = 1e-6;
  for (auto variant : {GeneratorLoss::LiteralEq10, GeneratorLoss::MinimizeLog1m, GeneratorLoss::NonSaturating}) {
    const Eigen::VectorXd sens = generator_sensitivity(fake, variant);
    const Eigen::VectorXd dr = real_branch_sensitivity(real), df = fake_branch_sensitivity(fake);
    for (Index i = 0; i < 5; ++i) {
      Eigen::VectorXd up = fake, down = fake;
      up[i] += h;
      down[i] -= h;
      EXPECT_NEAR(sens[i], (gan_losses(real, up, variant).generator - gan_losses(real, down, variant).generator) / (2 * h), 1e-7);
      EXPECT_NEAR(df[i], (gan_losses(real, up).discriminator - gan_losses(real, down).discriminator) / (2 * h), 1e-7);
      Eigen::VectorXd rup = real, rdown = real;
      rup[i] += h;
      rdown[i] -= h;
      EXPECT_NEAR(dr[i], (gan_losses(rup, fake).discriminator - gan_losses(rdown, fake).discriminator) / (2 * h), 1e-7);
    }
  }
  EXPECT_EQ(generator_loss_from_string("literal-eq10"), GeneratorLoss::LiteralEq10);
  EXPECT_EQ(to_string(GeneratorLoss::MinimizeLog1m), "minimize-log1m");
  EXPECT_THROW(generator_loss_from_string("wasserstein"), ValidationError);
  EXPECT_THROW(gan_losses(Eigen::VectorXd(), fake), DimensionError);
}

TEST(GanLossTest, AccuracyCounts) {
  Eigen::VectorXd real(2), fake(2);
  real << 0.9, 0.4;
  fake << 0.1, 0.6;
  EXPECT_DOUBLE_EQ(discriminator_accuracy(real, fake), 0.5);
}

TEST(GanGradientTest, RealBranchIndependentOfFakeInputs) {
  std::mt19937_64 rng(14);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  redraw(d, rng);
  const DiscriminatorCache real = d.forward(random_tensor({3, 3, 8, 8}, rng));
  const Eigen::VectorXd r_sens = real_branch_sensitivity(real.probabilities);
  const NetGradients real_only = d.backward(real, r_sens);
  for (int trial = 0; trial < 2; ++trial) {
    const DiscriminatorCache fake = d.forward(random_tensor({3, 3, 8, 8}, rng));
    const NetGradients both = discriminator_gradients(d, real, fake);
    const NetGradients fake_only = d.backward(fake, fake_branch_sensitivity(fake.probabilities));
    for (std::size_t k = 0; k < both.params.size(); ++k) {
      const Eigen::VectorXd rest = both.params[k].vec() - fake_only.params[k].vec();
      EXPECT_LT((rest - real_only.params[k].vec()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(GanGradientTest, GeneratorGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  const GanArchitecture arch = GanArchitecture::miniature(5);
  GeneratorNet g = GeneratorNet::initialized(arch.generator, rng);
  DiscriminatorNet d = DiscriminatorNet::initialized(arch.discriminator, rng);
  redraw(g, rng);
  redraw(d, rng);
  const Tensor u = random_tensor({3, 5}, rng);
  const GeneratorCache gc = g.forward(u);
  const NetGradients grads = generator_gradients(g, gc, d, d.forward(gc.images()), GeneratorLoss::NonSaturating);
  const Eigen::VectorXd dummy = Eigen::VectorXd::Constant(3, 0.5);
  auto loss = [&] {
    return gan_losses(dummy, d.forward(g.forward(u).images()).probabilities, GeneratorLoss::NonSaturating).generator;
  };
  EXPECT_LT(max_fd_error(g, grads, loss), 1e-6);
}

TEST(GanStepTest, ZeroRateAndExactMove) {
  std::mt19937_64 rng(16);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  const DiscriminatorNet before = d;
  const DiscriminatorCache real = d.forward(random_tensor({2, 3, 8, 8}, rng));
  const DiscriminatorCache fake = d.forward(random_tensor({2, 3, 8, 8}, rng));
  const NetGradients grads = discriminator_gradients(d, real, fake);
  gan_gd_step(d, grads, 0.0);
  for (std::size_t k = 0; k < grads.params.size(); ++k) {
    EXPECT_EQ(*d.parameters()[k], *before.parameters()[k]);
  }
  gan_gd_step(d, grads, 0.01);
  for (std::size_t k = 0; k < grads.params.size(); ++k) {
    const Eigen::VectorXd expected = before.parameters()[k]->vec() - 0.01 * grads.params[k].vec();
    EXPECT_EQ(d.parameters()[k]->vec(), expected);
  }
  std::vector<Tensor> short_list(grads.params.begin(), grads.params.end() - 1);
  EXPECT_THROW(gan_gd_step(d.parameters(), short_list, 0.1), DimensionError);
}

TEST(GanStepTest, SaturatedDiscriminatorStaysFinite) {
  std::mt19937_64 rng(17);
  DiscriminatorNet d = DiscriminatorNet::initialized(GanArchitecture::miniature(5).discriminator, rng);
  const Tensor real_x = random_tensor({2, 3, 8, 8}, rng, 0.5, 1.0);
  const Tensor fake_x = random_tensor({2, 3, 8, 8}, rng, -1.0, -0.5);
  for (int step = 0; step < 200; ++step) {
    const DiscriminatorCache real = d.forward(real_x), fake = d.forward(fake_x);
    const GanLosses l = gan_losses(real.probabilities, fake.probabilities);
    ASSERT_TRUE(std::isfinite(l.discriminator)) << step;
    gan_gd_step(d, discriminator_gradients(d, real, fake), 5.0);
  }
  for (const Tensor* p : d.parameters()) EXPECT_TRUE(p->vec().allFinite());
  const DiscriminatorCache real = d.forward(real_x);
  EXPECT_GE(real.probabilities.minCoeff(), d.epsilon());
  EXPECT_LE(real.probabilities.maxCoeff(), 1 - d.epsilon());
}
