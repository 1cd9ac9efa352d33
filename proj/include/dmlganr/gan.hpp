#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dmlganr/layers.hpp"
#include "dmlganr/tensor.hpp"

namespace dmlganr {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct ConvSpec {
  Index out_channels = 0;
  Index kernel = 4;
  Index stride = 2;
  Index pad = 1;
  bool transposed = false;  // fractionally-strided (upsampling) convolution
  bool batch_norm = false;
};

struct GeneratorArch {
  Index input_dim = 0;
  std::vector<Index> fc_widths;  // hidden FC widths; one more FC projects to the seed grid
  Index seed_channels = 0;
  Index seed_side = 1;
  std::vector<ConvSpec> blocks;  // the last block produces the image and uses Tanh

  Index image_channels() const { return blocks.empty() ? seed_channels : blocks.back().out_channels; }
  Index image_side() const;
  void validate() const;
};

/// A pooled skip tap from the output of conv `source` (0-based).
struct TapSpec {
  std::size_t source = 0;
  Index window = 2;  // window == stride, no padding
};

struct DiscriminatorArch {
  Index image_channels = 3;
  Index image_side = 64;
  std::vector<ConvSpec> convs;
  std::vector<TapSpec> taps;
  std::vector<Index> fc_widths;  // hidden FC widths before the sigmoid head
  double negative_slope = 0.2;

  struct Layout {
    std::vector<Shape> conv_out;  // CHW per conv
    std::vector<Shape> tap_out;   // CHW per tap
    Index concat_channels = 0;
    Index concat_side = 0;
    Index flat = 0;
  };
  /// Shape inference for the whole stack; throws DimensionError on misfit.
  Layout layout() const;
};

struct GanArchitecture {
  GeneratorArch generator;
  DiscriminatorArch discriminator;

  /// The generator/discriminator table with every width divided by
  /// `width_divisor` (the RGB output stays 3 channels). `image_side` must be
  /// a multiple of 64: six stride-2 stages on either side.
  static GanArchitecture from_table(Index input_dim, Index image_side, Index width_divisor,
                                    bool batch_norm);
  static GanArchitecture desk_scale(Index input_dim, bool batch_norm = false) {
    return from_table(input_dim, 64, 4, batch_norm);
  }
  static GanArchitecture full_scale(Index input_dim, bool batch_norm = true) {
    return from_table(input_dim, 256, 1, batch_norm);
  }
  /// Small instance for gradient checks: G = FC x2 + one upsampling conv to
  /// 3x8x8; D = 2 convs + 1 pooled tap + concat + sigmoid FC.
  static GanArchitecture miniature(Index input_dim);
};

// ---------------------------------------------------------------------------
// Layers and caches
// ---------------------------------------------------------------------------

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor gamma, beta;                   // trainable, per channel
  Tensor running_mean, running_var;     // buffers
};

struct BatchNormCache {
  Tensor x_hat;  // NCHW
  Eigen::VectorXd mean, var, inv_std;
  bool batch_stats = false;
};

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;
};

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;  // OIHW; for transposed layers O = input channels
  Tensor bias;
  BatchNormState bn;  // empty tensors unless spec.batch_norm
};

struct ConvStageCache {
  Tensor pre;     // convolution + bias, before batch norm
  Tensor z;       // pre-activation
  Tensor output;  // activation
  BatchNormCache bn;
};

struct GeneratorCache {
  Tensor input;  // N x input_dim
  std::vector<Tensor> fc_z, fc_out;
  std::vector<ConvStageCache> conv;
  const Tensor& images() const { return conv.back().output; }
};

struct DiscriminatorCache {
  Tensor input;  // NCHW
  std::vector<ConvStageCache> conv;
  std::vector<std::vector<PoolIndexMap>> tap_maps;  // [tap][sample]
  std::vector<Tensor> tap_out;
  Tensor concat;  // N x flat
  std::vector<Tensor> fc_z, fc_out;  // hidden layers then head
  Eigen::VectorXd raw;               // sigmoid output
  Eigen::VectorXd probabilities;     // clamped to [eps, 1 - eps]
};

struct NetGradients {
  std::vector<Tensor> params;  // aligned with parameters()
  Tensor input;                // d loss / d input (empty unless requested)
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

class GeneratorNet {
 public:
  GeneratorNet() = default;
  /// Gaussian(0, 0.02) weights, zero biases, unit BN scale.
  static GeneratorNet initialized(const GeneratorArch& arch, std::mt19937_64& rng);

  const GeneratorArch& arch() const { return arch_; }
  std::vector<DenseLayer>& fc() { return fc_; }
  const std::vector<DenseLayer>& fc() const { return fc_; }
  std::vector<ConvLayer>& conv() { return conv_; }
  const std::vector<ConvLayer>& conv() const { return conv_; }

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::vector<Tensor*> buffers();
  std::vector<const Tensor*> buffers() const;

  /// FC x k with ReLU, reshape to the seed grid, conv blocks with ReLU, Tanh head.
  GeneratorCache forward(const Tensor& features, Mode mode = Mode::Train) const;

  /// T_G recursion: Tanh head, conv blocks (rotated-kernel transposed conv for
  /// stride-1 blocks, forward correlation for upsampling blocks), FC stack.
  /// `grad_images` is d loss / d G(u); the result includes d loss / d u.
  NetGradients backward(const GeneratorCache& cache, const Tensor& grad_images) const;

  void update_running_stats(const GeneratorCache& cache, double momentum = 0.1);

 private:
  GeneratorArch arch_;
  std::vector<DenseLayer> fc_;
  std::vector<ConvLayer> conv_;
};

class DiscriminatorNet {
 public:
  DiscriminatorNet() = default;
  static DiscriminatorNet initialized(const DiscriminatorArch& arch, std::mt19937_64& rng,
                                      double epsilon = 1e-7);

  const DiscriminatorArch& arch() const { return arch_; }
  double epsilon() const { return epsilon_; }
  void set_epsilon(double eps);
  std::vector<ConvLayer>& conv() { return conv_; }
  const std::vector<ConvLayer>& conv() const { return conv_; }
  std::vector<DenseLayer>& fc() { return fc_; }
  const std::vector<DenseLayer>& fc() const { return fc_; }

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::vector<Tensor*> buffers();
  std::vector<const Tensor*> buffers() const;

  /// Strided convs with LeakyReLU, pooled skip taps, channel concat, FC
  /// layers, sigmoid head. Inputs must lie in [-1, 1].
  DiscriminatorCache forward(const Tensor& images, Mode mode = Mode::Train) const;

  /// T_D recursion from the per-sample head sensitivity d loss / d p.
  /// Samples whose probability was clamped contribute no gradient.
  NetGradients backward(const DiscriminatorCache& cache, const Eigen::VectorXd& grad_probability,
                        bool want_input_grad = false) const;

  void update_running_stats(const DiscriminatorCache& cache, double momentum = 0.1);

 private:
  DiscriminatorArch arch_;
  std::vector<ConvLayer> conv_;
  std::vector<DenseLayer> fc_;
  double epsilon_ = 1e-7;
};

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

enum class GeneratorLoss {
  LiteralEq10,      // -E[log(1 - D(G(u)))]
  MinimizeLog1m,    // E[log(1 - D(G(u)))]
  NonSaturating,    // -E[log D(G(u))]
};

GeneratorLoss generator_loss_from_string(const std::string& name);
std::string to_string(GeneratorLoss loss);

struct GanLosses {
  double discriminator = 0;  // -mean log d_real - mean log(1 - d_fake)
  double generator = 0;      // per configured variant
  double value = 0;          // mean log d_real + mean log(1 - d_fake)
};

GanLosses gan_losses(const Eigen::VectorXd& d_real, const Eigen::VectorXd& d_fake,
                     GeneratorLoss variant = GeneratorLoss::NonSaturating);

/// d(discriminator loss)/dp for the real branch (-1/(N p)) and the fake
/// branch (1/(N (1 - p))).
Eigen::VectorXd real_branch_sensitivity(const Eigen::VectorXd& d_real);
Eigen::VectorXd fake_branch_sensitivity(const Eigen::VectorXd& d_fake);
/// d(generator loss)/dp on the fake branch for the chosen variant.
Eigen::VectorXd generator_sensitivity(const Eigen::VectorXd& d_fake, GeneratorLoss variant);

/// Gradient of the discriminator loss for both branches, summed.
NetGradients discriminator_gradients(const DiscriminatorNet& d, const DiscriminatorCache& real,
                                     const DiscriminatorCache& fake);

/// Generator gradient through a fixed discriminator: `fake` must be the
/// discriminator cache for `g_cache.images()`.
NetGradients generator_gradients(const GeneratorNet& g, const GeneratorCache& g_cache,
                                 const DiscriminatorNet& d, const DiscriminatorCache& fake,
                                 GeneratorLoss variant);

void gan_gd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double rate);
inline void gan_gd_step(GeneratorNet& g, const NetGradients& grads, double rate) {
  gan_gd_step(g.parameters(), grads.params, rate);
}
inline void gan_gd_step(DiscriminatorNet& d, const NetGradients& grads, double rate) {
  gan_gd_step(d.parameters(), grads.params, rate);
}

/// Fraction of correct calls (real > 0.5, fake < 0.5) over both batches.
double discriminator_accuracy(const Eigen::VectorXd& d_real, const Eigen::VectorXd& d_fake);

}  // namespace dmlganr
