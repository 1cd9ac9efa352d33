#include "dmlganr/gan.hpp"

#include <algorithm>
#include <cmath>

namespace dmlganr {

namespace {

constexpr double kBatchNormEps = 1e-5;

// ----- batch norm ----------------------------------------------------------

BatchNormState make_batch_norm(Index channels) {
  return {Tensor({channels}, 1.0), Tensor({channels}), Tensor({channels}), Tensor({channels}, 1.0)};
}

Tensor batch_norm_forward(const Tensor& x, const BatchNormState& bn, Mode mode, BatchNormCache& cache) {
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n * hw);
  cache.batch_stats = mode == Mode::Train;
  cache.mean.setZero(c);
  cache.var.setZero(c);
  if (cache.batch_stats) {
    for (Index s = 0; s < n; ++s) {
      for (Index ch = 0; ch < c; ++ch) cache.mean[ch] += x.vec().segment((s * c + ch) * hw, hw).sum();
    }
    cache.mean /= count;
    for (Index s = 0; s < n; ++s) {
      for (Index ch = 0; ch < c; ++ch) {
        cache.var[ch] += (x.vec().segment((s * c + ch) * hw, hw).array() - cache.mean[ch]).square().sum();
      }
    }
    cache.var /= count;
  } else {
    cache.mean = bn.running_mean.vec();
    cache.var = bn.running_var.vec();
  }
  cache.inv_std = (cache.var.array() + kBatchNormEps).rsqrt().matrix();
  cache.x_hat = Tensor(x.shape());
  Tensor y(x.shape());
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (s * c + ch) * hw;
      cache.x_hat.vec().segment(off, hw) =
          ((x.vec().segment(off, hw).array() - cache.mean[ch]) * cache.inv_std[ch]).matrix();
      y.vec().segment(off, hw) =
          (cache.x_hat.vec().segment(off, hw).array() * bn.gamma[ch] + bn.beta[ch]).matrix();
    }
  }
  return y;
}

// Returns d/dx and fills d/dgamma, d/dbeta.
Tensor batch_norm_backward(const Tensor& dy, const BatchNormCache& cache, const BatchNormState& bn,
                           Tensor& dgamma, Tensor& dbeta) {
  const Index n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n * hw);
  dgamma = Tensor({c});
  dbeta = Tensor({c});
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (s * c + ch) * hw;
      dbeta[ch] += dy.vec().segment(off, hw).sum();
      dgamma[ch] += dy.vec().segment(off, hw).dot(cache.x_hat.vec().segment(off, hw));
    }
  }
  Tensor dx(dy.shape());
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (s * c + ch) * hw;
      const double scale = bn.gamma[ch] * cache.inv_std[ch];
      if (cache.batch_stats) {
        dx.vec().segment(off, hw) =
            (scale / count) * (count * dy.vec().segment(off, hw).array() - dbeta[ch] -
                               cache.x_hat.vec().segment(off, hw).array() * dgamma[ch])
                                  .matrix();
      } else {
        dx.vec().segment(off, hw) = scale * dy.vec().segment(off, hw);
      }
    }
  }
  return dx;
}

void update_running(BatchNormState& bn, const BatchNormCache& cache, Index count, double momentum) {
  if (!cache.batch_stats) return;
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  bn.running_mean.vec() = (1 - momentum) * bn.running_mean.vec() + momentum * cache.mean;
  bn.running_var.vec() = (1 - momentum) * bn.running_var.vec() + (momentum * unbias) * cache.var;
}

// ----- convolution stages --------------------------------------------------

Shape stage_output_shape(const ConvSpec& spec, const Shape& chw) {
  if (spec.transposed) {
    const auto hw = transposed_extent(chw[1], chw[2], spec.kernel, spec.kernel, spec.stride, spec.pad);
    return {spec.out_channels, hw[0], hw[1]};
  }
  const ConvGeometry g{chw[0], chw[1], chw[2], spec.kernel, spec.kernel, spec.stride, spec.pad};
  return {spec.out_channels, g.out_h(), g.out_w()};
}

ConvLayer make_conv(const ConvSpec& spec, Index in_channels, std::mt19937_64& rng) {
  std::normal_distribution<double> init(0.0, 0.02);
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = spec.transposed ? Tensor({in_channels, spec.out_channels, spec.kernel, spec.kernel})
                                 : Tensor({spec.out_channels, in_channels, spec.kernel, spec.kernel});
  for (double& w : layer.weight.values()) w = init(rng);
  layer.bias = Tensor({spec.out_channels});
  if (spec.batch_norm) layer.bn = make_batch_norm(spec.out_channels);
  return layer;
}

DenseLayer make_dense(Index in, Index out, std::mt19937_64& rng) {
  std::normal_distribution<double> init(0.0, 0.02);
  DenseLayer layer{Tensor({out, in}), Tensor({out})};
  for (double& w : layer.weight.values()) w = init(rng);
  return layer;
}

ConvStageCache conv_stage_forward(const ConvLayer& layer, const Tensor& input, const ActivationKind& act,
                                  Mode mode) {
  const Index n = input.dim(0);
  const Shape in_chw{input.dim(1), input.dim(2), input.dim(3)};
  const Shape out_chw = stage_output_shape(layer.spec, in_chw);
  ConvStageCache cache;
  cache.pre = Tensor({n, out_chw[0], out_chw[1], out_chw[2]});
  for (Index s = 0; s < n; ++s) {
    const Tensor x = input.slice(s);
    if (layer.spec.transposed) {
      Tensor y = conv2d_transposed(x, layer.weight, layer.spec.stride, layer.spec.pad);
      y.matrix(out_chw[0], out_chw[1] * out_chw[2]).colwise() += layer.bias.vec();
      cache.pre.set_slice(s, y);
    } else {
      cache.pre.set_slice(s, conv2d(x, layer.weight, layer.bias, layer.spec.stride, layer.spec.pad));
    }
  }
  cache.z = layer.spec.batch_norm ? batch_norm_forward(cache.pre, layer.bn, mode, cache.bn) : cache.pre;
  cache.output = activate(act, cache.z);
  require_finite(cache.output, "conv stage");
  return cache;
}

struct StageGrads {
  Tensor weight, bias, gamma, beta;
  Tensor input;
};

StageGrads conv_stage_backward(const ConvLayer& layer, const Tensor& input, const ConvStageCache& cache,
                               const Tensor& grad_output, const ActivationKind& act, bool want_input) {
  const ConvSpec& spec = layer.spec;
  Tensor t(grad_output.shape());
  t.vec() = grad_output.vec().cwiseProduct(activate_deriv(act, cache.z).vec());
  StageGrads g;
  if (spec.batch_norm) t = batch_norm_backward(t, cache.bn, layer.bn, g.gamma, g.beta);

  const Index n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  g.bias = Tensor({c});
  for (Index s = 0; s < n; ++s) {
    for (Index ch = 0; ch < c; ++ch) g.bias[ch] += t.vec().segment((s * c + ch) * hw, hw).sum();
  }

  g.weight = Tensor(layer.weight.shape());
  if (want_input) g.input = Tensor(input.shape());
  const std::array<Index, 2> in_hw{input.dim(2), input.dim(3)};
  const Tensor rotated = spec.transposed ? Tensor() : rotate180(layer.weight);
  const Tensor no_bias({layer.weight.dim(0)});
  for (Index s = 0; s < n; ++s) {
    const Tensor ts = t.slice(s);
    const Tensor xs = input.slice(s);
    if (spec.transposed) {
      // The layer computes conv2d^T(x, W); its adjoint in x is a forward correlation.
      g.weight.vec() += conv2d_kernel_grad(ts, xs, spec.kernel, spec.kernel, spec.stride, spec.pad).vec();
      if (want_input) g.input.set_slice(s, conv2d(ts, layer.weight, no_bias, spec.stride, spec.pad));
    } else {
      g.weight.vec() += conv2d_kernel_grad(xs, ts, spec.kernel, spec.kernel, spec.stride, spec.pad).vec();
      if (want_input) {
        g.input.set_slice(s, rotated_transposed_conv(rotated, ts, spec.stride, spec.pad, in_hw));
      }
    }
  }
  return g;
}

void append_conv_params(std::vector<Tensor*>& out, ConvLayer& layer) {
  out.push_back(&layer.weight);
  out.push_back(&layer.bias);
  if (layer.spec.batch_norm) {
    out.push_back(&layer.bn.gamma);
    out.push_back(&layer.bn.beta);
  }
}

void append_conv_grads(std::vector<Tensor>& out, StageGrads& g, bool bn) {
  out.push_back(std::move(g.weight));
  out.push_back(std::move(g.bias));
  if (bn) {
    out.push_back(std::move(g.gamma));
    out.push_back(std::move(g.beta));
  }
}

void append_conv_names(std::vector<std::string>& out, const std::string& prefix, const ConvLayer& layer) {
  out.push_back(prefix + ".weight");
  out.push_back(prefix + ".bias");
  if (layer.spec.batch_norm) {
    out.push_back(prefix + ".bn_gamma");
    out.push_back(prefix + ".bn_beta");
  }
}

// Dense layer over rows: z = x W^T + b.
Tensor dense_forward(const DenseLayer& layer, const Tensor& x) {
  if (x.dim(1) != layer.weight.dim(1)) {
    throw DimensionError("dense layer expects width " + std::to_string(layer.weight.dim(1)) + ", got " +
                         std::to_string(x.dim(1)));
  }
  Tensor z({x.dim(0), layer.weight.dim(0)});
  z.matrix().noalias() = x.matrix() * layer.weight.matrix().transpose();
  z.matrix().rowwise() += layer.bias.vec().transpose();
  return z;
}

Tensor flatten_rows(const Tensor& t) { return t.reshaped({t.dim(0), t.size() / std::max<Index>(t.dim(0), 1)}); }

}  // namespace

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

Index GeneratorArch::image_side() const {
  Shape chw{seed_channels, seed_side, seed_side};
  for (const auto& b : blocks) chw = stage_output_shape(b, chw);
  return chw[1];
}

void GeneratorArch::validate() const {
  if (input_dim < 1) throw ValidationError("generator input width must be positive");
  if (seed_channels < 1 || seed_side < 1) throw ValidationError("generator seed grid must be non-empty");
  if (blocks.empty()) throw ValidationError("generator needs at least one conv block");
  Shape chw{seed_channels, seed_side, seed_side};
  for (const auto& b : blocks) {
    if (b.out_channels < 1 || b.kernel < 1 || b.stride < 1 || b.pad < 0) {
      throw ValidationError("generator conv block has invalid geometry");
    }
    chw = stage_output_shape(b, chw);
    if (chw[1] < 1 || chw[2] < 1) throw DimensionError("generator conv block collapses the image");
  }
}

DiscriminatorArch::Layout DiscriminatorArch::layout() const {
  if (convs.empty()) throw ValidationError("discriminator needs at least one conv layer");
  Layout out;
  Shape chw{image_channels, image_side, image_side};
  for (const auto& c : convs) {
    if (c.transposed) throw ValidationError("discriminator convs cannot be transposed");
    if (chw[1] + 2 * c.pad < c.kernel) throw DimensionError("discriminator conv kernel larger than input");
    chw = stage_output_shape(c, chw);
    if (chw[1] < 1) throw DimensionError("discriminator conv collapses the image");
    out.conv_out.push_back(chw);
  }
  const Shape& last = out.conv_out.back();
  out.concat_channels = last[0];
  out.concat_side = last[1];
  for (const auto& t : taps) {
    if (t.source >= convs.size()) throw ValidationError("discriminator tap source out of range");
    const Shape& src = out.conv_out[t.source];
    if (t.window < 1 || t.window > src[1]) throw DimensionError("discriminator tap window larger than source");
    const Index side = (src[1] - t.window) / t.window + 1;
    if (side != last[1] || side * t.window != src[1]) {
      throw DimensionError("discriminator tap from conv " + std::to_string(t.source + 1) +
                           " does not tile onto the final conv grid");
    }
    out.tap_out.push_back({src[0], side, side});
    out.concat_channels += src[0];
  }
  out.flat = out.concat_channels * out.concat_side * out.concat_side;
  return out;
}

GanArchitecture GanArchitecture::from_table(Index input_dim, Index image_side, Index width_divisor,
                                            bool batch_norm) {
  if (image_side < 64 || image_side % 64 != 0) {
    throw ValidationError("GAN image side must be a positive multiple of 64");
  }
  if (width_divisor < 1 || 16 % width_divisor != 0) {
    throw ValidationError("GAN width divisor must divide 16");
  }
  const auto w = [&](Index full) { return full / width_divisor; };
  GanArchitecture a;

  auto& g = a.generator;
  g.input_dim = input_dim;
  g.fc_widths = {w(1024), w(4096)};
  g.seed_channels = w(512);
  g.seed_side = image_side / 64;
  for (Index ch : {256, 128, 64, 32}) {
    g.blocks.push_back({w(ch), 4, 2, 1, true, batch_norm});
    g.blocks.push_back({w(ch), 3, 1, 1, false, batch_norm});
    g.blocks.push_back({w(ch), 3, 1, 1, false, batch_norm});
  }
  g.blocks.push_back({w(16), 4, 2, 1, true, batch_norm});
  g.blocks.push_back({3, 4, 2, 1, true, false});

  auto& d = a.discriminator;
  d.image_channels = 3;
  d.image_side = image_side;
  bool first = true;
  for (Index ch : {16, 32, 64, 128, 256, 512}) {
    d.convs.push_back({w(ch), 4, 2, 1, false, batch_norm && !first});
    first = false;
  }
  d.taps = {{3, 4}, {4, 2}};
  d.fc_widths = {w(1024)};
  return a;
}

GanArchitecture GanArchitecture::miniature(Index input_dim) {
  GanArchitecture a;
  auto& g = a.generator;
  g.input_dim = input_dim;
  g.fc_widths = {10};
  g.seed_channels = 4;
  g.seed_side = 4;
  g.blocks = {{3, 4, 2, 1, true, false}};

  auto& d = a.discriminator;
  d.image_channels = 3;
  d.image_side = 8;
  d.convs = {{4, 4, 2, 1, false, false}, {6, 4, 2, 1, false, false}};
  d.taps = {{0, 2}};
  d.fc_widths = {};
  return a;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

GeneratorNet GeneratorNet::initialized(const GeneratorArch& arch, std::mt19937_64& rng) {
  arch.validate();
  GeneratorNet net;
  net.arch_ = arch;
  Index width = arch.input_dim;
  for (Index out : arch.fc_widths) {
    net.fc_.push_back(make_dense(width, out, rng));
    width = out;
  }
  net.fc_.push_back(make_dense(width, arch.seed_channels * arch.seed_side * arch.seed_side, rng));
  Index channels = arch.seed_channels;
  for (const auto& spec : arch.blocks) {
    net.conv_.push_back(make_conv(spec, channels, rng));
    channels = spec.out_channels;
  }
  return net;
}

std::vector<Tensor*> GeneratorNet::parameters() {
  std::vector<Tensor*> p;
  for (auto& l : fc_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  for (auto& l : conv_) append_conv_params(p, l);
  return p;
}

std::vector<const Tensor*> GeneratorNet::parameters() const {
  auto p = const_cast<GeneratorNet*>(this)->parameters();
  return {p.begin(), p.end()};
}

std::vector<std::string> GeneratorNet::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    names.push_back("G.fc" + std::to_string(i + 1) + ".weight");
    names.push_back("G.fc" + std::to_string(i + 1) + ".bias");
  }
  for (std::size_t i = 0; i < conv_.size(); ++i) append_conv_names(names, "G.conv" + std::to_string(i + 1), conv_[i]);
  return names;
}

std::vector<Tensor*> GeneratorNet::buffers() {
  std::vector<Tensor*> b;
  for (auto& l : conv_) {
    if (l.spec.batch_norm) {
      b.push_back(&l.bn.running_mean);
      b.push_back(&l.bn.running_var);
    }
  }
  return b;
}

std::vector<const Tensor*> GeneratorNet::buffers() const {
  auto b = const_cast<GeneratorNet*>(this)->buffers();
  return {b.begin(), b.end()};
}

GeneratorCache GeneratorNet::forward(const Tensor& features, Mode mode) const {
  if (fc_.empty()) throw StateError("generator is not initialized");
  if (features.rank() != 2 || features.dim(1) != arch_.input_dim) {
    throw DimensionError("generator_forward: features " + shape_string(features.shape()) +
                         " do not match input width " + std::to_string(arch_.input_dim));
  }
  const auto relu = ActivationKind::relu();
  GeneratorCache cache;
  cache.input = features;
  const Tensor* x = &cache.input;
  for (const auto& layer : fc_) {
    cache.fc_z.push_back(dense_forward(layer, *x));
    cache.fc_out.push_back(activate(relu, cache.fc_z.back()));
    x = &cache.fc_out.back();
  }
  Tensor grid = x->reshaped({x->dim(0), arch_.seed_channels, arch_.seed_side, arch_.seed_side});
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    const bool head = k + 1 == conv_.size();
    const Tensor& in = k == 0 ? grid : cache.conv[k - 1].output;
    cache.conv.push_back(conv_stage_forward(conv_[k], in, head ? ActivationKind::tanh() : relu, mode));
  }
  return cache;
}

NetGradients GeneratorNet::backward(const GeneratorCache& cache, const Tensor& grad_images) const {
  if (cache.conv.size() != conv_.size() || cache.fc_out.size() != fc_.size()) {
    throw StateError("generator_backward: missing forward cache");
  }
  if (grad_images.shape() != cache.images().shape()) {
    throw DimensionError("generator_backward: gradient does not match generated images");
  }
  const auto relu = ActivationKind::relu();
  const Tensor& seed_flat = cache.fc_out.back();
  const Tensor grid = seed_flat.reshaped({seed_flat.dim(0), arch_.seed_channels, arch_.seed_side, arch_.seed_side});

  std::vector<StageGrads> stage(conv_.size());
  Tensor grad = grad_images;
  for (std::size_t k = conv_.size(); k-- > 0;) {
    const bool head = k + 1 == conv_.size();
    const Tensor& in = k == 0 ? grid : cache.conv[k - 1].output;
    stage[k] = conv_stage_backward(conv_[k], in, cache.conv[k], grad, head ? ActivationKind::tanh() : relu, true);
    grad = std::move(stage[k].input);
  }

  std::vector<Tensor> fc_grads(2 * fc_.size());
  RowMatrix<double> upstream = flatten_rows(grad).matrix();
  for (std::size_t l = fc_.size(); l-- > 0;) {
    const Tensor& below = l == 0 ? cache.input : cache.fc_out[l - 1];
    const RowMatrix<double> t = upstream.cwiseProduct(activate_deriv(relu, cache.fc_z[l]).matrix());
    fc_grads[2 * l] = Tensor::from_matrix(t.transpose() * below.matrix());
    fc_grads[2 * l + 1] = Tensor::from_vector(t.colwise().sum().transpose());
    upstream = t * fc_[l].weight.matrix();
  }

  NetGradients out;
  out.params = std::move(fc_grads);
  for (std::size_t k = 0; k < conv_.size(); ++k) append_conv_grads(out.params, stage[k], conv_[k].spec.batch_norm);
  out.input = Tensor::from_matrix(upstream);
  return out;
}

void GeneratorNet::update_running_stats(const GeneratorCache& cache, double momentum) {
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    if (!conv_[k].spec.batch_norm) continue;
    const Tensor& pre = cache.conv[k].pre;
    update_running(conv_[k].bn, cache.conv[k].bn, pre.dim(0) * pre.dim(2) * pre.dim(3), momentum);
  }
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

DiscriminatorNet DiscriminatorNet::initialized(const DiscriminatorArch& arch, std::mt19937_64& rng,
                                               double epsilon) {
  const auto layout = arch.layout();
  DiscriminatorNet net;
  net.arch_ = arch;
  net.set_epsilon(epsilon);
  Index channels = arch.image_channels;
  for (const auto& spec : arch.convs) {
    net.conv_.push_back(make_conv(spec, channels, rng));
    channels = spec.out_channels;
  }
  Index width = layout.flat;
  for (Index out : arch.fc_widths) {
    net.fc_.push_back(make_dense(width, out, rng));
    width = out;
  }
  net.fc_.push_back(make_dense(width, 1, rng));
  return net;
}

void DiscriminatorNet::set_epsilon(double eps) {
  if (!(eps > 0 && eps <= 1e-3)) throw ValidationError("probability clamp epsilon must lie in (0, 1e-3]");
  epsilon_ = eps;
}

std::vector<Tensor*> DiscriminatorNet::parameters() {
  std::vector<Tensor*> p;
  for (auto& l : conv_) append_conv_params(p, l);
  for (auto& l : fc_) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  return p;
}

std::vector<const Tensor*> DiscriminatorNet::parameters() const {
  auto p = const_cast<DiscriminatorNet*>(this)->parameters();
  return {p.begin(), p.end()};
}

std::vector<std::string> DiscriminatorNet::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < conv_.size(); ++i) append_conv_names(names, "D.conv" + std::to_string(i + 1), conv_[i]);
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    names.push_back("D.fc" + std::to_string(i + 1) + ".weight");
    names.push_back("D.fc" + std::to_string(i + 1) + ".bias");
  }
  return names;
}

std::vector<Tensor*> DiscriminatorNet::buffers() {
  std::vector<Tensor*> b;
  for (auto& l : conv_) {
    if (l.spec.batch_norm) {
      b.push_back(&l.bn.running_mean);
      b.push_back(&l.bn.running_var);
    }
  }
  return b;
}

std::vector<const Tensor*> DiscriminatorNet::buffers() const {
  auto b = const_cast<DiscriminatorNet*>(this)->buffers();
  return {b.begin(), b.end()};
}

DiscriminatorCache DiscriminatorNet::forward(const Tensor& images, Mode mode) const {
  if (conv_.empty()) throw StateError("discriminator is not initialized");
  if (images.rank() != 4 || images.dim(1) != arch_.image_channels || images.dim(2) != arch_.image_side ||
      images.dim(3) != arch_.image_side) {
    throw DimensionError("discriminator_forward: images " + shape_string(images.shape()) +
                         " do not match configured side " + std::to_string(arch_.image_side));
  }
  if (!images.all_finite() || (images.size() && (images.vec().minCoeff() < -1.0 || images.vec().maxCoeff() > 1.0))) {
    throw ValidationError("discriminator_forward: image values must lie in [-1, 1]");
  }
  const auto leaky = ActivationKind::leaky_relu(arch_.negative_slope);
  const Index n = images.dim(0);
  DiscriminatorCache cache;
  cache.input = images;
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    const Tensor& in = k == 0 ? cache.input : cache.conv[k - 1].output;
    cache.conv.push_back(conv_stage_forward(conv_[k], in, leaky, mode));
  }

  const Tensor& last = cache.conv.back().output;
  const Index last_flat = last.size() / n;
  Index flat = last_flat;
  for (const auto& tap : arch_.taps) {
    const Tensor& src = cache.conv[tap.source].output;
    std::vector<PoolIndexMap> maps;
    Tensor pooled;
    for (Index s = 0; s < n; ++s) {
      auto r = max_pool(src.slice(s), tap.window, tap.window);
      if (s == 0) pooled = Tensor({n, r.values.dim(0), r.values.dim(1), r.values.dim(2)});
      pooled.set_slice(s, r.values);
      maps.push_back(std::move(r.map));
    }
    flat += pooled.size() / n;
    cache.tap_maps.push_back(std::move(maps));
    cache.tap_out.push_back(std::move(pooled));
  }

  cache.concat = Tensor({n, flat});
  {
    auto cat = cache.concat.matrix();
    cat.leftCols(last_flat) = last.matrix(n, last_flat);
    Index col = last_flat;
    for (const auto& t : cache.tap_out) {
      const Index w = t.size() / n;
      cat.middleCols(col, w) = t.matrix(n, w);
      col += w;
    }
  }

  const Tensor* x = &cache.concat;
  for (std::size_t l = 0; l < fc_.size(); ++l) {
    cache.fc_z.push_back(dense_forward(fc_[l], *x));
    const bool head = l + 1 == fc_.size();
    cache.fc_out.push_back(head ? activate(ActivationKind::sigmoid(), cache.fc_z.back())
                                : activate(leaky, cache.fc_z.back()));
    x = &cache.fc_out.back();
  }
  cache.raw = cache.fc_out.back().vec();
  cache.probabilities = cache.raw.cwiseMax(epsilon_).cwiseMin(1.0 - epsilon_);
  require_finite(cache.fc_out.back(), "discriminator_forward");
  return cache;
}

NetGradients DiscriminatorNet::backward(const DiscriminatorCache& cache, const Eigen::VectorXd& grad_probability,
                                        bool want_input_grad) const {
  if (cache.conv.size() != conv_.size() || cache.fc_z.size() != fc_.size() ||
      cache.tap_out.size() != arch_.taps.size()) {
    throw StateError("discriminator_backward: missing forward cache");
  }
  const Index n = cache.input.dim(0);
  if (grad_probability.size() != n) throw DimensionError("discriminator_backward: one sensitivity per sample");
  const auto leaky = ActivationKind::leaky_relu(arch_.negative_slope);

  // Head: dL/dp * sigma'(z), zero where the probability was clamped.
  RowMatrix<double> upstream(n, 1);
  for (Index s = 0; s < n; ++s) {
    const bool clamped = cache.raw[s] < epsilon_ || cache.raw[s] > 1.0 - epsilon_;
    upstream(s, 0) = clamped ? 0.0 : grad_probability[s];
  }
  std::vector<Tensor> fc_grads(2 * fc_.size());
  for (std::size_t l = fc_.size(); l-- > 0;) {
    const bool head = l + 1 == fc_.size();
    const Tensor& below = l == 0 ? cache.concat : cache.fc_out[l - 1];
    const Tensor slope = head ? activate_deriv(ActivationKind::sigmoid(), cache.fc_z[l])
                              : activate_deriv(leaky, cache.fc_z[l]);
    const RowMatrix<double> t = upstream.cwiseProduct(slope.matrix());
    fc_grads[2 * l] = Tensor::from_matrix(t.transpose() * below.matrix());
    fc_grads[2 * l + 1] = Tensor::from_vector(t.colwise().sum().transpose());
    upstream = t * fc_[l].weight.matrix();
  }

  // Concat is the identity: split the sensitivity back into its tributaries.
  std::vector<Tensor> grad_out(conv_.size());
  for (std::size_t k = 0; k < conv_.size(); ++k) grad_out[k] = Tensor(cache.conv[k].output.shape());
  const Tensor& last = cache.conv.back().output;
  const Index last_flat = last.size() / n;
  grad_out.back().matrix(n, last_flat) = upstream.leftCols(last_flat);
  Index col = last_flat;
  for (std::size_t t = 0; t < arch_.taps.size(); ++t) {
    const Tensor& pooled = cache.tap_out[t];
    const Index w = pooled.size() / n;
    Tensor piece({n, w});
    piece.matrix() = upstream.middleCols(col, w);
    col += w;
    const Tensor piece_chw = piece.reshaped(pooled.shape());
    Tensor& dst = grad_out[arch_.taps[t].source];
    for (Index s = 0; s < n; ++s) {
      const auto& map = cache.tap_maps[t][static_cast<std::size_t>(s)];
      Tensor routed = max_unpool(piece_chw.slice(s), map, map.input_shape);
      const Index stride = routed.size();
      dst.vec().segment(s * stride, stride) += routed.vec();
    }
  }

  std::vector<StageGrads> stage(conv_.size());
  for (std::size_t k = conv_.size(); k-- > 0;) {
    const Tensor& in = k == 0 ? cache.input : cache.conv[k - 1].output;
    const bool need_input = k > 0 || want_input_grad;
    stage[k] = conv_stage_backward(conv_[k], in, cache.conv[k], grad_out[k], leaky, need_input);
    if (k > 0) grad_out[k - 1].vec() += stage[k].input.vec();
  }

  NetGradients out;
  for (std::size_t k = 0; k < conv_.size(); ++k) append_conv_grads(out.params, stage[k], conv_[k].spec.batch_norm);
  for (auto& g : fc_grads) out.params.push_back(std::move(g));
  if (want_input_grad) out.input = std::move(stage[0].input);
  return out;
}

void DiscriminatorNet::update_running_stats(const DiscriminatorCache& cache, double momentum) {
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    if (!conv_[k].spec.batch_norm) continue;
    const Tensor& pre = cache.conv[k].pre;
    update_running(conv_[k].bn, cache.conv[k].bn, pre.dim(0) * pre.dim(2) * pre.dim(3), momentum);
  }
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

GeneratorLoss generator_loss_from_string(const std::string& name) {
  if (name == "literal-eq10") return GeneratorLoss::LiteralEq10;
  if (name == "minimize-log1m") return GeneratorLoss::MinimizeLog1m;
  if (name == "non-saturating") return GeneratorLoss::NonSaturating;
  throw ValidationError("unknown generator loss '" + name +
                        "' (expected literal-eq10, minimize-log1m or non-saturating)");
}

std::string to_string(GeneratorLoss loss) {
  switch (loss) {
    case GeneratorLoss::LiteralEq10: return "literal-eq10";
    case GeneratorLoss::MinimizeLog1m: return "minimize-log1m";
    case GeneratorLoss::NonSaturating: return "non-saturating";
  }
  return "non-saturating";
}

GanLosses gan_losses(const Eigen::VectorXd& d_real, const Eigen::VectorXd& d_fake, GeneratorLoss variant) {
  if (d_real.size() == 0 || d_fake.size() == 0) throw DimensionError("gan_losses: empty batch");
  const double log_real = d_real.array().log().mean();
  const double log_1m_fake = (1.0 - d_fake.array()).log().mean();
  GanLosses l;
  l.discriminator = -log_real - log_1m_fake;
  l.value = log_real + log_1m_fake;
  switch (variant) {
    case GeneratorLoss::LiteralEq10: l.generator = -log_1m_fake; break;
    case GeneratorLoss::MinimizeLog1m: l.generator = log_1m_fake; break;
    case GeneratorLoss::NonSaturating: l.generator = -d_fake.array().log().mean(); break;
  }
  return l;
}

Eigen::VectorXd real_branch_sensitivity(const Eigen::VectorXd& d_real) {
  const double n = static_cast<double>(d_real.size());
  return (-1.0 / n) * d_real.cwiseInverse();
}

Eigen::VectorXd fake_branch_sensitivity(const Eigen::VectorXd& d_fake) {
  const double n = static_cast<double>(d_fake.size());
  return ((1.0 - d_fake.array()).inverse() / n).matrix();
}

Eigen::VectorXd generator_sensitivity(const Eigen::VectorXd& d_fake, GeneratorLoss variant) {
  const double n = static_cast<double>(d_fake.size());
  switch (variant) {
    case GeneratorLoss::LiteralEq10: return ((1.0 - d_fake.array()).inverse() / n).matrix();
    case GeneratorLoss::MinimizeLog1m: return (-(1.0 - d_fake.array()).inverse() / n).matrix();
    case GeneratorLoss::NonSaturating: return (-1.0 / n) * d_fake.cwiseInverse();
  }
  return Eigen::VectorXd::Zero(d_fake.size());
}

NetGradients discriminator_gradients(const DiscriminatorNet& d, const DiscriminatorCache& real,
                                     const DiscriminatorCache& fake) {
  NetGradients g = d.backward(real, real_branch_sensitivity(real.probabilities));
  const NetGradients gf = d.backward(fake, fake_branch_sensitivity(fake.probabilities));
  for (std::size_t i = 0; i < g.params.size(); ++i) g.params[i].vec() += gf.params[i].vec();
  return g;
}

NetGradients generator_gradients(const GeneratorNet& g, const GeneratorCache& g_cache, const DiscriminatorNet& d,
                                 const DiscriminatorCache& fake, GeneratorLoss variant) {
  const NetGradients through_d = d.backward(fake, generator_sensitivity(fake.probabilities, variant), true);
  return g.backward(g_cache, through_d.input);
}

void gan_gd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double rate) {
  if (params.size() != grads.size()) throw DimensionError("gan_gd_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw DimensionError("gan_gd_step: gradient shape mismatch");
    params[i]->vec() -= rate * grads[i].vec();
  }
}

double discriminator_accuracy(const Eigen::VectorXd& d_real, const Eigen::VectorXd& d_fake) {
  const auto correct = (d_real.array() > 0.5).count() + (d_fake.array() < 0.5).count();
  return static_cast<double>(correct) / static_cast<double>(d_real.size() + d_fake.size());
}

}  // namespace dmlganr
