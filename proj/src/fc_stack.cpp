#include "dmlganr/fc_stack.hpp"

#include <cmath>

namespace dmlganr {

FcStack::FcStack(std::vector<FcLayer> layers, double negative_slope)
    : layers_(std::move(layers)), activation_(ActivationKind::leaky_relu(negative_slope)) {
  if (layers_.empty()) throw DimensionError("FcStack needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.size() != layer.weight.dim(0)) {
      throw DimensionError("FcStack layer " + std::to_string(l + 1) + " has inconsistent shapes");
    }
    if (l > 0 && layer.weight.dim(1) != layers_[l - 1].weight.dim(0)) {
      throw DimensionError("FcStack layer " + std::to_string(l + 1) + " input width does not chain");
    }
  }
}

FcStack FcStack::initialized(const std::vector<Index>& widths, std::mt19937_64& rng,
                             double negative_slope) {
  if (widths.size() < 2) throw ValidationError("FcStack widths need an input and at least one layer");
  std::vector<FcLayer> layers;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    const Index fan_in = widths[l - 1], fan_out = widths[l];
    if (fan_in < 1 || fan_out < 1) throw ValidationError("FcStack widths must be positive");
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    FcLayer layer{Tensor({fan_out, fan_in}), Tensor({fan_out})};
    for (double& w : layer.weight.values()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return FcStack(std::move(layers), negative_slope);
}

std::vector<Index> FcStack::widths() const {
  std::vector<Index> w{input_dim()};
  for (const auto& layer : layers_) w.push_back(layer.weight.dim(0));
  return w;
}

std::vector<Tensor*> FcStack::parameters() {
  std::vector<Tensor*> p;
  for (auto& layer : layers_) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

std::vector<const Tensor*> FcStack::parameters() const {
  std::vector<const Tensor*> p;
  for (const auto& layer : layers_) {
    p.push_back(&layer.weight);
    p.push_back(&layer.bias);
  }
  return p;
}

FcCache FcStack::forward(const Tensor& u0_batch) const {
  if (u0_batch.rank() != 2 || u0_batch.dim(1) != input_dim()) {
    throw DimensionError("fc_forward: input " + shape_string(u0_batch.shape()) +
                         " does not match stack input width " + std::to_string(input_dim()));
  }
  FcCache cache;
  cache.u.push_back(u0_batch);
  for (const auto& layer : layers_) {
    Tensor z({u0_batch.dim(0), layer.weight.dim(0)});
    z.matrix().noalias() = cache.u.back().matrix() * layer.weight.matrix().transpose();
    z.matrix().rowwise() += layer.bias.vec().transpose();
    require_finite(z, "fc_forward");
    cache.u.push_back(activate(activation_, z));
    cache.z.push_back(std::move(z));
  }
  return cache;
}

std::vector<Tensor> FcStack::backward_from_output(const FcCache& cache, const Tensor& grad_output) const {
  if (cache.u.size() != layers_.size() + 1) throw StateError("FcStack backward: missing forward cache");
  if (grad_output.shape() != cache.output().shape()) {
    throw DimensionError("FcStack backward: gradient shape does not match output");
  }
  std::vector<Tensor> grads(2 * layers_.size());
  RowMatrix<double> upstream = grad_output.matrix();
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const RowMatrix<double> delta =
        upstream.cwiseProduct(activate_deriv(activation_, cache.z[l]).matrix());
    grads[2 * l] = Tensor::from_matrix(delta.transpose() * cache.u[l].matrix());
    grads[2 * l + 1] = Tensor::from_vector(delta.colwise().sum().transpose());
    upstream = delta * layers_[l].weight.matrix();
  }
  return grads;
}

}  // namespace dmlganr
