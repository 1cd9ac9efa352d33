#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dmlganr/layers.hpp"
#include "dmlganr/tensor.hpp"

namespace dmlganr {

struct FcLayer {
  Tensor weight;  // d_out x d_in
  Tensor bias;    // d_out
};

/// Per-pass activations: z[l] and u[l + 1] belong to layer l (0-based);
/// u[0] is the input batch. All tensors are N x d.
struct FcCache {
  std::vector<Tensor> z;
  std::vector<Tensor> u;

  bool empty() const { return u.empty(); }
  Index batch() const { return u.empty() ? 0 : u.front().dim(0); }
  const Tensor& output() const { return u.back(); }
};

/// The trainable fully-connected part of the feature extractor: L layers of
/// LeakyReLU(W u + b).
class FcStack {
 public:
  FcStack() = default;
  FcStack(std::vector<FcLayer> layers, double negative_slope = 0.2);

  /// Widths {d_0, d_1, ..., d_L}; weights uniform(-s, s) with
  /// s = sqrt(6 / (fan_in + fan_out)), zero biases.
  static FcStack initialized(const std::vector<Index>& widths, std::mt19937_64& rng,
                             double negative_slope = 0.2);

  std::size_t depth() const { return layers_.size(); }
  Index input_dim() const { return layers_.front().weight.dim(1); }
  Index output_dim() const { return layers_.back().weight.dim(0); }
  std::vector<Index> widths() const;
  const ActivationKind& activation() const { return activation_; }

  std::vector<FcLayer>& layers() { return layers_; }
  const std::vector<FcLayer>& layers() const { return layers_; }

  /// Parameter tensors in the order W1, b1, W2, b2, ...
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  FcCache forward(const Tensor& u0_batch) const;

  /// Backpropagates a gradient arriving at u^(L) to parameter gradients
  /// (ordered as parameters()).
  std::vector<Tensor> backward_from_output(const FcCache& cache, const Tensor& grad_output) const;

 private:
  std::vector<FcLayer> layers_;
  ActivationKind activation_ = ActivationKind::leaky_relu(0.2);
};

}  // namespace dmlganr
