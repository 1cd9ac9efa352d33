#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmlganr/fc_stack.hpp"
#include "dmlganr/tensor.hpp"

namespace dmlganr {

struct DmlConfig {
  double alpha = 0.5;   // weight of interclass separability
  double gamma = 1e-4;  // Frobenius regularization
  Index t1 = 5;         // intraclass neighbours per sample
  Index t2 = 5;         // interclass neighbours per sample
  double delta = 1e-3;  // plain gradient-descent rate

  void validate() const;
};

/// P(i, j) = 1 when j is one of i's t1 nearest same-class samples,
/// Q(i, j) = 1 when j is one of i's t2 nearest other-class samples.
struct NeighborMask {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> p;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> q;

  Index size() const { return p.rows(); }
};

/// Squared Euclidean distance.
template <typename DerivedA, typename DerivedB>
auto pair_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw DimensionError("pair_distance: dimension mismatch");
  return (a - b).squaredNorm();
}

inline double pair_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("pair_distance: dimension mismatch");
  return pair_distance(a.vec(), b.vec());
}

/// All pairwise squared distances between rows of an N x d matrix.
RowMatrix<double> pairwise_distances(const Tensor& features);

/// Nearest neighbours by squared distance on `features`; ties go to the lower
/// index and counts clamp to what each class offers.
NeighborMask build_neighbor_masks(const Tensor& features, std::span<const std::uint32_t> labels,
                                  Index t1, Index t2);

struct ScatterTerms {
  double compactness = 0;   // S_c
  double separability = 0;  // S_b
};

/// S_c and S_b for every FC layer (u^(1) .. u^(L)).
std::vector<ScatterTerms> scatter_terms(const FcCache& cache, const NeighborMask& mask, Index t1, Index t2);

/// Sum over layers of S_c - alpha S_b + gamma (|W|^2 + |b|^2).
double dml_loss(const FcStack& stack, const FcCache& cache, const NeighborMask& mask,
                const DmlConfig& config);

struct DmlGradients {
  std::vector<Tensor> d_weight;
  std::vector<Tensor> d_bias;

  /// Interleaved W1, b1, W2, b2, ... matching FcStack::parameters().
  std::vector<Tensor> as_list() const;
};

/// Pair-by-pair backward recursion: for each masked pair (i, j) the
/// sensitivities M_ij and M_ji are propagated from the top layer down,
///   M_ij(L) = (u_i(L) - u_j(L)) * psi'(z_i(L))
///   M_ij(l) = [(u_i(l) - u_j(l)) + W(l+1)^T M_ij(l+1)] * psi'(z_i(l)),
/// and accumulated into dW(l) with weights 2/(n t1) and -2 alpha/(n t2),
/// plus 2 gamma W(l).
DmlGradients dml_gradients(const FcStack& stack, const FcCache& cache, const NeighborMask& mask,
                           const DmlConfig& config);

/// Same gradient, with the pair sums folded into one per-sample drive
/// (a graph Laplacian of the pair weights) before a single batched backward
/// pass. O(n L d^2) instead of O(pairs L d^2).
DmlGradients dml_gradients_aggregated(const FcStack& stack, const FcCache& cache,
                                      const NeighborMask& mask, const DmlConfig& config);

/// W <- W - delta dW, b <- b - delta db.
void dml_gd_step(FcStack& stack, const DmlGradients& grads, double delta);

}  // namespace dmlganr
