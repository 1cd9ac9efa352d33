#include "dmlganr/metric_learning.hpp"

#include <algorithm>
#include <numeric>

namespace dmlganr {

namespace {

void check_cache(const FcStack& stack, const FcCache& cache, const NeighborMask& mask) {
  if (cache.empty() || cache.u.size() != stack.depth() + 1 || cache.z.size() != stack.depth()) {
    throw StateError("DML: forward cache missing or built for a different stack");
  }
  if (cache.batch() != mask.size()) {
    throw StateError("DML: neighbour mask built for a different batch");
  }
}

// Signed pair weights: 2/(n t1) on P pairs, -2 alpha/(n t2) on Q pairs.
RowMatrix<double> pair_weights(const NeighborMask& mask, const DmlConfig& config) {
  const double n = static_cast<double>(mask.size());
  const double wp = 2.0 / (n * static_cast<double>(config.t1));
  const double wq = -2.0 * config.alpha / (n * static_cast<double>(config.t2));
  return mask.p.cast<double>() * wp + mask.q.cast<double>() * wq;
}

}  // namespace

void DmlConfig::validate() const {
  if (!(alpha > 0)) throw ValidationError("dml.alpha must be > 0");
  if (!(gamma >= 0)) throw ValidationError("dml.gamma must be >= 0");
  if (t1 < 1) throw ValidationError("dml.t1 must be >= 1");
  if (t2 < 1) throw ValidationError("dml.t2 must be >= 1");
  if (!(delta >= 0)) throw ValidationError("dml.delta must be >= 0");
}

RowMatrix<double> pairwise_distances(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("pairwise_distances expects an N x d matrix");
  const auto x = features.matrix();
  const Index n = x.rows();
  RowMatrix<double> d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0;
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = pair_distance(x.row(i), x.row(j));
  }
  return d;
}

NeighborMask build_neighbor_masks(const Tensor& features, std::span<const std::uint32_t> labels,
                                  Index t1, Index t2) {
  const Index n = features.rank() == 2 ? features.dim(0) : 0;
  if (n < 2) throw DimensionError("neighbour masks need at least 2 samples");
  if (static_cast<Index>(labels.size()) != n) throw DimensionError("one label per sample required");
  if (t1 < 1 || t2 < 1) throw ValidationError("t1 and t2 must be >= 1");
  const RowMatrix<double> d = pairwise_distances(features);

  NeighborMask mask;
  mask.p.setZero(n, n);
  mask.q.setZero(n, n);
  std::vector<Index> same, other;
  for (Index i = 0; i < n; ++i) {
    same.clear();
    other.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? same : other).push_back(j);
    }
    const auto nearer = [&](Index a, Index b) { return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b); };
    const auto take = [&](std::vector<Index>& pool, Index count, auto& out) {
      const auto k = static_cast<std::ptrdiff_t>(std::min<Index>(count, static_cast<Index>(pool.size())));
      std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), nearer);
      for (std::ptrdiff_t r = 0; r < k; ++r) out(i, pool[static_cast<std::size_t>(r)]) = 1;
    };
    take(same, t1, mask.p);
    take(other, t2, mask.q);
  }
  return mask;
}

std::vector<ScatterTerms> scatter_terms(const FcCache& cache, const NeighborMask& mask, Index t1, Index t2) {
  if (cache.empty()) throw StateError("scatter_terms: missing forward cache");
  if (cache.batch() != mask.size()) throw StateError("scatter_terms: mask built for a different batch");
  const double n = static_cast<double>(mask.size());
  std::vector<ScatterTerms> terms;
  for (std::size_t l = 1; l < cache.u.size(); ++l) {
    const auto u = cache.u[l].matrix();
    double sc = 0, sb = 0;
    for (Index i = 0; i < mask.size(); ++i) {
      for (Index j = 0; j < mask.size(); ++j) {
        if (mask.p(i, j)) sc += pair_distance(u.row(i), u.row(j));
        if (mask.q(i, j)) sb += pair_distance(u.row(i), u.row(j));
      }
    }
    terms.push_back({sc / (n * static_cast<double>(t1)), sb / (n * static_cast<double>(t2))});
  }
  return terms;
}

double dml_loss(const FcStack& stack, const FcCache& cache, const NeighborMask& mask,
                const DmlConfig& config) {
  check_cache(stack, cache, mask);
  const auto terms = scatter_terms(cache, mask, config.t1, config.t2);
  double loss = 0;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    const auto& layer = stack.layers()[l];
    loss += terms[l].compactness - config.alpha * terms[l].separability +
            config.gamma * (layer.weight.vec().squaredNorm() + layer.bias.vec().squaredNorm());
  }
  return loss;
}

std::vector<Tensor> DmlGradients::as_list() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < d_weight.size(); ++l) {
    out.push_back(d_weight[l]);
    out.push_back(d_bias[l]);
  }
  return out;
}

namespace {

DmlGradients regularization_only(const FcStack& stack, double gamma) {
  DmlGradients g;
  for (const auto& layer : stack.layers()) {
    g.d_weight.push_back(Tensor(layer.weight.shape(), (2.0 * gamma) * layer.weight.vec()));
    g.d_bias.push_back(Tensor(layer.bias.shape(), (2.0 * gamma) * layer.bias.vec()));
  }
  return g;
}

}  // namespace

DmlGradients dml_gradients(const FcStack& stack, const FcCache& cache, const NeighborMask& mask,
                           const DmlConfig& config) {
  check_cache(stack, cache, mask);
  const std::size_t depth = stack.depth();
  const Index n = mask.size();
  const RowMatrix<double> weights = pair_weights(mask, config);

  std::vector<RowMatrix<double>> slope(depth);
  for (std::size_t l = 0; l < depth; ++l) slope[l] = activate_deriv(stack.activation(), cache.z[l]).matrix();

  DmlGradients g = regularization_only(stack, config.gamma);
  std::vector<Eigen::VectorXd> m_ij(depth), m_ji(depth);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double w = weights(i, j);
      if (w == 0.0) continue;
      for (std::size_t l = depth; l-- > 0;) {
        const auto u = cache.u[l + 1].matrix();
        Eigen::VectorXd diff = (u.row(i) - u.row(j)).transpose();
        if (l + 1 < depth) {
          const auto w_up = stack.layers()[l + 1].weight.matrix();
          m_ij[l] = (diff + w_up.transpose() * m_ij[l + 1]).cwiseProduct(slope[l].row(i).transpose());
          m_ji[l] = (-diff + w_up.transpose() * m_ji[l + 1]).cwiseProduct(slope[l].row(j).transpose());
        } else {
          m_ij[l] = diff.cwiseProduct(slope[l].row(i).transpose());
          m_ji[l] = (-diff).cwiseProduct(slope[l].row(j).transpose());
        }
        const auto below = cache.u[l].matrix();
        g.d_weight[l].matrix().noalias() +=
            w * (m_ij[l] * below.row(i) + m_ji[l] * below.row(j));
        g.d_bias[l].vec() += w * (m_ij[l] + m_ji[l]);
      }
    }
  }
  return g;
}

DmlGradients dml_gradients_aggregated(const FcStack& stack, const FcCache& cache,
                                      const NeighborMask& mask, const DmlConfig& config) {
  check_cache(stack, cache, mask);
  const std::size_t depth = stack.depth();
  const RowMatrix<double> weights = pair_weights(mask, config);
  const RowMatrix<double> sym = weights + weights.transpose();
  RowMatrix<double> laplacian = -sym;
  laplacian.diagonal() += sym.rowwise().sum();

  DmlGradients g = regularization_only(stack, config.gamma);
  RowMatrix<double> upstream;
  for (std::size_t l = depth; l-- > 0;) {
    RowMatrix<double> drive = laplacian * cache.u[l + 1].matrix();
    if (l + 1 < depth) drive += upstream;
    const RowMatrix<double> delta =
        drive.cwiseProduct(activate_deriv(stack.activation(), cache.z[l]).matrix());
    g.d_weight[l].matrix().noalias() += delta.transpose() * cache.u[l].matrix();
    g.d_bias[l].vec() += delta.colwise().sum().transpose();
    upstream = delta * stack.layers()[l].weight.matrix();
  }
  return g;
}

void dml_gd_step(FcStack& stack, const DmlGradients& grads, double delta) {
  auto& layers = stack.layers();
  if (grads.d_weight.size() != layers.size() || grads.d_bias.size() != layers.size()) {
    throw DimensionError("dml_gd_step: gradient/stack depth mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.d_weight[l].shape() != layers[l].weight.shape() ||
        grads.d_bias[l].shape() != layers[l].bias.shape()) {
      throw DimensionError("dml_gd_step: gradient shape mismatch at layer " + std::to_string(l + 1));
    }
    layers[l].weight.vec() -= delta * grads.d_weight[l].vec();
    layers[l].bias.vec() -= delta * grads.d_bias[l].vec();
  }
}

}  // namespace dmlganr
