#include "dmlganr/optimizer.hpp"

#include <cmath>

namespace dmlganr {

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "gd") return OptimizerKind::Gd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ValidationError("unknown optimizer '" + name + "' (expected gd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Gd ? "gd" : "adam"; }

void AdamConfig::validate() const {
  if (!(lr > 0)) throw ValidationError("adam lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ValidationError("adam eps must be > 0");
  if (!(weight_decay >= 0)) throw ValidationError("adam weight_decay must be >= 0");
}

Optimizer Optimizer::gd(double rate) {
  if (!(rate >= 0) || !std::isfinite(rate)) throw ValidationError("learning rate must be finite and >= 0");
  Optimizer o;
  o.kind_ = OptimizerKind::Gd;
  o.rate_ = rate;
  return o;
}

Optimizer Optimizer::adam(const AdamConfig& config) {
  config.validate();
  Optimizer o;
  o.kind_ = OptimizerKind::Adam;
  o.rate_ = config.lr;
  o.adam_ = config;
  return o;
}

void Optimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw DimensionError("optimizer: gradient " + std::to_string(i) + " has shape " +
                           shape_string(grads[i].shape()) + ", parameter has " +
                           shape_string(params[i]->shape()));
    }
  }
  ++steps_;
  if (kind_ == OptimizerKind::Gd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->vec() -= rate_ * grads[i].vec();
    return;
  }

  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  } else if (m_.size() != params.size()) {
    throw StateError("optimizer: parameter list changed between steps");
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(adam_.beta1, t);
  const double c2 = 1.0 - std::pow(adam_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].shape() != params[i]->shape()) throw StateError("optimizer: moment shape mismatch");
    auto g = grads[i].vec().array();
    auto m = m_[i].vec().array();
    auto v = v_[i].vec().array();
    m = adam_.beta1 * m + (1 - adam_.beta1) * g;
    v = adam_.beta2 * v + (1 - adam_.beta2) * g.square();
    auto p = params[i]->vec().array();
    if (adam_.weight_decay > 0) p -= (rate_ * adam_.weight_decay) * p;
    p -= rate_ * (m / c1) / ((v / c2).sqrt() + adam_.eps);
  }
}

void Optimizer::restore(OptimizerKind kind, double rate, const AdamConfig& adam, std::uint64_t steps,
                        std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw FormatError("optimizer state: moment lists differ in length");
  kind_ = kind;
  rate_ = rate;
  adam_ = adam;
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace dmlganr
