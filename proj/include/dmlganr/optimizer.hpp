#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

enum class OptimizerKind { Gd, Adam };

OptimizerKind optimizer_kind_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;  // decoupled: p <- p - lr * wd * p

  void validate() const;
};

/// Plain descent or Adam over an ordered parameter list. Adam moments are
/// allocated on the first step and must keep matching shapes afterwards.
class Optimizer {
 public:
  Optimizer() = default;
  static Optimizer gd(double rate);
  static Optimizer adam(const AdamConfig& config);

  OptimizerKind kind() const { return kind_; }
  double rate() const { return rate_; }
  const AdamConfig& adam_config() const { return adam_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  /// Replaces the full state; used by checkpoint loading.
  void restore(OptimizerKind kind, double rate, const AdamConfig& adam, std::uint64_t steps,
               std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  OptimizerKind kind_ = OptimizerKind::Gd;
  double rate_ = 0;
  AdamConfig adam_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace dmlganr
