#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

enum class GradTarget { Dml, Discriminator, Generator };

GradTarget grad_target_from_string(const std::string& name);
std::string to_string(GradTarget target);

struct GradCheckOptions {
  GradTarget target = GradTarget::Dml;
  Index size = 1;  // instance scale; 1 is the default miniature
  double h = 1e-5;
  std::uint64_t seed = 1;
  double floor = 1e-8;  // absolute floor of the relative-error denominator
};

struct GradCheckReport {
  GradTarget target = GradTarget::Dml;
  Index coordinates = 0;
  double max_rel_err = 0;
  std::string worst_parameter;
  Index worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;

  bool passed(double bound = 1e-5) const { return max_rel_err <= bound; }
  std::string to_json() const;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Central differences (f(x + h) - f(x - h)) / 2h over every coordinate of
/// `params`, compared with `analytic`. Parameters are restored afterwards.
GradCheckReport compare_gradients(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                                  const std::vector<std::string>& names, const std::vector<Tensor>& analytic,
                                  double h, double floor = 1e-8);

/// Builds the seeded miniature instance for `target` and checks it:
///  dml           2-layer FC stack, 8 samples per size unit, literal M_ij recursion
///  discriminator 2 convs + pooled tap + concat + sigmoid FC on 8x8 images
///  generator     FC x2 + one upsampling conv to 3x8x8, through a fixed miniature D
GradCheckReport finite_difference_check(const GradCheckOptions& options);

}  // namespace dmlganr
