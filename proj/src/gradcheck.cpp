#include "dmlganr/gradcheck.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

#include "dmlganr/fc_stack.hpp"
#include "dmlganr/gan.hpp"
#include "dmlganr/metric_learning.hpp"

namespace dmlganr {

GradTarget grad_target_from_string(const std::string& name) {
  if (name == "dml") return GradTarget::Dml;
  if (name == "discriminator") return GradTarget::Discriminator;
  if (name == "generator") return GradTarget::Generator;
  throw ValidationError("unknown gradcheck target '" + name + "' (expected dml, discriminator or generator)");
}

std::string to_string(GradTarget target) {
  switch (target) {
    case GradTarget::Dml: return "dml";
    case GradTarget::Discriminator: return "discriminator";
    case GradTarget::Generator: return "generator";
  }
  return "dml";
}

std::string GradCheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["target"] = to_string(target);
  j["coordinates"] = coordinates;
  j["max_rel_err"] = max_rel_err;
  j["worst_parameter"] = worst_parameter;
  j["worst_index"] = worst_index;
  j["worst_analytic"] = worst_analytic;
  j["worst_numeric"] = worst_numeric;
  j["passed"] = passed();
  return j.dump(2);
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckReport compare_gradients(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                                  const std::vector<std::string>& names, const std::vector<Tensor>& analytic,
                                  double h, double floor) {
  if (!(h > 0) || !std::isfinite(h)) throw ValidationError("finite-difference step h must be > 0");
  if (params.size() != analytic.size() || params.size() != names.size()) {
    throw DimensionError("compare_gradients: parameter/gradient/name counts differ");
  }
  GradCheckReport r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    if (t.shape() != analytic[p].shape()) throw DimensionError("compare_gradients: shape mismatch for " + names[p]);
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = loss();
      t[i] = saved - h;
      const double down = loss();
      t[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[p][i], numeric, floor);
      ++r.coordinates;
      if (r.worst_parameter.empty() || err > r.max_rel_err) {
        r.max_rel_err = err;
        r.worst_parameter = names[p];
        r.worst_index = i;
        r.worst_analytic = analytic[p][i];
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

namespace {

// Miniature instances are checked at a generic point: weights scaled to
// 1/sqrt(fan_in) rather than the tiny training init, so every coordinate
// carries a gradient well above finite-difference roundoff.
void randomize(const std::vector<Tensor*>& params, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Tensor* t : params) {
    const double scale = t->rank() >= 2 ? 1.0 / std::sqrt(static_cast<double>(t->size() / t->dim(0))) : 0.1;
    for (double& v : t->values()) v = scale * unit(rng);
  }
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

GradCheckReport check_dml(const GradCheckOptions& o, std::mt19937_64& rng) {
  const Index n = 8 * o.size;
  const Index in = 10, hidden = 12, out = 8;
  FcStack stack = FcStack::initialized({in, hidden, out}, rng, 0.2);
  randomize(stack.parameters(), rng);
  const Tensor u0 = random_tensor({n, in}, rng, -1.0, 1.0);
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % 3);
  DmlConfig config;
  config.alpha = 0.5;
  config.gamma = 1e-2;
  config.t1 = 2;
  config.t2 = 3;
  const NeighborMask mask = build_neighbor_masks(u0, labels, config.t1, config.t2);
  const auto grads = dml_gradients(stack, stack.forward(u0), mask, config).as_list();
  std::vector<std::string> names;
  for (std::size_t l = 1; l <= stack.depth(); ++l) {
    names.push_back("F.fc" + std::to_string(l) + ".weight");
    names.push_back("F.fc" + std::to_string(l) + ".bias");
  }
  const auto loss = [&] { return dml_loss(stack, stack.forward(u0), mask, config); };
  return compare_gradients(loss, stack.parameters(), names, grads, o.h, o.floor);
}

GradCheckReport check_discriminator(const GradCheckOptions& o, std::mt19937_64& rng) {
  const auto arch = GanArchitecture::miniature(6);
  DiscriminatorNet d = DiscriminatorNet::initialized(arch.discriminator, rng);
  randomize(d.parameters(), rng);
  const Index n = 2 * o.size;
  const Tensor real = random_tensor({n, 3, 8, 8}, rng, -1.0, 1.0);
  const Tensor fake = random_tensor({n, 3, 8, 8}, rng, -1.0, 1.0);
  const auto grads = discriminator_gradients(d, d.forward(real), d.forward(fake)).params;
  const auto loss = [&] {
    return gan_losses(d.forward(real).probabilities, d.forward(fake).probabilities).discriminator;
  };
  return compare_gradients(loss, d.parameters(), d.parameter_names(), grads, o.h, o.floor);
}

GradCheckReport check_generator(const GradCheckOptions& o, std::mt19937_64& rng) {
  const auto arch = GanArchitecture::miniature(6);
  GeneratorNet g = GeneratorNet::initialized(arch.generator, rng);
  DiscriminatorNet d = DiscriminatorNet::initialized(arch.discriminator, rng);
  randomize(g.parameters(), rng);
  randomize(d.parameters(), rng);
  Tensor u = random_tensor({2 * o.size, 6}, rng, -1.0, 1.0);
  const auto variant = GeneratorLoss::NonSaturating;

  const GeneratorCache gc = g.forward(u);
  const NetGradients grads = generator_gradients(g, gc, d, d.forward(gc.images()), variant);
  std::vector<Tensor*> params = g.parameters();
  std::vector<std::string> names = g.parameter_names();
  std::vector<Tensor> analytic = grads.params;
  params.push_back(&u);
  names.push_back("G.input");
  analytic.push_back(grads.input);
  const auto loss = [&] {
    const Eigen::VectorXd p = d.forward(g.forward(u).images()).probabilities;
    return gan_losses(p, p, variant).generator;
  };
  return compare_gradients(loss, params, names, analytic, o.h, o.floor);
}

}  // namespace

GradCheckReport finite_difference_check(const GradCheckOptions& options) {
  if (!(options.h > 0) || !std::isfinite(options.h)) throw ValidationError("finite-difference step h must be > 0");
  if (options.size < 1 || options.size > 8) throw ValidationError("gradcheck size must lie in [1, 8]");
  if (!(options.floor > 0)) throw ValidationError("gradcheck floor must be > 0");
  std::mt19937_64 rng(options.seed);
  GradCheckReport r;
  switch (options.target) {
    case GradTarget::Dml: r = check_dml(options, rng); break;
    case GradTarget::Discriminator: r = check_discriminator(options, rng); break;
    case GradTarget::Generator: r = check_generator(options, rng); break;
  }
  r.target = options.target;
  return r;
}

}  // namespace dmlganr
