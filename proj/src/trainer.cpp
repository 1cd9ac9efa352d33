#include "dmlganr/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "dmlganr/checkpoint.hpp"
#include "dmlganr/retrieval.hpp"

namespace dmlganr {

void GanConfig::validate() const {
  if (!(lambda >= 0)) throw ValidationError("gan.lambda must be >= 0");
  if (!(beta1 >= 0) || !(beta2 >= 0)) throw ValidationError("gan.beta1 and gan.beta2 must be >= 0");
  if (!(epsilon > 0 && epsilon <= 1e-3)) throw ValidationError("gan.epsilon must lie in (0, 1e-3]");
  if (image_side < 64 || image_side % 64 != 0) throw ValidationError("gan.image_side must be a multiple of 64");
  if (width_divisor < 1 || 16 % width_divisor != 0) throw ValidationError("gan.width_divisor must divide 16");
}

void TrainerConfig::validate() const {
  if (epochs < 0) throw ValidationError("trainer.epochs must be >= 0");
  if (dml_batch < 2) throw ValidationError("trainer.dml_batch must be >= 2");
  if (gan_batch < 1) throw ValidationError("trainer.gan_batch must be >= 1");
  if (checkpoint_every < 0) throw ValidationError("trainer.checkpoint_every must be >= 0");
  if (eval_every < 0) throw ValidationError("trainer.eval_every must be >= 0");
  if (optimizer == OptimizerKind::Adam) {
    adam_dml.validate();
    adam_gan.validate();
  }
}

void TrainingConfig::validate() const {
  if (fc_widths.empty()) throw ValidationError("pipeline.fc_widths needs at least one layer");
  for (Index w : fc_widths) {
    if (w < 1) throw ValidationError("pipeline.fc_widths entries must be positive");
  }
  if (!(negative_slope > 0 && negative_slope < 1)) throw ValidationError("pipeline.negative_slope must lie in (0, 1)");
  dml.validate();
  gan.validate();
  trainer.validate();
  if (trainer.optimizer == OptimizerKind::Gd && !(dml.delta >= 0)) throw ValidationError("dml.delta must be >= 0");
}

bool EpochReport::operator==(const EpochReport& o) const {
  const auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  return epoch == o.epoch && same(phi_dml, o.phi_dml) && same(phi_d, o.phi_d) && same(phi_g, o.phi_g) &&
         same(phi_total, o.phi_total) && same(map_eval, o.map_eval);
}

TrainingState initialize_training(const TrainingConfig& config, Index input_dim) {
  config.validate();
  TrainingState s;
  s.rng.seed(config.trainer.seed);
  std::vector<Index> widths{input_dim};
  widths.insert(widths.end(), config.fc_widths.begin(), config.fc_widths.end());
  s.stack = FcStack::initialized(widths, s.rng, config.negative_slope);
  s.gan_enabled = config.gan.enabled;
  if (s.gan_enabled) {
    const auto arch = config.gan.architecture(s.stack.output_dim());
    s.generator = GeneratorNet::initialized(arch.generator, s.rng);
    s.discriminator = DiscriminatorNet::initialized(arch.discriminator, s.rng, config.gan.epsilon);
  }
  if (config.trainer.optimizer == OptimizerKind::Gd) {
    s.fc_opt = Optimizer::gd(config.dml.delta);
    s.d_opt = Optimizer::gd(config.gan.beta1);
    s.g_opt = Optimizer::gd(config.gan.beta2);
  } else {
    s.fc_opt = Optimizer::adam(config.trainer.adam_dml);
    s.d_opt = Optimizer::adam(config.trainer.adam_gan);
    s.g_opt = Optimizer::adam(config.trainer.adam_gan);
  }
  return s;
}

std::uint64_t fingerprint(const std::vector<const Tensor*>& tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor* t : tensors) {
    for (double v : t->values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

std::uint64_t fingerprint(const Tensor& tensor) { return fingerprint(std::vector<const Tensor*>{&tensor}); }

namespace {

struct BatchLosses {
  double phi_dml = 0, phi_d = 0, phi_g = 0, phi_gan = 0, phi_total = 0;
};

void guard(double value, const char* term) {
  if (!std::isfinite(value) || std::abs(value) > 1e6) {
    std::ostringstream msg;
    msg << "training diverged: " << term << " = " << value;
    throw NumericError(msg.str());
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> rows, Index batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < rows.size(); i += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(rows.size(), i + static_cast<std::size_t>(batch));
    out.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(i), rows.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A lone trailing sample has no neighbours; fold it into the previous batch.
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

std::vector<Index> gan_positions(Index batch, Index gan_batch, std::mt19937_64& rng) {
  std::vector<Index> pos(static_cast<std::size_t>(batch));
  std::iota(pos.begin(), pos.end(), Index{0});
  if (gan_batch >= batch) return pos;
  for (Index i = 0; i < gan_batch; ++i) {
    std::uniform_int_distribution<Index> pick(i, batch - 1);
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(pick(rng))]);
  }
  pos.resize(static_cast<std::size_t>(gan_batch));
  return pos;
}

BatchLosses train_batch(TrainingState& s, const FeatureDataset& ds, const std::vector<std::size_t>& rows,
                        const TrainingConfig& config, const StepObserver& observer) {
  BatchLosses out;
  StepTrace trace;
  if (observer && s.gan_enabled) {
    trace.g_before = fingerprint(std::as_const(s.generator).parameters());
    trace.d_before = fingerprint(std::as_const(s.discriminator).parameters());
  }

  // FC forward, masks on u^(0), DML loss.
  const Tensor u0 = ds.feature_matrix(rows);
  const auto labels = ds.labels(rows);
  const FcCache cache = s.stack.forward(u0);
  const NeighborMask mask = build_neighbor_masks(u0, labels, config.dml.t1, config.dml.t2);
  out.phi_dml = dml_loss(s.stack, cache, mask, config.dml);
  guard(out.phi_dml, "phi_dml");

  GeneratorCache g_cache;
  DiscriminatorCache d_real, d_fake;
  std::vector<Index> sub;
  if (s.gan_enabled) {
    sub = gan_positions(static_cast<Index>(rows.size()), config.trainer.gan_batch, s.rng);
    const Index k = static_cast<Index>(sub.size());
    Tensor features({k, cache.output().dim(1)});
    std::vector<std::size_t> real_rows;
    for (Index i = 0; i < k; ++i) {
      features.matrix().row(i) = cache.output().matrix().row(sub[static_cast<std::size_t>(i)]);
      real_rows.push_back(rows[static_cast<std::size_t>(sub[static_cast<std::size_t>(i)])]);
    }
    g_cache = s.generator.forward(features, Mode::Train);
    d_real = s.discriminator.forward(ds.image_batch(real_rows), Mode::Train);
    d_fake = s.discriminator.forward(g_cache.images(), Mode::Train);
    const GanLosses l = gan_losses(d_real.probabilities, d_fake.probabilities, config.gan.loss);
    out.phi_d = l.discriminator;
    out.phi_g = l.generator;
    out.phi_gan = l.value;
    guard(out.phi_d, "phi_d");
    guard(out.phi_g, "phi_g");
  }
  out.phi_total = out.phi_dml + config.gan.lambda * out.phi_gan;
  guard(out.phi_total, "phi_total");

  // Gradients from the pre-update parameters.
  DmlGradients dml = config.trainer.literal_dml_gradients ? dml_gradients(s.stack, cache, mask, config.dml)
                                                          : dml_gradients_aggregated(s.stack, cache, mask, config.dml);
  std::vector<Tensor> fc_grads = dml.as_list();
  NetGradients d_grads;
  if (s.gan_enabled) {
    d_grads = discriminator_gradients(s.discriminator, d_real, d_fake);
    if (observer) {
      trace.g_at_fake = fingerprint(std::as_const(s.generator).parameters());
      trace.fake_generated = fingerprint(g_cache.images());
      trace.fake_at_d_step = fingerprint(d_fake.input);
      trace.d_at_d_step = fingerprint(std::as_const(s.discriminator).parameters());
    }
    if (config.gan.feature_backprop && config.gan.lambda > 0) {
      const NetGradients through =
          generator_gradients(s.generator, g_cache, s.discriminator, d_fake, config.gan.loss);
      Tensor grad_out(cache.output().shape());
      for (std::size_t i = 0; i < sub.size(); ++i) {
        grad_out.matrix().row(sub[i]) += config.gan.lambda * through.input.matrix().row(static_cast<Index>(i));
      }
      const auto extra = s.stack.backward_from_output(cache, grad_out);
      for (std::size_t i = 0; i < fc_grads.size(); ++i) fc_grads[i].vec() += extra[i].vec();
    }
  }

  // Updates in order: DML, D, then G against the updated D.
  s.fc_opt.step(s.stack.parameters(), fc_grads);
  if (s.gan_enabled) {
    s.discriminator.update_running_stats(d_real);
    s.d_opt.step(s.discriminator.parameters(), d_grads.params);
    if (observer) trace.d_after = fingerprint(std::as_const(s.discriminator).parameters());
    const DiscriminatorCache d_fake_after = s.discriminator.forward(g_cache.images(), Mode::Train);
    if (observer) trace.d_at_g_step = fingerprint(std::as_const(s.discriminator).parameters());
    const NetGradients g_grads =
        generator_gradients(s.generator, g_cache, s.discriminator, d_fake_after, config.gan.loss);
    s.g_opt.step(s.generator.parameters(), g_grads.params);
    s.generator.update_running_stats(g_cache);
    if (observer) {
      trace.g_after = fingerprint(std::as_const(s.generator).parameters());
    }
  }
  if (observer) observer(trace);
  return out;
}

void check_data(const TrainingState& s, const TrainingData& data) {
  if (!data.dataset) throw ValidationError("training data has no dataset");
  if (data.train.size() < 2) throw ValidationError("training split needs at least 2 records");
  if (data.dataset->dim != s.stack.input_dim()) {
    throw DimensionError("dataset dim " + std::to_string(data.dataset->dim) + " does not match stack input " +
                         std::to_string(s.stack.input_dim()));
  }
  if (s.gan_enabled) {
    if (!data.dataset->has_images()) throw ValidationError("gan.enabled requires a dataset with paired images");
    const auto& img = *data.dataset->records.front().image;
    const auto& arch = s.discriminator.arch();
    if (img.dim(0) != arch.image_channels || img.dim(1) != arch.image_side || img.dim(2) != arch.image_side) {
      throw DimensionError("dataset images " + shape_string(img.shape()) + " do not match gan.image_side " +
                           std::to_string(arch.image_side));
    }
  }
}

}  // namespace

EpochReport train_epoch(TrainingState& state, const TrainingData& data, const TrainingConfig& config,
                        const StepObserver& observer) {
  check_data(state, data);
  std::vector<std::size_t> order = data.train;
  std::shuffle(order.begin(), order.end(), state.rng);
  const auto batches = make_batches(std::move(order), config.trainer.dml_batch);

  BatchLosses sum;
  for (const auto& batch : batches) {
    const BatchLosses b = train_batch(state, *data.dataset, batch, config, observer);
    sum.phi_dml += b.phi_dml;
    sum.phi_d += b.phi_d;
    sum.phi_g += b.phi_g;
    sum.phi_total += b.phi_total;
  }
  const double count = static_cast<double>(batches.size());
  EpochReport r;
  r.epoch = ++state.epoch;
  r.phi_dml = sum.phi_dml / count;
  r.phi_d = sum.phi_d / count;
  r.phi_g = sum.phi_g / count;
  r.phi_total = sum.phi_total / count;
  const Index every = config.trainer.eval_every;
  if (!data.eval.empty() && every > 0 && (r.epoch % every == 0 || r.epoch == config.trainer.epochs)) {
    const FcCache c = state.stack.forward(data.dataset->feature_matrix(data.eval));
    r.map_eval = retrieval_map(c.output(), data.dataset->labels(data.eval));
  }
  state.history.push_back(r);
  return r;
}

History train(TrainingState& state, const TrainingData& data, const TrainingConfig& config, const TrainHooks& hooks) {
  config.validate();
  while (state.epoch < config.trainer.epochs) {
    const EpochReport r = train_epoch(state, data, config, hooks.observer);
    if (hooks.on_epoch) hooks.on_epoch(r);
    const Index every = config.trainer.checkpoint_every;
    const bool due = (every > 0 && r.epoch % every == 0) || r.epoch == config.trainer.epochs;
    if (!hooks.checkpoint_dir.empty() && due) {
      save_checkpoint(state, checkpoint_path(hooks.checkpoint_dir, r.epoch), hooks.config_echo);
    }
  }
  return state.history;
}

// ----- history files -------------------------------------------------------

namespace {

std::string number(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& s, std::size_t line) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("history line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

constexpr const char* kHistoryHeader = "epoch,phi_dml,phi_d,phi_g,phi_total,map_eval";

}  // namespace

std::string history_csv(const History& history) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + number(r.phi_dml) + "," + number(r.phi_d) + "," + number(r.phi_g) + "," +
           number(r.phi_total) + "," + number(r.map_eval) + "\n";
  }
  return out;
}

History parse_history_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kHistoryHeader) throw ParseError("history CSV: missing header");
  History h;
  std::size_t n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("history line " + std::to_string(n) + ": expected 6 fields");
    EpochReport r;
    r.epoch = static_cast<Index>(parse_number(cells[0], n));
    r.phi_dml = parse_number(cells[1], n);
    r.phi_d = parse_number(cells[2], n);
    r.phi_g = parse_number(cells[3], n);
    r.phi_total = parse_number(cells[4], n);
    r.map_eval = parse_number(cells[5], n);
    h.push_back(r);
  }
  return h;
}

std::string history_json(const History& history) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : history) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["phi_dml"] = r.phi_dml;
    j["phi_d"] = r.phi_d;
    j["phi_g"] = r.phi_g;
    j["phi_total"] = r.phi_total;
    j["map_eval"] = std::isnan(r.map_eval) ? nlohmann::ordered_json() : nlohmann::ordered_json(r.map_eval);
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

History parse_history_json(const std::string& text) {
  History h;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      EpochReport r;
      r.epoch = j.at("epoch").get<Index>();
      r.phi_dml = j.at("phi_dml").get<double>();
      r.phi_d = j.at("phi_d").get<double>();
      r.phi_g = j.at("phi_g").get<double>();
      r.phi_total = j.at("phi_total").get<double>();
      r.map_eval = j.at("map_eval").is_null() ? std::numeric_limits<double>::quiet_NaN() : j["map_eval"].get<double>();
      h.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("history JSON: ") + e.what());
  }
  return h;
}

void write_history(const History& history, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] :
       {std::pair{"history.csv", history_csv(history)}, std::pair{"history.json", history_json(history)}}) {
    std::ofstream os(dir / name, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write " + (dir / name).string());
  }
}

}  // namespace dmlganr
