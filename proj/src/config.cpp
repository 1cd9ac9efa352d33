#include "dmlganr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dmlganr {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads the known keys of one object and rejects the rest.
class Section {
 public:
  Section(const json& parent, const std::string& key, const std::string& path)
      : path_(path.empty() ? key : path + "." + key) {
    if (!parent.contains(key)) return;
    node_ = &parent.at(key);
    if (!node_->is_object()) throw ValidationError("config: " + path_ + " must be an object");
  }

  template <typename T>
  Section& get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return *this;
    const json& v = node_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ValidationError("expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError("expected a number");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: " + path_ + "." + key + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("config: " + path_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  template <typename Fn>
  Section& get_string(const std::string& key, Fn&& apply) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return *this;
    const json& v = node_->at(key);
    if (!v.is_string()) throw ValidationError("config: " + path_ + "." + key + ": expected a string");
    try {
      apply(v.get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError("config: " + path_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return node_ ? Section(*node_, key, path_) : Section(json::object(), key, path_);
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) throw ValidationError("config: unknown key '" + path_ + "." + key + "'");
    }
  }

 private:
  std::string path_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

void read_adam(Section s, AdamConfig& a) {
  s.get("lr", a.lr).get("beta1", a.beta1).get("beta2", a.beta2).get("eps", a.eps).get("weight_decay", a.weight_decay);
  s.finish();
}

ordered_json adam_json(const AdamConfig& a) {
  ordered_json j;
  j["lr"] = a.lr;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["eps"] = a.eps;
  j["weight_decay"] = a.weight_decay;
  return j;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("config: top level must be an object");
  const std::set<std::string> sections{"pipeline", "dml", "gan", "trainer", "eval"};
  for (const auto& [key, value] : root.items()) {
    if (!sections.count(key)) throw ValidationError("config: unknown key '" + key + "'");
  }

  RunConfig c;
  {
    Section s(root, "pipeline", "");
    s.get("dataset", c.pipeline.dataset)
        .get("fc_widths", c.pipeline.fc_widths)
        .get("negative_slope", c.pipeline.negative_slope)
        .get("train_fraction", c.pipeline.train_fraction)
        .get("split_seed", c.pipeline.split_seed);
    s.finish();
  }
  {
    Section s(root, "dml", "");
    s.get("alpha", c.dml.alpha).get("gamma", c.dml.gamma).get("t1", c.dml.t1).get("t2", c.dml.t2).get("delta", c.dml.delta);
    s.finish();
  }
  {
    Section s(root, "gan", "");
    s.get("enabled", c.gan.enabled)
        .get("lambda", c.gan.lambda)
        .get("beta1", c.gan.beta1)
        .get("beta2", c.gan.beta2)
        .get("image_side", c.gan.image_side)
        .get("width_divisor", c.gan.width_divisor)
        .get("epsilon", c.gan.epsilon)
        .get("batch_norm", c.gan.batch_norm)
        .get_string("loss", [&](const std::string& v) { c.gan.loss = generator_loss_from_string(v); })
        .get("feature_backprop", c.gan.feature_backprop);
    s.finish();
  }
  {
    Section s(root, "trainer", "");
    s.get("epochs", c.trainer.epochs)
        .get("dml_batch", c.trainer.dml_batch)
        .get("gan_batch", c.trainer.gan_batch)
        .get_string("optimizer", [&](const std::string& v) { c.trainer.optimizer = optimizer_kind_from_string(v); })
        .get("seed", c.trainer.seed)
        .get("checkpoint_every", c.trainer.checkpoint_every)
        .get("eval_every", c.trainer.eval_every)
        .get("literal_dml_gradients", c.trainer.literal_dml_gradients);
    read_adam(s.child("adam_dml"), c.trainer.adam_dml);
    read_adam(s.child("adam_gan"), c.trainer.adam_gan);
    s.finish();
  }
  {
    Section s(root, "eval", "");
    s.get_string("ap_mode", [&](const std::string& v) { c.eval.ap_mode = ap_mode_from_string(v); })
        .get("threads", c.eval.threads);
    s.finish();
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::dump() const {
  ordered_json j;
  j["pipeline"]["dataset"] = pipeline.dataset;
  j["pipeline"]["fc_widths"] = pipeline.fc_widths;
  j["pipeline"]["negative_slope"] = pipeline.negative_slope;
  j["pipeline"]["train_fraction"] = pipeline.train_fraction;
  j["pipeline"]["split_seed"] = pipeline.split_seed;

  j["dml"]["alpha"] = dml.alpha;
  j["dml"]["gamma"] = dml.gamma;
  j["dml"]["t1"] = dml.t1;
  j["dml"]["t2"] = dml.t2;
  j["dml"]["delta"] = dml.delta;

  j["gan"]["enabled"] = gan.enabled;
  j["gan"]["lambda"] = gan.lambda;
  j["gan"]["beta1"] = gan.beta1;
  j["gan"]["beta2"] = gan.beta2;
  j["gan"]["image_side"] = gan.image_side;
  j["gan"]["width_divisor"] = gan.width_divisor;
  j["gan"]["epsilon"] = gan.epsilon;
  j["gan"]["batch_norm"] = gan.batch_norm;
  j["gan"]["loss"] = to_string(gan.loss);
  j["gan"]["feature_backprop"] = gan.feature_backprop;

  j["trainer"]["epochs"] = trainer.epochs;
  j["trainer"]["dml_batch"] = trainer.dml_batch;
  j["trainer"]["gan_batch"] = trainer.gan_batch;
  j["trainer"]["optimizer"] = to_string(trainer.optimizer);
  j["trainer"]["adam_dml"] = adam_json(trainer.adam_dml);
  j["trainer"]["adam_gan"] = adam_json(trainer.adam_gan);
  j["trainer"]["seed"] = trainer.seed;
  j["trainer"]["checkpoint_every"] = trainer.checkpoint_every;
  j["trainer"]["eval_every"] = trainer.eval_every;
  j["trainer"]["literal_dml_gradients"] = trainer.literal_dml_gradients;

  j["eval"]["ap_mode"] = to_string(eval.ap_mode);
  j["eval"]["threads"] = eval.threads;
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  if (!(pipeline.train_fraction > 0 && pipeline.train_fraction < 1)) {
    throw ValidationError("config: pipeline.train_fraction must lie in (0, 1)");
  }
  training().validate();
}

TrainingConfig RunConfig::training() const {
  TrainingConfig t;
  t.fc_widths = pipeline.fc_widths;
  t.negative_slope = pipeline.negative_slope;
  t.dml = dml;
  t.gan = gan;
  t.trainer = trainer;
  return t;
}

}  // namespace dmlganr
