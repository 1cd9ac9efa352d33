#include "dmlganr/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dmlganr/binary_io.hpp"

namespace dmlganr {

namespace {

using nlohmann::json;

// ----- tensors -------------------------------------------------------------

void put_tensor(std::ostream& os, const Tensor& t, TensorPrecision p) {
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(p));
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (Index a = 0; a < t.rank(); ++a) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(a)));
  for (double v : t.values()) {
    if (p == TensorPrecision::F32) {
      io::put<float>(os, static_cast<float>(v));
    } else {
      io::put<double>(os, v);
    }
  }
}

Tensor get_tensor(std::istream& is) {
  const auto p = io::get<std::uint8_t>(is, "tensor dtype");
  if (p > 1) throw FormatError("unknown tensor dtype " + std::to_string(p));
  const auto rank = io::get<std::uint8_t>(is, "tensor rank");
  if (rank < 1 || rank > 4) throw FormatError("tensor rank out of range");
  Shape shape(rank);
  for (auto& d : shape) d = io::get<std::uint32_t>(is, "tensor shape");
  Tensor t(shape);
  for (double& v : t.values()) {
    v = p == 0 ? static_cast<double>(io::get<float>(is, "tensor data")) : io::get<double>(is, "tensor data");
  }
  return t;
}

void put_tensors(std::ostream& os, const std::vector<const Tensor*>& ts, TensorPrecision p) {
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ts.size()));
  for (const Tensor* t : ts) put_tensor(os, *t, p);
}

std::vector<Tensor> get_tensors(std::istream& is) {
  const auto n = io::get<std::uint32_t>(is, "tensor count");
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_tensor(is));
  return out;
}

void assign(const std::vector<Tensor*>& dst, std::vector<Tensor>&& src, const char* what) {
  if (dst.size() != src.size()) throw FormatError(std::string(what) + ": parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->shape() != src[i].shape()) throw FormatError(std::string(what) + ": parameter shape mismatch");
    *dst[i] = std::move(src[i]);
  }
}

// ----- architecture --------------------------------------------------------

json conv_json(const ConvSpec& c) {
  return {{"out", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride},
          {"pad", c.pad},          {"transposed", c.transposed}, {"bn", c.batch_norm}};
}

ConvSpec conv_from(const json& j) {
  return {j.at("out").get<Index>(),  j.at("kernel").get<Index>(),     j.at("stride").get<Index>(),
          j.at("pad").get<Index>(), j.at("transposed").get<bool>(), j.at("bn").get<bool>()};
}

json arch_json(const TrainingState& s) {
  json j;
  j["fc_widths"] = s.stack.widths();
  j["negative_slope"] = s.stack.activation().negative_slope;
  j["gan_enabled"] = s.gan_enabled;
  if (s.gan_enabled) {
    const auto& g = s.generator.arch();
    json gj{{"input_dim", g.input_dim}, {"fc_widths", g.fc_widths}, {"seed_channels", g.seed_channels},
            {"seed_side", g.seed_side}, {"blocks", json::array()}};
    for (const auto& b : g.blocks) gj["blocks"].push_back(conv_json(b));
    const auto& d = s.discriminator.arch();
    json dj{{"image_channels", d.image_channels}, {"image_side", d.image_side}, {"convs", json::array()},
            {"taps", json::array()}, {"fc_widths", d.fc_widths}, {"negative_slope", d.negative_slope},
            {"epsilon", s.discriminator.epsilon()}};
    for (const auto& c : d.convs) dj["convs"].push_back(conv_json(c));
    for (const auto& t : d.taps) dj["taps"].push_back({{"source", t.source}, {"window", t.window}});
    j["generator"] = gj;
    j["discriminator"] = dj;
  }
  return j;
}

void rebuild_models(const json& j, TrainingState& s) {
  std::mt19937_64 scratch(0);
  s.stack = FcStack::initialized(j.at("fc_widths").get<std::vector<Index>>(), scratch,
                                 j.at("negative_slope").get<double>());
  s.gan_enabled = j.at("gan_enabled").get<bool>();
  if (!s.gan_enabled) return;
  const json& gj = j.at("generator");
  GeneratorArch g;
  g.input_dim = gj.at("input_dim").get<Index>();
  g.fc_widths = gj.at("fc_widths").get<std::vector<Index>>();
  g.seed_channels = gj.at("seed_channels").get<Index>();
  g.seed_side = gj.at("seed_side").get<Index>();
  for (const auto& b : gj.at("blocks")) g.blocks.push_back(conv_from(b));
  const json& dj = j.at("discriminator");
  DiscriminatorArch d;
  d.image_channels = dj.at("image_channels").get<Index>();
  d.image_side = dj.at("image_side").get<Index>();
  for (const auto& c : dj.at("convs")) d.convs.push_back(conv_from(c));
  for (const auto& t : dj.at("taps")) d.taps.push_back({t.at("source").get<std::size_t>(), t.at("window").get<Index>()});
  d.fc_widths = dj.at("fc_widths").get<std::vector<Index>>();
  d.negative_slope = dj.at("negative_slope").get<double>();
  s.generator = GeneratorNet::initialized(g, scratch);
  s.discriminator = DiscriminatorNet::initialized(d, scratch, dj.at("epsilon").get<double>());
}

// ----- optimizer / rng / history -------------------------------------------

void put_optimizer(std::ostream& os, const Optimizer& o, TensorPrecision p) {
  io::put<std::uint8_t>(os, o.kind() == OptimizerKind::Gd ? 0 : 1);
  io::put<double>(os, o.rate());
  const auto& a = o.adam_config();
  for (double v : {a.lr, a.beta1, a.beta2, a.eps, a.weight_decay}) io::put<double>(os, v);
  io::put<std::uint64_t>(os, o.steps());
  std::vector<const Tensor*> m, v;
  for (const auto& t : o.first_moments()) m.push_back(&t);
  for (const auto& t : o.second_moments()) v.push_back(&t);
  put_tensors(os, m, p);
  put_tensors(os, v, p);
}

Optimizer get_optimizer(std::istream& is) {
  const auto kind = io::get<std::uint8_t>(is, "optimizer kind");
  if (kind > 1) throw FormatError("unknown optimizer kind");
  const double rate = io::get<double>(is, "optimizer rate");
  AdamConfig a;
  a.lr = io::get<double>(is, "adam lr");
  a.beta1 = io::get<double>(is, "adam beta1");
  a.beta2 = io::get<double>(is, "adam beta2");
  a.eps = io::get<double>(is, "adam eps");
  a.weight_decay = io::get<double>(is, "adam weight decay");
  const auto steps = io::get<std::uint64_t>(is, "optimizer steps");
  auto m = get_tensors(is);
  auto v = get_tensors(is);
  Optimizer o;
  o.restore(kind == 0 ? OptimizerKind::Gd : OptimizerKind::Adam, rate, a, steps, std::move(m), std::move(v));
  return o;
}

void check_moments(const Optimizer& o, const std::vector<Tensor*>& params, const char* what) {
  const auto& m = o.first_moments();
  if (m.empty()) return;
  if (m.size() != params.size()) throw FormatError(std::string(what) + ": moment count mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].shape() != params[i]->shape() || o.second_moments()[i].shape() != params[i]->shape()) {
      throw FormatError(std::string(what) + ": moment shape mismatch");
    }
  }
}

void put_history(std::ostream& os, const History& h) {
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(h.size()));
  for (const auto& r : h) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(r.epoch));
    for (double v : {r.phi_dml, r.phi_d, r.phi_g, r.phi_total, r.map_eval}) io::put<double>(os, v);
  }
}

History get_history(std::istream& is) {
  const auto n = io::get<std::uint32_t>(is, "history count");
  History h;
  for (std::uint32_t i = 0; i < n; ++i) {
    EpochReport r;
    r.epoch = io::get<std::uint32_t>(is, "history epoch");
    r.phi_dml = io::get<double>(is, "history");
    r.phi_d = io::get<double>(is, "history");
    r.phi_g = io::get<double>(is, "history");
    r.phi_total = io::get<double>(is, "history");
    r.map_eval = io::get<double>(is, "history");
    h.push_back(r);
  }
  return h;
}

void put_text(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

void put_block(std::ostream& os, const char* tag, const std::string& payload) {
  io::put_magic(os, tag);
  io::put<std::uint64_t>(os, payload.size());
  put_text(os, payload);
}

template <typename Fn>
std::string encode(Fn&& fn) {
  std::ostringstream os(std::ios::binary);
  fn(os);
  return os.str();
}

}  // namespace

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Index epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04lld.dmlc", static_cast<long long>(epoch));
  return dir / name;
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path, const std::string& config_echo,
                     TensorPrecision precision) {
  std::ostringstream rng_text;
  rng_text << state.rng;

  std::ostringstream os(std::ios::binary);
  io::put_magic(os, "DMLC");
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(state.epoch));
  put_block(os, "ARCH", arch_json(state).dump());
  put_block(os, "FCST", encode([&](std::ostream& o) { put_tensors(o, state.stack.parameters(), precision); }));
  if (state.gan_enabled) {
    put_block(os, "GENR", encode([&](std::ostream& o) {
                put_tensors(o, state.generator.parameters(), precision);
                put_tensors(o, state.generator.buffers(), precision);
              }));
    put_block(os, "DISC", encode([&](std::ostream& o) {
                put_tensors(o, state.discriminator.parameters(), precision);
                put_tensors(o, state.discriminator.buffers(), precision);
              }));
  }
  put_block(os, "OPTF", encode([&](std::ostream& o) { put_optimizer(o, state.fc_opt, precision); }));
  put_block(os, "OPTD", encode([&](std::ostream& o) { put_optimizer(o, state.d_opt, precision); }));
  put_block(os, "OPTG", encode([&](std::ostream& o) { put_optimizer(o, state.g_opt, precision); }));
  put_block(os, "RNGS", rng_text.str());
  put_block(os, "HIST", encode([&](std::ostream& o) { put_history(o, state.history); }));
  put_block(os, "CONF", config_echo);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream file(tmp, std::ios::binary);
    if (!file) throw IoError("cannot open " + tmp.string() + " for writing");
    const std::string bytes = os.str();
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  io::expect_magic(is, "DMLC");
  const auto version = io::get<std::uint32_t>(is, "version");
  if (version > kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads up to " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (version == 0) throw FormatError("invalid checkpoint version 0");
  const auto epoch = io::get<std::uint32_t>(is, "epoch");

  std::map<std::string, std::string> blocks;
  while (is.peek() != std::char_traits<char>::eof()) {
    std::array<char, 4> tag{};
    if (!is.read(tag.data(), 4)) throw FormatError("truncated block tag");
    const auto len = io::get<std::uint64_t>(is, "block length");
    std::string payload;
    payload.resize(len);
    if (len && !is.read(payload.data(), static_cast<std::streamsize>(len))) {
      throw FormatError("truncated block " + std::string(tag.data(), 4));
    }
    blocks[std::string(tag.data(), 4)] = std::move(payload);
  }
  const auto block = [&](const char* tag) -> std::istringstream {
    auto it = blocks.find(tag);
    if (it == blocks.end()) throw FormatError(std::string("checkpoint is missing block ") + tag);
    return std::istringstream(it->second, std::ios::binary);
  };

  LoadedCheckpoint out;
  TrainingState& s = out.state;
  if (!blocks.count("ARCH")) throw FormatError("checkpoint is missing block ARCH");
  try {
    rebuild_models(json::parse(blocks["ARCH"]), s);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad ARCH block: ") + e.what());
  } catch (const Error& e) {
    throw FormatError(std::string("bad ARCH block: ") + e.what());
  }
  {
    auto b = block("FCST");
    assign(s.stack.parameters(), get_tensors(b), "FCST");
  }
  if (s.gan_enabled) {
    auto g = block("GENR");
    assign(s.generator.parameters(), get_tensors(g), "GENR");
    assign(s.generator.buffers(), get_tensors(g), "GENR buffers");
    auto d = block("DISC");
    assign(s.discriminator.parameters(), get_tensors(d), "DISC");
    assign(s.discriminator.buffers(), get_tensors(d), "DISC buffers");
  }
  {
    auto f = block("OPTF");
    s.fc_opt = get_optimizer(f);
    check_moments(s.fc_opt, s.stack.parameters(), "OPTF");
    auto d = block("OPTD");
    s.d_opt = get_optimizer(d);
    auto g = block("OPTG");
    s.g_opt = get_optimizer(g);
    if (s.gan_enabled) {
      check_moments(s.d_opt, s.discriminator.parameters(), "OPTD");
      check_moments(s.g_opt, s.generator.parameters(), "OPTG");
    }
  }
  {
    auto r = block("RNGS");
    r >> s.rng;
    if (r.fail()) throw FormatError("bad RNGS block");
  }
  if (blocks.count("HIST")) {
    auto h = block("HIST");
    s.history = get_history(h);
  }
  if (blocks.count("CONF")) out.config_echo = blocks["CONF"];
  s.epoch = epoch;
  return out;
}

namespace {

std::vector<Shape> shapes_of(const std::vector<const Tensor*>& tensors) {
  std::vector<Shape> out;
  for (const Tensor* t : tensors) out.push_back(t->shape());
  return out;
}

void require_same_layout(const TrainingState& target, const TrainingState& loaded) {
  if (shapes_of(target.stack.parameters()) != shapes_of(loaded.stack.parameters())) {
    throw FormatError("checkpoint FC stack does not match the configured widths");
  }
  if (target.gan_enabled != loaded.gan_enabled) {
    throw FormatError("checkpoint gan.enabled does not match the configuration");
  }
  if (shapes_of(target.generator.parameters()) != shapes_of(loaded.generator.parameters()) ||
      shapes_of(target.discriminator.parameters()) != shapes_of(loaded.discriminator.parameters())) {
    throw FormatError("checkpoint GAN architecture does not match the configuration");
  }
  if (target.fc_opt.kind() != loaded.fc_opt.kind()) {
    throw FormatError("checkpoint optimizer does not match the configuration");
  }
}

}  // namespace

void load_checkpoint_into(const std::filesystem::path& path, TrainingState& state) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (state.stack.depth() > 0) require_same_layout(state, loaded.state);
  state = std::move(loaded.state);
}

}  // namespace dmlganr
