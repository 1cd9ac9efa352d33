// Acceptance run: one PASS/FAIL line per criterion, measured values alongside.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "dmlganr/checkpoint.hpp"
#include "dmlganr/gradcheck.hpp"
#include "dmlganr/layers.hpp"
#include "dmlganr/retrieval.hpp"
#include "dmlganr/trainer.hpp"
#include "metric_oracle.hpp"

using namespace dmlganr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

std::vector<std::size_t> all_rows(const FeatureDataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Tensor t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome gradient_fidelity() {
  std::ostringstream msg;
  bool ok = true;
  for (GradTarget t : {GradTarget::Dml, GradTarget::Discriminator, GradTarget::Generator}) {
    GradCheckOptions o;
    o.target = t;
    const auto t0 = Clock::now();
    const GradCheckReport r = finite_difference_check(o);
    const double secs = seconds_since(t0);
    ok = ok && r.max_rel_err <= 1e-5 && secs <= 60;
    msg << to_string(t) << " max_rel_err " << r.max_rel_err << " (" << r.coordinates << " coords, " << secs
        << " s); ";
  }
  return {ok, msg.str()};
}

RankedList list_from(const std::vector<int>& relevant) {
  RankedList l{0, 1, {}};
  for (std::size_t i = 0; i < relevant.size(); ++i) l.entries.push_back({i, relevant[i] ? 1u : 0u, double(i)});
  return l;
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_map = 0, worst_anmrr = 0;
  int instances = 0;
  while (instances < 200) {
    const oracle::Instance in = oracle::random_instance(rng);
    const oracle::Scores expected = oracle::brute_force(in);
    if (expected.queries == 0) continue;
    const MetricsReport r = evaluate_retrieval(in.features, in.labels, ApMode::Standard, 1);
    worst_map = std::max(worst_map, std::abs(r.map - expected.map));
    worst_anmrr = std::max(worst_anmrr, std::abs(r.anmrr - expected.anmrr));
    ++instances;
  }
  const double ap = average_precision(list_from({1, 0, 1}), 2);
  const std::vector<Index> penalised{1, 2, 3, 10}, perfect{1, 2}, worst{7, 9};
  const double mid = nmrr(penalised, 4), lo = nmrr(perfect, 2), hi = nmrr(worst, 2);
  const bool fixtures = ap == (1.0 + 2.0 / 3.0) / 2.0 && mid == 0.2 && lo == 0.0 && hi == 1.0;
  const double secs = seconds_since(t0);
  std::ostringstream msg;
  msg << instances << " instances, max |dmAP| " << worst_map << ", max |dANMRR| " << worst_anmrr << "; AP " << ap
      << ", ANMRR " << mid << "/" << lo << "/" << hi << "; " << secs << " s";
  return {worst_map <= 1e-12 && worst_anmrr <= 1e-12 && fixtures && secs <= 5, msg.str()};
}

Outcome analytic_anchors() {
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(16, 0.5);
  const double phi_d = gan_losses(half, half).discriminator;
  const double err = std::abs(phi_d - 2 * std::numbers::ln2);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-15.0, 15.0);
  int bad_tanh = 0, bad_sigmoid = 0;
  for (int i = 0; i < 10000; ++i) {
    const double z = u(rng);
    const double t = activate(ActivationKind::tanh(), z), s = activate(ActivationKind::sigmoid(), z);
    bad_tanh += !(t > -1 && t < 1);
    bad_sigmoid += !(s > 0 && s < 1);
  }
  std::ostringstream msg;
  msg << "phi_D(0.5) - 2 ln 2 = " << err << "; tanh out of (-1,1): " << bad_tanh << "/10000"
      << "; sigmoid out of (0,1): " << bad_sigmoid << "/10000 (inputs U(-15, 15))";
  return {err <= 1e-12 && bad_tanh == 0 && bad_sigmoid == 0, msg.str()};
}

Outcome dml_ordering() {
  const auto t0 = Clock::now();
  const FeatureDataset ds = synth_dataset({8, 40, 64, 4.0, 0, 1});
  const Split split = stratified_split(ds, 0.7, 1);
  const Tensor test_x = ds.feature_matrix(split.test);
  const auto test_y = ds.labels(split.test);
  const double raw = retrieval_map(test_x, test_y);
  const auto trained = [&](std::vector<Index> widths) {
    TrainingConfig c;
    c.fc_widths = std::move(widths);
    c.gan.enabled = false;
    c.trainer.epochs = 30;
    c.trainer.eval_every = 0;
    TrainingState s = initialize_training(c, ds.dim);
    train(s, TrainingData{&ds, split.train, {}}, c);
    return retrieval_map(s.stack.forward(test_x).output(), test_y);
  };
  const double one = trained({1024});
  const double three = trained({1024, 1024, 1024});
  const double secs = seconds_since(t0);
  const bool ordered = three > one && one > raw;
  std::ostringstream msg;
  msg << "held-out mAP 3-layer " << three << ", 1-layer " << one << ", raw " << raw << "; ordering "
      << (ordered ? "holds" : "violated") << ", 3-layer >= 0.90 " << (three >= 0.90 ? "met" : "not met") << "; "
      << secs << " s";
  return {ordered && three >= 0.90 && secs <= 300, msg.str()};
}

Outcome gan_sanity() {
  const auto t0 = Clock::now();
  const FeatureDataset ds = synth_dataset({4, 16, 64, 4.0, 64, 1});
  TrainingConfig c;
  c.trainer.epochs = 50;
  c.trainer.eval_every = 0;
  TrainingState s = initialize_training(c, ds.dim);
  std::vector<std::size_t> probe(16);
  std::iota(probe.begin(), probe.end(), std::size_t{0});
  const Tensor probe_x = ds.feature_matrix(probe);
  const Tensor probe_real = ds.image_batch(probe);
  bool finite = true, in_range = true;
  double accuracy = 0, max_abs = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochReport& r) {
    finite = finite && std::isfinite(r.phi_d) && std::isfinite(r.phi_g) && std::isfinite(r.phi_dml);
    const Tensor fake = s.generator.forward(s.stack.forward(probe_x).output(), Mode::Eval).images();
    max_abs = std::max(max_abs, fake.vec().cwiseAbs().maxCoeff());
    in_range = in_range && fake.vec().cwiseAbs().maxCoeff() < 1.0;
    accuracy = discriminator_accuracy(s.discriminator.forward(probe_real, Mode::Eval).probabilities,
                                      s.discriminator.forward(fake, Mode::Eval).probabilities);
  };
  train(s, TrainingData{&ds, all_rows(ds), {}}, c, hooks);
  const double secs = seconds_since(t0);
  const bool band = accuracy > 0.05 && accuracy < 0.95;
  std::ostringstream msg;
  msg << "losses finite " << (finite ? "yes" : "no") << ", max |G| " << max_abs << ", probe D accuracy at epoch "
      << s.epoch << " = " << accuracy << " (band (0.05, 0.95) " << (band ? "met" : "not met") << "); " << secs
      << " s";
  return {finite && in_range && band && secs <= 900, msg.str()};
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "dmlganr_acceptance";
  fs::remove_all(dir);
  const FeatureDataset ds = synth_dataset({3, 6, 8, 2.0, 64, 4});
  TrainingConfig c;
  c.fc_widths = {16, 16};
  c.trainer.epochs = 4;
  c.trainer.dml_batch = 6;
  c.trainer.gan_batch = 3;
  const TrainingData data{&ds, all_rows(ds), {}};

  const auto history_file = [&](const std::string& name) {
    TrainingState s = initialize_training(c, ds.dim);
    train(s, data, c);
    write_history(s.history, dir / name);
    return read_all(dir / name / "history.csv") + read_all(dir / name / "history.json");
  };
  const bool same_history = history_file("a") == history_file("b");

  TrainingConfig gd = c;
  gd.trainer.optimizer = OptimizerKind::Gd;
  TrainingState straight = initialize_training(gd, ds.dim);
  const History full = train(straight, data, gd);
  TrainingConfig half = gd;
  half.trainer.epochs = 2;
  TrainingState first = initialize_training(gd, ds.dim);
  TrainHooks hooks;
  hooks.checkpoint_dir = dir / "ckpt";
  train(first, data, half, hooks);
  TrainingState resumed = initialize_training(gd, ds.dim);
  load_checkpoint_into(checkpoint_path(hooks.checkpoint_dir, 2), resumed);
  const bool same_trace = train(resumed, data, gd) == full;

  bool round_trip = true;
  for (const char* name : {"f.dmlf", "f.csv"}) {
    write_features(ds, dir / name, format_from_path(dir / name));
    const FeatureDataset back = ingest_features(dir / name);
    round_trip = round_trip && back.feature_matrix() == ds.feature_matrix() && back.labels() == ds.labels();
    if (back.has_images()) {
      for (std::size_t i = 0; i < ds.size(); ++i) round_trip = round_trip && *back.records[i].image == *ds.records[i].image;
    }
  }
  std::ostringstream msg;
  msg << "history files identical " << (same_history ? "yes" : "no") << ", GD resume trace identical "
      << (same_trace ? "yes" : "no") << ", feature round trip bit-exact " << (round_trip ? "yes" : "no");
  return {same_history && same_trace && round_trip, msg.str()};
}

Outcome adjoint_suite() {
  std::mt19937_64 rng(100);
  std::uniform_int_distribution<int> pick(0, 3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = 1 + pick(rng) % 3, o = 1 + pick(rng), k = 1 + pick(rng), stride = 1 + pick(rng) % 2;
    const Index pad = std::min<Index>(pick(rng) % 2, k - 1);
    const Index h = k + 2 + pick(rng) * 2, w = h + pick(rng) % 2;
    const Tensor a = random_tensor({c, h, w}, rng);
    const Tensor kernel = random_tensor({o, c, k, k}, rng);
    const Tensor fwd = conv2d(a, kernel, Tensor({o}), stride, pad);
    const Tensor g = random_tensor(fwd.shape(), rng);
    const Tensor back = conv2d_transposed(g, kernel, stride, pad, std::array<Index, 2>{h, w});
    const double lhs = dot(fwd, g);
    worst = std::max(worst, std::abs(lhs - dot(a, back)) / (1 + std::abs(lhs)));

    const Index win = 1 + pick(rng) % 2 + 1;
    const Tensor x = random_tensor({c, win * (2 + pick(rng)), win * (2 + pick(rng))}, rng);
    const auto pooled = max_pool(x, win, win);
    const Tensor gp = random_tensor(pooled.values.shape(), rng);
    const double plhs = dot(pooled.values, gp);
    worst = std::max(worst, std::abs(plhs - dot(x, max_unpool(gp, pooled.map, x.shape()))) / (1 + std::abs(plhs)));
  }
  std::ostringstream msg;
  msg << "100 conv/transposed-conv and 100 pool/unpool cases, max relative mismatch " << worst;
  return {worst <= 1e-10, msg.str()};
}

}  // namespace

int main() {
  report("gradient fidelity", gradient_fidelity);
  report("metric oracles", metric_oracles);
  report("analytic loss anchors", analytic_anchors);
  report("DML effectiveness ordering", dml_ordering);
  report("GAN sanity at desk scale", gan_sanity);
  report("determinism and persistence", determinism);
  report("adjoint suite", adjoint_suite);
  return failures == 0 ? 0 : 1;
}
