#include "dmlganr/cli.hpp"

#include <fstream>
#include <optional>
#include <random>

#include "CLI11.hpp"

#include "dmlganr/checkpoint.hpp"
#include "dmlganr/config.hpp"
#include "dmlganr/features.hpp"
#include "dmlganr/gradcheck.hpp"
#include "dmlganr/image_io.hpp"
#include "dmlganr/retrieval.hpp"
#include "dmlganr/trainer.hpp"

namespace dmlganr {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
  if (g.seed) {
    c.trainer.seed = *g.seed;
    c.pipeline.split_seed = *g.seed;
  }
  return c;
}

fs::path out_dir(const Globals& g, const char* fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw IoError("cannot write " + path.string());
}

FeatureDataset load_dataset(const std::string& path) {
  if (path.empty()) throw ValidationError("no dataset given (use --dataset or pipeline.dataset)");
  return ingest_features(path);
}

MetricsReport evaluate_split(const FeatureDataset& ds, const Split& split, const FcStack* stack, const EvalConfig& e) {
  Tensor features = ds.feature_matrix(split.test);
  if (stack) features = stack->forward(features).output();
  return evaluate_retrieval(features, ds.labels(split.test), e.ap_mode, e.threads);
}

std::string dataset_summary(const FeatureDataset& ds) {
  return "{\"records\": " + std::to_string(ds.size()) + ", \"classes\": " + std::to_string(ds.class_count) +
         ", \"dim\": " + std::to_string(ds.dim) + ", \"has_images\": " + (ds.has_images() ? "true" : "false") + "}";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep metric learning with GAN regularization for feature-based retrieval", "dmlganr"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "seed overriding trainer.seed and pipeline.split_seed");
  app.add_option("--out", g.out, "output directory");

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic feature file (DMLF)");
  SynthParams sp;
  sp.image_side = 64;
  std::string synth_file;
  synth->add_option("--classes", sp.classes)->check(CLI::Range(2u, 65535u));
  synth->add_option("--per-class", sp.per_class)->check(CLI::Range(2u, 1000000u));
  synth->add_option("--dim", sp.dim)->check(CLI::PositiveNumber);
  synth->add_option("--sep", sp.cluster_sep)->check(CLI::NonNegativeNumber);
  synth->add_option("--image-side", sp.image_side, "0 disables paired images")->check(CLI::NonNegativeNumber);
  synth->add_option("--file", synth_file, "output path (default OUT/features.dmlf)");

  auto* ingest = app.add_subcommand("ingest", "validate a feature file and convert between CSV and DMLF");
  std::string ingest_in, ingest_out;
  ingest->add_option("--input", ingest_in)->required();
  ingest->add_option("--output", ingest_out);

  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  std::string dataset, resume;
  std::optional<Index> epochs;
  train_cmd->add_option("--dataset", dataset);
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_option("--epochs", epochs);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of an analytic gradient");
  std::string target;
  GradCheckOptions gopt;
  grad->add_option("--target", target, "dml, discriminator or generator")->required();
  grad->add_option("--size", gopt.size);
  grad->set_help_flag("--help", "Print this help message and exit");
  grad->add_option("--h", gopt.h, "finite-difference step");

  auto* eval_cmd = app.add_subcommand("evaluate", "retrieval metrics on the held-out split");
  std::string eval_ckpt, eval_dataset, ap_mode;
  std::optional<std::uint64_t> split_seed;
  std::optional<double> fraction;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "omit to score the raw input features");
  eval_cmd->add_option("--dataset", eval_dataset);
  eval_cmd->add_option("--split-seed", split_seed);
  eval_cmd->add_option("--train-fraction", fraction);
  eval_cmd->add_option("--ap-mode", ap_mode, "standard or literal");

  auto* sample = app.add_subcommand("sample", "dump generated images (DMLI + PPM)");
  std::string sample_ckpt, sample_dataset;
  Index sample_n = 8;
  sample->add_option("--checkpoint", sample_ckpt)->required();
  sample->add_option("-n,--count", sample_n)->check(CLI::PositiveNumber);
  sample->add_option("--dataset", sample_dataset, "use these records' features instead of seeded noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      if (g.seed) sp.seed = *g.seed;
      const FeatureDataset ds = synth_dataset(sp);
      const fs::path file = synth_file.empty() ? out_dir(g, ".") / "features.dmlf" : fs::path(synth_file);
      if (file.has_parent_path()) fs::create_directories(file.parent_path());
      write_features(ds, file, format_from_path(file));
      out << dataset_summary(ds) << "\n";
    } else if (ingest->parsed()) {
      const FeatureDataset ds = ingest_features(ingest_in);
      if (!ingest_out.empty()) {
        if (fs::path(ingest_out).has_parent_path()) fs::create_directories(fs::path(ingest_out).parent_path());
        write_features(ds, ingest_out, format_from_path(ingest_out));
      }
      out << dataset_summary(ds) << "\n";
    } else if (train_cmd->parsed()) {
      RunConfig cfg = resolve_config(g);
      if (!dataset.empty()) cfg.pipeline.dataset = fs::absolute(dataset).string();
      if (epochs) cfg.trainer.epochs = *epochs;
      cfg.validate();
      const fs::path dir = out_dir(g, "run");
      const FeatureDataset ds = load_dataset(cfg.pipeline.dataset);
      ds.require_pairs_per_class();
      const Split split = stratified_split(ds, cfg.pipeline.train_fraction, cfg.pipeline.split_seed);
      const TrainingConfig tc = cfg.training();
      TrainingState state = initialize_training(tc, ds.dim);
      if (!resume.empty()) load_checkpoint_into(resume, state);
      const std::string echo = cfg.dump();
      write_text(dir / "config.resolved", echo);
      TrainHooks hooks;
      hooks.checkpoint_dir = dir / "checkpoints";
      hooks.config_echo = echo;
      hooks.on_epoch = [&](const EpochReport& r) {
        write_history(state.history, dir);
        out << "epoch " << r.epoch << " phi_dml " << r.phi_dml << " phi_d " << r.phi_d << " phi_g " << r.phi_g
            << " phi " << r.phi_total << " map " << r.map_eval << "\n";
      };
      train(state, TrainingData{&ds, split.train, split.test}, tc, hooks);
      write_history(state.history, dir);
      const MetricsReport report = evaluate_split(ds, split, &state.stack, cfg.eval);
      report.write(dir / "eval");
      out << "final map " << report.map << " anmrr " << report.anmrr << "\n";
    } else if (grad->parsed()) {
      gopt.target = grad_target_from_string(target);
      if (g.seed) gopt.seed = *g.seed;
      const GradCheckReport r = finite_difference_check(gopt);
      out << r.to_json() << "\n";
      if (!g.out.empty()) write_text(fs::path(g.out) / ("gradcheck_" + target + ".json"), r.to_json() + "\n");
      if (!r.passed()) {
        err << "gradcheck " << target << ": max relative error " << r.max_rel_err << " exceeds 1e-05\n";
        return 2;
      }
    } else if (eval_cmd->parsed()) {
      RunConfig cfg = resolve_config(g);
      if (!eval_dataset.empty()) cfg.pipeline.dataset = eval_dataset;
      if (split_seed) cfg.pipeline.split_seed = *split_seed;
      if (fraction) cfg.pipeline.train_fraction = *fraction;
      if (!ap_mode.empty()) cfg.eval.ap_mode = ap_mode_from_string(ap_mode);
      cfg.validate();
      const FeatureDataset ds = load_dataset(cfg.pipeline.dataset);
      const Split split = stratified_split(ds, cfg.pipeline.train_fraction, cfg.pipeline.split_seed);
      std::optional<LoadedCheckpoint> ckpt;
      if (!eval_ckpt.empty()) ckpt = load_checkpoint(eval_ckpt);
      const MetricsReport report = evaluate_split(ds, split, ckpt ? &ckpt->state.stack : nullptr, cfg.eval);
      const fs::path dir = out_dir(g, "run") / "eval";
      report.write(dir);
      out << report.to_json();
    } else if (sample->parsed()) {
      const LoadedCheckpoint ckpt = load_checkpoint(sample_ckpt);
      const TrainingState& s = ckpt.state;
      if (!s.gan_enabled) throw ValidationError("checkpoint has no generator (gan.enabled was false)");
      Tensor u0;
      if (!sample_dataset.empty()) {
        const FeatureDataset ds = ingest_features(sample_dataset);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < std::min<std::size_t>(ds.size(), static_cast<std::size_t>(sample_n)); ++i) rows.push_back(i);
        u0 = ds.feature_matrix(rows);
      } else {
        std::mt19937_64 rng(g.seed.value_or(1));
        std::normal_distribution<double> unit(0.0, 1.0);
        u0 = Tensor({sample_n, s.stack.input_dim()});
        for (double& v : u0.values()) v = unit(rng);
      }
      const Tensor images = s.generator.forward(s.stack.forward(u0).output(), Mode::Eval).images();
      const fs::path dir = out_dir(g, "run") / "samples";
      write_image_dump(images, dir / "samples.dmli");
      for (Index i = 0; i < images.dim(0); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%03lld.ppm", static_cast<long long>(i));
        write_ppm(images.slice(i), dir / name);
      }
      out << "wrote " << images.dim(0) << " samples to " << dir.string() << "\n";
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace dmlganr
