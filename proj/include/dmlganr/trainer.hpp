#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dmlganr/fc_stack.hpp"
#include "dmlganr/features.hpp"
#include "dmlganr/gan.hpp"
#include "dmlganr/metric_learning.hpp"
#include "dmlganr/optimizer.hpp"

namespace dmlganr {

struct GanConfig {
  bool enabled = true;
  double lambda = 0.1;
  double beta1 = 2e-4;  // discriminator rate (gd optimizer)
  double beta2 = 2e-4;  // generator rate (gd optimizer)
  Index image_side = 64;
  Index width_divisor = 4;
  double epsilon = 1e-7;
  bool batch_norm = false;
  GeneratorLoss loss = GeneratorLoss::NonSaturating;
  /// Adds lambda * d(generator loss)/d(u^L) to the FC stack gradient.
  bool feature_backprop = false;

  void validate() const;
  GanArchitecture architecture(Index input_dim) const {
    return GanArchitecture::from_table(input_dim, image_side, width_divisor, batch_norm);
  }
};

struct TrainerConfig {
  Index epochs = 20;
  Index dml_batch = 128;
  Index gan_batch = 16;
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam_dml{2e-4, 0.9, 0.999, 1e-8, 0.0};
  AdamConfig adam_gan{2e-4, 0.5, 0.999, 1e-8, 2e-4};
  std::uint64_t seed = 1;
  Index checkpoint_every = 0;  // 0: final epoch only
  Index eval_every = 1;        // 0: never fill map_eval
  bool literal_dml_gradients = false;

  void validate() const;
};

struct TrainingConfig {
  std::vector<Index> fc_widths{1024, 1024, 1024};
  double negative_slope = 0.2;
  DmlConfig dml;
  GanConfig gan;
  TrainerConfig trainer;

  void validate() const;
};

struct EpochReport {
  Index epoch = 0;
  double phi_dml = 0;
  double phi_d = 0;
  double phi_g = 0;
  double phi_total = 0;
  double map_eval = std::numeric_limits<double>::quiet_NaN();

  bool operator==(const EpochReport& other) const;
};

using History = std::vector<EpochReport>;

struct TrainingState {
  FcStack stack;
  bool gan_enabled = false;
  GeneratorNet generator;
  DiscriminatorNet discriminator;
  Optimizer fc_opt, d_opt, g_opt;
  std::mt19937_64 rng;
  Index epoch = 0;  // completed epochs
  History history;
};

/// Seeded initialization of every model and optimizer.
TrainingState initialize_training(const TrainingConfig& config, Index input_dim);

/// Records which parameter versions each stage of a batch used.
struct StepTrace {
  std::uint64_t g_before = 0, d_before = 0;  // at batch start
  std::uint64_t g_at_fake = 0;               // G that produced the fake batch
  std::uint64_t fake_at_d_step = 0;          // fake images seen by the D gradient
  std::uint64_t fake_generated = 0;          // fake images as generated
  std::uint64_t d_at_d_step = 0;             // D used for its own gradient
  std::uint64_t d_after = 0;                 // D after its update
  std::uint64_t d_at_g_step = 0;             // D used for the G gradient
  std::uint64_t g_after = 0;
};

using StepObserver = std::function<void(const StepTrace&)>;

std::uint64_t fingerprint(const std::vector<const Tensor*>& tensors);
std::uint64_t fingerprint(const Tensor& tensor);

struct TrainingData {
  const FeatureDataset* dataset = nullptr;
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;  // optional; fills map_eval
};

/// One training pass over shuffled DML batches. Per batch: FC forward
/// and masks, G forward on a GAN sub-batch, D forward on real and fake,
/// DML and D gradients from the pre-update parameters, DML update, D update,
/// then the G gradient through the updated D and the G update.
EpochReport train_epoch(TrainingState& state, const TrainingData& data, const TrainingConfig& config,
                        const StepObserver& observer = {});

struct TrainHooks {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::string config_echo;               // stored alongside checkpoints
  std::function<void(const EpochReport&)> on_epoch;
  StepObserver observer;
};

/// Runs epochs until state.epoch == config.trainer.epochs.
History train(TrainingState& state, const TrainingData& data, const TrainingConfig& config,
              const TrainHooks& hooks = {});

std::string history_csv(const History& history);
std::string history_json(const History& history);
History parse_history_csv(const std::string& text);
History parse_history_json(const std::string& text);
void write_history(const History& history, const std::filesystem::path& dir);

}  // namespace dmlganr
