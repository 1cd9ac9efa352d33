#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmlganr/retrieval.hpp"
#include "dmlganr/trainer.hpp"

namespace dmlganr {

struct PipelineConfig {
  std::string dataset;  // feature file (.csv or DMLF)
  std::vector<Index> fc_widths{1024, 1024, 1024};
  double negative_slope = 0.2;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 1;
};

struct EvalConfig {
  ApMode ap_mode = ApMode::Standard;
  unsigned threads = 0;  // 0: DMLGANR_THREADS or hardware concurrency
};

/// The run document: sections pipeline, dml, gan, trainer, eval. Parsing
/// rejects unknown keys with their full path; serialization writes every
/// field, defaults included.
struct RunConfig {
  PipelineConfig pipeline;
  DmlConfig dml;
  GanConfig gan;
  TrainerConfig trainer;
  EvalConfig eval;

  static RunConfig parse(const std::string& json_text);
  static RunConfig load(const std::filesystem::path& path);
  std::string dump() const;

  void validate() const;
  TrainingConfig training() const;
};

}  // namespace dmlganr
