#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dmlganr/trainer.hpp"

namespace dmlganr {

constexpr std::uint32_t kCheckpointVersion = 1;

enum class TensorPrecision : std::uint8_t { F32 = 0, F64 = 1 };

/// `DMLC` file: u32 version, u32 epoch, then tagged blocks (4-byte tag,
/// u64 payload length, payload): ARCH (JSON), FCST, GENR, DISC, OPTF, OPTD,
/// OPTG, RNGS, HIST, CONF. Every tensor carries its own precision tag.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path,
                     const std::string& config_echo = {}, TensorPrecision precision = TensorPrecision::F64);

struct LoadedCheckpoint {
  TrainingState state;
  std::string config_echo;
};

/// Parses the whole file before returning; throws FormatError on bad magic,
/// truncation or inconsistent blocks.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// All-or-nothing load into an existing state. An initialized target must
/// have the same model shapes and optimizer kind as the checkpoint.
void load_checkpoint_into(const std::filesystem::path& path, TrainingState& state);

/// `dir/epoch_%04d.dmlc`
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Index epoch);

}  // namespace dmlganr
