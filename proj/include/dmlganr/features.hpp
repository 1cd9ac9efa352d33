#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

/// One labeled feature vector (the backbone output), optionally paired with
/// a CHW image in [-1, 1] that serves as a real sample for the discriminator.
struct FeatureRecord {
  std::string id;
  std::uint32_t label = 0;
  Tensor vector;
  std::optional<Tensor> image;
};

struct FeatureDataset {
  std::vector<FeatureRecord> records;
  std::uint32_t class_count = 0;
  Index dim = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool has_images() const { return !records.empty() && records.front().image.has_value(); }

  /// Rows of the selected records stacked into an N x D matrix.
  Tensor feature_matrix(const std::vector<std::size_t>& rows) const;
  Tensor feature_matrix() const;
  /// Selected images stacked into an NCHW tensor.
  Tensor image_batch(const std::vector<std::size_t>& rows) const;
  std::vector<std::uint32_t> labels(const std::vector<std::size_t>& rows) const;
  std::vector<std::uint32_t> labels() const;

  /// Enforces the record invariants; throws ParseError naming the record.
  void validate() const;
  /// Throws ValidationError unless every class has at least two records.
  void require_pairs_per_class() const;
};

enum class FeatureFormat { Csv, Binary };

FeatureFormat format_from_path(const std::filesystem::path& path);

FeatureDataset ingest_features(const std::filesystem::path& path, FeatureFormat format);
FeatureDataset ingest_features(const std::filesystem::path& path);

/// `id,label,f0,...,f{D-1}` with shortest round-trip decimals. Images are not stored.
void write_features_csv(const FeatureDataset& dataset, const std::filesystem::path& path);
/// `DMLF` little-endian binary layout, f32 payloads.
void write_features_binary(const FeatureDataset& dataset, const std::filesystem::path& path);
void write_features(const FeatureDataset& dataset, const std::filesystem::path& path,
                    FeatureFormat format);

struct SynthParams {
  std::uint32_t classes = 5;
  std::uint32_t per_class = 20;
  Index dim = 32;
  double cluster_sep = 6.0;
  Index image_side = 0;  // 0 disables paired images
  std::uint64_t seed = 7;
};

/// Seeded Gaussian clusters with unit variance per coordinate. Class means
/// lie `cluster_sep` from the origin along orthonormal directions (while
/// classes <= dim), so any two sit cluster_sep * sqrt(2) apart. Paired images are class-keyed
/// smooth sinusoid patterns in [-1, 1]. All values are f32-representable.
FeatureDataset synth_dataset(const SynthParams& params);

/// Stratified split: floor(fraction * n_c) training records per class, the
/// rest held out. Both halves are returned as index lists into `dataset`.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split stratified_split(const FeatureDataset& dataset, double train_fraction, std::uint64_t seed);

FeatureDataset subset(const FeatureDataset& dataset, const std::vector<std::size_t>& rows);

}  // namespace dmlganr
