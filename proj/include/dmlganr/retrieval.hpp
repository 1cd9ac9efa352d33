#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

struct RankedEntry {
  std::size_t index = 0;  // row in the gallery
  std::uint32_t label = 0;
  double distance = 0;
};

/// Gallery entries sorted by ascending squared distance, ties by index.
struct RankedList {
  std::size_t query = 0;
  std::uint32_t query_label = 0;
  std::vector<RankedEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool relevant(std::size_t position) const { return entries[position].label == query_label; }
  /// NG: number of relevant items in the gallery.
  Index ground_truth() const;
};

/// Ranks every gallery row (N x d) against `query`. `exclude` drops one row
/// (the query itself when it is part of the gallery).
RankedList rank(const Eigen::Ref<const Eigen::VectorXd>& query, std::uint32_t query_label,
                const Tensor& gallery, std::span<const std::uint32_t> labels,
                std::optional<std::size_t> exclude = std::nullopt, std::size_t query_id = 0);

/// Relevant items in the top min(k, m), divided by k.
double precision_at_k(const RankedList& ranked, Index k);

enum class ApMode {
  Standard,  // sum of precision at each relevant rank, divided by NG
  Literal,   // mean of the prefix precision over all m gallery positions
};

ApMode ap_mode_from_string(const std::string& name);
std::string to_string(ApMode mode);

double average_precision(const RankedList& ranked, Index ng, ApMode mode = ApMode::Standard);
double mean_ap(std::span<const RankedList> lists, ApMode mode = ApMode::Standard);

/// NMRR of one query from the 1-based ranks of its NG ground-truth items.
double nmrr(std::span<const Index> ranks, Index gtm);

struct AnmrrResult {
  double anmrr = 0;
  std::vector<double> nmrr;                   // per query
  std::map<std::uint32_t, double> per_class;  // mean NMRR of the queries of each class
};

/// K(q) = min(4 NG(q), 2 GTM); ranks past K(q) count as 1.25 K(q).
AnmrrResult anmrr(std::span<const RankedList> lists);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

/// Interpolated precision at recall 0.0, 0.1, ..., 1.0, averaged over queries.
std::vector<PrPoint> pr_curve(std::span<const RankedList> lists);

struct MetricsReport {
  std::size_t queries = 0;
  std::size_t skipped_queries = 0;  // queries without any relevant gallery item
  ApMode ap_mode = ApMode::Standard;
  double map = 0;
  double anmrr = 0;
  double p_at_5 = 0;
  double p_at_50 = 0;
  std::map<std::uint32_t, double> per_class_anmrr;
  std::vector<PrPoint> pr;

  std::string to_json() const;
  std::string pr_csv() const;
  /// Writes `metrics.json` and `pr.csv` into `dir`.
  void write(const std::filesystem::path& dir) const;
};

/// Worker cap for per-query evaluation: DMLGANR_THREADS if set, else the
/// hardware concurrency, never below 1.
unsigned worker_threads();

/// Every row of `features` queries all other rows. Queries whose class has
/// no other member are skipped and counted.
MetricsReport evaluate_retrieval(const Tensor& features, std::span<const std::uint32_t> labels,
                                 ApMode mode = ApMode::Standard, unsigned threads = 0);

/// Shortcut for the training history column.
double retrieval_map(const Tensor& features, std::span<const std::uint32_t> labels);

}  // namespace dmlganr
