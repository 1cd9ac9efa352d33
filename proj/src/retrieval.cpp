#include "dmlganr/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace dmlganr {

Index RankedList::ground_truth() const {
  return static_cast<Index>(std::count_if(entries.begin(), entries.end(),
                                          [&](const RankedEntry& e) { return e.label == query_label; }));
}

RankedList rank(const Eigen::Ref<const Eigen::VectorXd>& query, std::uint32_t query_label, const Tensor& gallery,
                std::span<const std::uint32_t> labels, std::optional<std::size_t> exclude, std::size_t query_id) {
  if (gallery.rank() != 2) throw DimensionError("rank: gallery must be an N x d matrix");
  if (gallery.dim(1) != query.size()) throw DimensionError("rank: query and gallery dimensions differ");
  const auto rows = static_cast<std::size_t>(gallery.dim(0));
  if (labels.size() != rows) throw DimensionError("rank: one label per gallery row required");
  RankedList out;
  out.query = query_id;
  out.query_label = query_label;
  out.entries.reserve(rows);
  const auto g = gallery.matrix();
  for (std::size_t i = 0; i < rows; ++i) {
    if (exclude && *exclude == i) continue;
    out.entries.push_back({i, labels[i], (g.row(static_cast<Index>(i)).transpose() - query).squaredNorm()});
  }
  if (out.entries.empty()) throw ValidationError("rank: empty gallery");
  std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  });
  return out;
}

double precision_at_k(const RankedList& ranked, Index k) {
  if (k < 1) throw ValidationError("precision_at_k: k must be >= 1");
  const std::size_t top = std::min(static_cast<std::size_t>(k), ranked.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r) hits += ranked.relevant(r);
  return static_cast<double>(hits) / static_cast<double>(k);
}

ApMode ap_mode_from_string(const std::string& name) {
  if (name == "standard") return ApMode::Standard;
  if (name == "literal") return ApMode::Literal;
  throw ValidationError("unknown AP mode '" + name + "' (expected standard or literal)");
}

std::string to_string(ApMode mode) { return mode == ApMode::Standard ? "standard" : "literal"; }

double average_precision(const RankedList& ranked, Index ng, ApMode mode) {
  if (ng < 1) throw ValidationError("average_precision: query " + std::to_string(ranked.query) + " has NG = 0");
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const bool rel = ranked.relevant(r);
    hits += rel;
    const double precision = static_cast<double>(hits) / static_cast<double>(r + 1);
    if (mode == ApMode::Literal || rel) sum += precision;
  }
  return mode == ApMode::Standard ? sum / static_cast<double>(ng) : sum / static_cast<double>(ranked.size());
}

double mean_ap(std::span<const RankedList> lists, ApMode mode) {
  if (lists.empty()) throw ValidationError("mean_ap: no queries");
  double sum = 0;
  for (const auto& l : lists) sum += average_precision(l, l.ground_truth(), mode);
  return sum / static_cast<double>(lists.size());
}

double nmrr(std::span<const Index> ranks, Index gtm) {
  const auto ng = static_cast<Index>(ranks.size());
  if (ng < 1) throw ValidationError("nmrr: NG must be >= 1");
  if (gtm < ng) throw ValidationError("nmrr: GTM smaller than NG");
  const double k = static_cast<double>(std::min(4 * ng, 2 * gtm));
  double sum = 0;
  for (Index r : ranks) sum += static_cast<double>(r) > k ? 1.25 * k : static_cast<double>(r);
  const double ar = sum / static_cast<double>(ng);
  const double base = 0.5 * (1.0 + static_cast<double>(ng));
  const double denom = 1.25 * k - base;
  if (denom == 0.0) throw NumericError("nmrr: degenerate denominator");
  return (ar - base) / denom;
}

AnmrrResult anmrr(std::span<const RankedList> lists) {
  if (lists.empty()) throw ValidationError("anmrr: no queries");
  Index gtm = 0;
  for (const auto& l : lists) {
    const Index ng = l.ground_truth();
    if (ng < 1) throw ValidationError("anmrr: query " + std::to_string(l.query) + " has NG = 0");
    gtm = std::max(gtm, ng);
  }
  AnmrrResult out;
  std::map<std::uint32_t, std::pair<double, std::size_t>> classes;
  std::vector<Index> ranks;
  for (const auto& l : lists) {
    ranks.clear();
    for (std::size_t r = 0; r < l.size(); ++r) {
      if (l.relevant(r)) ranks.push_back(static_cast<Index>(r + 1));
    }
    const double v = nmrr(ranks, gtm);
    out.nmrr.push_back(v);
    auto& c = classes[l.query_label];
    c.first += v;
    c.second += 1;
  }
  out.anmrr = std::accumulate(out.nmrr.begin(), out.nmrr.end(), 0.0) / static_cast<double>(out.nmrr.size());
  for (const auto& [label, acc] : classes) out.per_class[label] = acc.first / static_cast<double>(acc.second);
  return out;
}

std::vector<PrPoint> pr_curve(std::span<const RankedList> lists) {
  if (lists.empty()) throw ValidationError("pr_curve: no queries");
  std::vector<PrPoint> curve(11);
  for (std::size_t i = 0; i < curve.size(); ++i) curve[i].recall = static_cast<double>(i) / 10.0;
  std::vector<double> recall, precision;
  for (const auto& l : lists) {
    const double ng = static_cast<double>(l.ground_truth());
    if (ng < 1) throw ValidationError("pr_curve: query " + std::to_string(l.query) + " has NG = 0");
    recall.clear();
    precision.clear();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < l.size(); ++r) {
      hits += l.relevant(r);
      recall.push_back(static_cast<double>(hits) / ng);
      precision.push_back(static_cast<double>(hits) / static_cast<double>(r + 1));
    }
    for (auto& point : curve) {
      double best = 0;
      for (std::size_t r = 0; r < recall.size(); ++r) {
        if (recall[r] >= point.recall - 1e-12) best = std::max(best, precision[r]);
      }
      point.precision += best;
    }
  }
  for (auto& point : curve) point.precision /= static_cast<double>(lists.size());
  return curve;
}

namespace {

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["queries"] = queries;
  j["skipped_queries"] = skipped_queries;
  j["ap_mode"] = to_string(ap_mode);
  j["map"] = map;
  j["anmrr"] = anmrr;
  j["p_at_5"] = p_at_5;
  j["p_at_50"] = p_at_50;
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (const auto& [label, v] : per_class_anmrr) classes[std::to_string(label)] = v;
  j["per_class_anmrr"] = classes;
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (const auto& p : pr) points.push_back({{"recall", p.recall}, {"precision", p.precision}});
  j["pr_curve"] = points;
  return j.dump(2) + "\n";
}

std::string MetricsReport::pr_csv() const {
  std::string out = "recall,precision\n";
  for (const auto& p : pr) out += shortest(p.recall) + "," + shortest(p.precision) + "\n";
  return out;
}

void MetricsReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : {std::pair{"metrics.json", to_json()}, std::pair{"pr.csv", pr_csv()}}) {
    std::ofstream os(dir / name, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write " + (dir / name).string());
  }
}

unsigned worker_threads() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DMLGANR_THREADS")) {
    unsigned v = 0;
    const std::string s(env);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) {
      throw ValidationError("DMLGANR_THREADS must be a positive integer");
    }
    cap = v;
  }
  return cap;
}

MetricsReport evaluate_retrieval(const Tensor& features, std::span<const std::uint32_t> labels, ApMode mode,
                                 unsigned threads) {
  if (features.rank() != 2) throw DimensionError("evaluate_retrieval: features must be N x d");
  const auto n = static_cast<std::size_t>(features.dim(0));
  if (labels.size() != n) throw DimensionError("evaluate_retrieval: one label per row required");
  if (n < 2) throw ValidationError("evaluate_retrieval: need at least two samples");

  std::map<std::uint32_t, std::size_t> class_size;
  for (auto l : labels) ++class_size[l];
  std::vector<std::size_t> queries;
  for (std::size_t i = 0; i < n; ++i) {
    if (class_size[labels[i]] > 1) queries.push_back(i);
  }
  if (queries.empty()) throw ValidationError("evaluate_retrieval: no query has a relevant gallery item");

  std::vector<RankedList> lists(queries.size());
  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t q = begin; q < queries.size(); q += stride) {
      const std::size_t i = queries[q];
      lists[q] = rank(features.matrix().row(static_cast<Index>(i)).transpose(), labels[i], features, labels, i, i);
    }
  };
  const unsigned count = std::min<std::size_t>(threads ? threads : worker_threads(), queries.size());
  if (count <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(work, t, count);
  }

  MetricsReport r;
  r.queries = queries.size();
  r.skipped_queries = n - queries.size();
  r.ap_mode = mode;
  r.map = mean_ap(lists, mode);
  const auto a = anmrr(lists);
  r.anmrr = a.anmrr;
  r.per_class_anmrr = a.per_class;
  for (const auto& l : lists) {
    r.p_at_5 += precision_at_k(l, 5);
    r.p_at_50 += precision_at_k(l, 50);
  }
  r.p_at_5 /= static_cast<double>(lists.size());
  r.p_at_50 /= static_cast<double>(lists.size());
  r.pr = pr_curve(lists);
  return r;
}

double retrieval_map(const Tensor& features, std::span<const std::uint32_t> labels) {
  return evaluate_retrieval(features, labels).map;
}

}  // namespace dmlganr
