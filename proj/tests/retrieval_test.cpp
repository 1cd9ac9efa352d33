#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "dmlganr/retrieval.hpp"
#include "metric_oracle.hpp"

using namespace dmlganr;

namespace {

RankedList list_from(const std::vector<int>& relevant) {
  RankedList l{0, 1, {}};
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    l.entries.push_back({i, relevant[i] ? 1u : 0u, static_cast<double>(i)});
  }
  return l;
}

}  // namespace

TEST(RankTest, OrdersByDistanceThenIndex) {
  const Tensor gallery({4, 1}, {2.0, -1.0, 1.0, 0.0});
  const std::vector<std::uint32_t> labels{0, 1, 0, 1};
  const Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
  const RankedList l = rank(q, 1, gallery, labels, 3);
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l.entries[0].index, 1u);  // tie with row 2 at distance 1, lower index first
  EXPECT_EQ(l.entries[1].index, 2u);
  EXPECT_EQ(l.entries[2].index, 0u);
  EXPECT_DOUBLE_EQ(l.entries[2].distance, 4.0);
  EXPECT_EQ(l.ground_truth(), 1);
  EXPECT_THROW(rank(Eigen::VectorXd::Zero(2), 0, gallery, labels), DimensionError);
}

TEST(PrecisionTest, Examples) {
  EXPECT_DOUBLE_EQ(precision_at_k(list_from({1, 0, 1, 1, 0, 0, 1}), 5), 0.6);
  EXPECT_DOUBLE_EQ(precision_at_k(list_from({1, 1, 0, 1}), 50), 3.0 / 50.0);
  EXPECT_THROW(precision_at_k(list_from({1}), 0), ValidationError);
}

TEST(AveragePrecisionTest, HandComputed) {
  const RankedList l = list_from({1, 0, 1});
  EXPECT_NEAR(average_precision(l, 2), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(average_precision(l, 2, ApMode::Literal), (1.0 + 0.5 + 2.0 / 3.0) / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(average_precision(list_from({1, 1, 0, 0}), 2), 1.0);
  EXPECT_THROW(average_precision(list_from({0, 0}), 0), ValidationError);
  EXPECT_EQ(ap_mode_from_string("literal"), ApMode::Literal);
  EXPECT_THROW(ap_mode_from_string("other"), ValidationError);
}

TEST(NmrrTest, HandComputed) {
  const std::vector<Index> penalised{1, 2, 3, 10};
  EXPECT_NEAR(nmrr(penalised, 4), 0.2, 1e-15);
  const std::vector<Index> perfect{1, 2}, worst{7, 9};
  EXPECT_DOUBLE_EQ(nmrr(perfect, 2), 0.0);
  EXPECT_DOUBLE_EQ(nmrr(worst, 2), 1.0);
  EXPECT_THROW(nmrr(std::vector<Index>{}, 1), ValidationError);
  EXPECT_THROW(nmrr(perfect, 1), ValidationError);
}

TEST(AnmrrTest, PerClassBreakdown) {
  RankedList a = list_from({1, 1, 0, 0});
  RankedList b = list_from({0, 0, 0, 0, 0, 0, 0, 0, 1, 1});
  b.query_label = 2;
  for (auto& e : b.entries) e.label = e.label ? 2 : 0;
  const std::vector<RankedList> lists{a, b};
  const AnmrrResult r = anmrr(lists);
  EXPECT_DOUBLE_EQ(r.nmrr[0], 0.0);
  EXPECT_DOUBLE_EQ(r.nmrr[1], 1.0);
  EXPECT_DOUBLE_EQ(r.anmrr, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class.at(1), 0.0);
  EXPECT_DOUBLE_EQ(r.per_class.at(2), 1.0);
}

TEST(PrCurveTest, PerfectAndMonotone) {
  const std::vector<RankedList> perfect{list_from({1, 1, 0, 0})};
  for (const PrPoint& p : pr_curve(perfect)) EXPECT_DOUBLE_EQ(p.precision, 1.0);
  const std::vector<RankedList> mixed{list_from({0, 1, 0, 0, 1, 1}), list_from({1, 0, 0, 1})};
  const auto curve = pr_curve(mixed);
  ASSERT_EQ(curve.size(), 11u);
  EXPECT_DOUBLE_EQ(curve[0].recall, 0.0);
  EXPECT_DOUBLE_EQ(curve[10].recall, 1.0);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].precision, curve[i - 1].precision);
  // Query 1 reaches full recall at rank 6 (precision 1/2), query 2 at rank 4 (1/2).
  EXPECT_DOUBLE_EQ(curve[10].precision, 0.5);
}

TEST(OracleTest, RandomInstancesMatchBruteForce) {
  std::mt19937_64 rng(2024);
  int compared = 0;
  for (int t = 0; t < 200; ++t) {
    const oracle::Instance in = oracle::random_instance(rng);
    const oracle::Scores expected = oracle::brute_force(in);
    if (expected.queries == 0) continue;
    const MetricsReport r = evaluate_retrieval(in.features, in.labels);
    EXPECT_EQ(r.queries, expected.queries) << t;
    EXPECT_EQ(r.queries + r.skipped_queries, in.labels.size()) << t;
    EXPECT_NEAR(r.map, expected.map, 1e-12) << t;
    EXPECT_NEAR(r.anmrr, expected.anmrr, 1e-12) << t;
    EXPECT_GE(r.anmrr, 0.0);
    EXPECT_LE(r.anmrr, 1.0);
    ++compared;
  }
  EXPECT_GT(compared, 190);
}

TEST(EvaluateTest, OneHotFeaturesArePerfect) {
  const std::vector<std::uint32_t> labels{0, 1, 2, 0, 1, 2, 0};
  Tensor f({7, 3});
  for (Index i = 0; i < 7; ++i) f.matrix()(i, labels[i]) = 1.0;
  const MetricsReport r = evaluate_retrieval(f, labels);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_DOUBLE_EQ(r.anmrr, 0.0);
  EXPECT_DOUBLE_EQ(r.p_at_5, (3.0 * 2 + 4.0 * 1) / 7.0 / 5.0);
}

TEST(EvaluateTest, GalleryPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  Tensor f({30, 4});
  for (double& v : f.values()) v = d(rng);
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(static_cast<std::uint32_t>(i % 3));
  std::vector<Index> perm(30);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor pf({30, 4});
  std::vector<std::uint32_t> pl(30);
  for (Index i = 0; i < 30; ++i) {
    pf.matrix().row(i) = f.matrix().row(perm[i]);
    pl[i] = labels[perm[i]];
  }
  const MetricsReport a = evaluate_retrieval(f, labels), b = evaluate_retrieval(pf, pl);
  EXPECT_NEAR(a.map, b.map, 1e-12);
  EXPECT_NEAR(a.anmrr, b.anmrr, 1e-12);
  EXPECT_NEAR(a.p_at_5, b.p_at_5, 1e-12);
}

TEST(EvaluateTest, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d;
  Tensor f({40, 3});
  for (double& v : f.values()) v = d(rng);
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(static_cast<std::uint32_t>(i % 4));
  const MetricsReport a = evaluate_retrieval(f, labels, ApMode::Standard, 1);
  const MetricsReport b = evaluate_retrieval(f, labels, ApMode::Standard, 4);
  EXPECT_EQ(a.map, b.map);
  EXPECT_EQ(a.anmrr, b.anmrr);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(EvaluateTest, SingletonClassesAreSkipped) {
  const Tensor f({4, 1}, {0.0, 1.0, 2.0, 3.0});
  const std::vector<std::uint32_t> labels{0, 0, 1, 2};
  const MetricsReport r = evaluate_retrieval(f, labels);
  EXPECT_EQ(r.queries, 2u);
  EXPECT_EQ(r.skipped_queries, 2u);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
}

TEST(EvaluateTest, ReportFiles) {
  const Tensor f({4, 1}, {0.0, 1.0, 5.0, 6.0});
  const MetricsReport r = evaluate_retrieval(f, std::vector<std::uint32_t>{0, 0, 1, 1});
  const auto dir = std::filesystem::temp_directory_path() / "dmlganr_retrieval_test";
  r.write(dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.json"));
  std::ifstream pr(dir / "pr.csv");
  std::string header;
  std::getline(pr, header);
  EXPECT_EQ(header, "recall,precision");
  EXPECT_NE(r.to_json().find("\"anmrr\""), std::string::npos);
}
