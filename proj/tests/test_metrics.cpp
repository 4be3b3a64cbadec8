#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "powerlink/error.hpp"
#include "powerlink/harness.hpp"
#include "powerlink/metrics.hpp"
#include "support.hpp"

using namespace powerlink;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

struct Fixture {
  ComputationGraph gc;
  KgcModel model;
  TargetTriple target;
};

Fixture random_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto gc = testkit::random_gc(rng, 8, 0.35);
  const TargetTriple t{{gc.global_of(gc.head_index()), 0, gc.global_of(gc.tail_index())}, Label::kFactual};
  return {gc, KgcModel(8, 2, {}, seed), t};
}

}  // namespace

TEST(Fidelity, IdentityMasks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = random_fixture(seed);
    EXPECT_EQ(fidelity_minus(f.model, f.gc, EdgeScoreMatrix::uniform(f.gc, 1.0), f.target), 0.0);
    EXPECT_EQ(fidelity_plus(f.model, f.gc, EdgeScoreMatrix::uniform(f.gc, 0.0), f.target), 0.0);
    const auto half = EdgeScoreMatrix::uniform(f.gc, 0.5);
    const double p = score_target(f.model, f.gc, f.target).probability;
    EXPECT_DOUBLE_EQ(fidelity_minus(f.model, f.gc, half, f.target),
                     std::abs(score_target_masked(f.model, f.gc, half, f.target).probability - p));
  }
}

TEST(Sparsity, Anchors) {
  auto f = random_fixture(1);
  EXPECT_DOUBLE_EQ(sparsity(EdgeScoreMatrix::uniform(f.gc, 1.0), f.gc), 0.0);
  EXPECT_DOUBLE_EQ(sparsity(EdgeScoreMatrix::uniform(f.gc, 0.0), f.gc), 1.0);
  EXPECT_DOUBLE_EQ(sparsity(EdgeScoreMatrix::uniform(f.gc, 0.25), f.gc), 0.75);
  auto empty = ComputationGraph({0, 1}, {}, 0, 1);
  EXPECT_DOUBLE_EQ(sparsity(EdgeScoreMatrix::uniform(empty, 0.3), empty), 1.0);
}

TEST(HDeltaR, NoPathsIsATie) {
  auto f = random_fixture(2);
  Explanation e{f.target, {}, EdgeScoreMatrix::uniform(f.gc, 0.5), {}};
  for (std::size_t m : kHitLevels) EXPECT_TRUE(h_delta_r(f.model, f.gc, e, m));
}

TEST(HDeltaR, MatchesDirectComparison) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    auto f = random_fixture(seed);
    std::mt19937_64 rng(seed);
    std::vector<double> v(f.gc.adjacency().nnz());
    for (auto& x : v) x = std::uniform_real_distribution<>(0.1, 1.0)(rng);
    auto mask = EdgeScoreMatrix::from_pair_values(f.gc, v);
    Explanation e{f.target, generate_paths(f.gc, mask, f.target, 5, 3), mask, {}};
    for (std::size_t m : kHitLevels) {
      const auto reduced = remove_path_edges(f.gc, e.paths, m);
      const bool expect =
          !(score_target(f.model, reduced, f.target).raw > score_target(f.model, f.gc, f.target).raw);
      EXPECT_EQ(h_delta_r(f.model, f.gc, e, m), expect);
    }
  }
}

TEST(RemovePathEdges, DeletesOnlyPathTriples) {
  auto gc = ComputationGraph({0, 1, 2, 3},
                             {{0, 0, 1, 0}, {1, 0, 3, 1}, {0, 1, 2, 2}, {2, 1, 3, 3}, {1, 1, 2, 4}}, 0, 3);
  auto m = EdgeScoreMatrix::from_edge_scores(gc, std::vector<double>{0.9, 0.9, 0.5, 0.5, 0.1});
  const auto paths = generate_paths(gc, m, {{0, 0, 3}, Label::kFactual}, 5, 3);
  ASSERT_GE(paths.size(), 2u);
  EXPECT_EQ(remove_path_edges(gc, paths, 0).num_edges(), 5u);
  EXPECT_EQ(remove_path_edges(gc, paths, 1).num_edges(), 3u);
  EXPECT_EQ(remove_path_edges(gc, paths, 2).num_edges(), 1u);
  EXPECT_EQ(remove_path_edges(gc, paths, 9).num_nodes(), 4u);
}

TEST(Aggregate, MeansAndEmptyInput) {
  TargetMetrics a, b;
  a.fidelity_plus = 0.2;
  b.fidelity_plus = 0.4;
  a.sparsity = 1.0;
  a.hits = {true, false, true};
  b.hits = {true, true, false};
  const TargetMetrics rows[] = {a, b};
  const auto r = aggregate(rows);
  EXPECT_DOUBLE_EQ(r.fidelity_plus, 0.3);
  EXPECT_DOUBLE_EQ(r.sparsity, 0.5);
  EXPECT_DOUBLE_EQ(r.h_delta_r[0], 1.0);
  EXPECT_DOUBLE_EQ(r.h_delta_r[1], 0.5);
  EXPECT_EQ(r.n_samples, 2u);
  EXPECT_THROW(aggregate(std::span<const TargetMetrics>{}), DataError);
}

TEST(ThresholdRule, Names) {
  EXPECT_EQ(threshold_rule_from_string("probability"), ThresholdRule::kProbability);
  EXPECT_EQ(threshold_rule_from_string("rank1"), ThresholdRule::kRank1);
  EXPECT_THROW(threshold_rule_from_string("top"), ContractError);
}

class BatchTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    PlantedConfig pc;
    pc.seed = 5;
    inst_ = new PlantedInstance(generate_planted(pc));
    TrainConfig tc = SuiteConfig{}.train;
    model_ = new KgcModel(train_kgc(inst_->graph, tc).model);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete inst_;
  }
  static BatchConfig config(std::size_t samples, std::size_t workers) {
    BatchConfig c;
    c.sample_count = samples;
    c.workers = workers;
    c.pipeline.explainer.epochs = 5;
    c.pipeline.hops = 2;
    return c;
  }
  static PlantedInstance* inst_;
  static KgcModel* model_;
};

PlantedInstance* BatchTest::inst_ = nullptr;
KgcModel* BatchTest::model_ = nullptr;

TEST_F(BatchTest, SamplingAboveAvailableUsesAllExplainable) {
  const auto& cands = inst_->graph.triples();
  const auto r = evaluate_batch(*model_, inst_->graph, cands, config(100000, 1));
  EXPECT_EQ(r.candidates, cands.size());
  EXPECT_EQ(r.rows.size(), r.explainable);
  EXPECT_EQ(r.report.n_samples, r.explainable);
  std::size_t expect = 0;
  for (const auto& t : cands)
    expect += is_explainable(*model_, prepare_graph(inst_->graph, t, config(1, 1).pipeline), {t, Label::kFactual},
                             ThresholdRule::kProbability);
  EXPECT_EQ(r.explainable, expect);
}

TEST_F(BatchTest, RankRuleSelectsTopRankedTargets) {
  auto c = config(3, 1);
  c.rule = ThresholdRule::kRank1;
  const auto& cands = inst_->graph.triples();
  try {
    const auto r = evaluate_batch(*model_, inst_->graph, cands, c);
    for (const auto& row : r.rows)
      EXPECT_EQ(rank_target(*model_, prepare_graph(inst_->graph, row.target.triple, c.pipeline), row.target), 1u);
  } catch (const DataError&) {
    SUCCEED() << "no rank-1 targets";
  }
}

TEST_F(BatchTest, WorkerCountDoesNotChangeResults) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto& cands = inst_->graph.triples();
  const auto one = evaluate_batch(*model_, inst_->graph, cands, config(6, 1));
  const auto four = evaluate_batch(*model_, inst_->graph, cands, config(6, 4));
  write_metrics_csv(dir / "powerlink_m1.csv", one.rows);
  write_metrics_csv(dir / "powerlink_m4.csv", four.rows);
  EXPECT_EQ(slurp(dir / "powerlink_m1.csv"), slurp(dir / "powerlink_m4.csv"));
  EXPECT_EQ(to_json(one.report).dump(), to_json(four.report).dump());
  EXPECT_EQ(one.rows.size(), 6u);
}

TEST_F(BatchTest, BadSampleCountAndNothingExplainable) {
  const auto& cands = inst_->graph.triples();
  EXPECT_THROW(evaluate_batch(*model_, inst_->graph, cands, config(0, 1)), ContractError);
  const std::vector<Triple> none;
  EXPECT_THROW(evaluate_batch(*model_, inst_->graph, none, config(5, 1)), DataError);
}
