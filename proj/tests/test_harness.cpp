#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "powerlink/error.hpp"
#include "powerlink/harness.hpp"

using namespace powerlink;

TEST(Planted, ChainsAreShortestAndUnshortcut) {
  for (std::size_t len = 1; len <= 5; ++len)
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      PlantedConfig c;
      c.path_len = len;
      c.n_planted_paths = len == 1 ? 1 : 2;
      c.n_entities = 80;
      c.seed = seed;
      const auto inst = generate_planted(c);
      const auto& t = inst.target.triple;
      EXPECT_TRUE(inst.graph.contains(t));
      EXPECT_EQ(undirected_distance(inst.graph, t.head, t.tail, t), len) << "len " << len << " seed " << seed;
      ASSERT_EQ(inst.planted_paths.size(), c.n_planted_paths);
      std::set<EntityId> inner;
      for (const auto& p : inst.planted_paths) {
        ASSERT_EQ(p.size(), len);
        EXPECT_EQ(p.front().head, t.head);
        EXPECT_EQ(p.back().tail, t.tail);
        for (std::size_t i = 0; i < p.size(); ++i) {
          EXPECT_EQ(p[i].relation, kPathRelation);
          EXPECT_TRUE(inst.graph.contains(p[i]));
          if (i > 0) {
            EXPECT_EQ(p[i].head, p[i - 1].tail);
            EXPECT_TRUE(inner.insert(p[i].head).second) << "planted chains share a node";
          }
        }
      }
      EXPECT_EQ(inst.distractor_edges.size(), c.n_distractors);
    }
}

TEST(Planted, PlantedPairsCarryOneTriple) {
  PlantedConfig c;
  c.seed = 9;
  const auto inst = generate_planted(c);
  for (const auto& p : inst.planted_paths)
    for (const auto& e : p) {
      std::size_t n = 0;
      for (const auto& t : inst.graph.triples())
        n += (t.head == e.head && t.tail == e.tail) || (t.head == e.tail && t.tail == e.head);
      EXPECT_EQ(n, 1u);
    }
}

TEST(Planted, DeterministicPerSeed) {
  PlantedConfig c;
  c.seed = 4;
  const auto a = generate_planted(c);
  const auto b = generate_planted(c);
  EXPECT_EQ(a.graph.triples(), b.graph.triples());
  c.seed = 5;
  EXPECT_NE(generate_planted(c).graph.triples(), a.graph.triples());
}

TEST(Planted, InfeasibleConfigsAreRejected) {
  PlantedConfig c;
  c.path_len = 6;
  EXPECT_THROW(generate_planted(c), ContractError);
  c = {};
  c.n_entities = 10;
  EXPECT_THROW(generate_planted(c), ContractError);
  c = {};
  c.n_relations = 2;
  EXPECT_THROW(generate_planted(c), ContractError);
  c = {};
  c.path_len = 1;
  EXPECT_THROW(generate_planted(c), ContractError);
  c = {};
  c.n_entities = 30;
  c.n_rule_examples = 0;
  c.n_distractors = 30 * 29 * 3 + 1;  // more than distinct triples exist
  EXPECT_THROW(generate_planted(c), ContractError);
}

TEST(PathRecovery, PrecisionAndRecall) {
  const std::vector<std::vector<Triple>> planted{{{0, 1, 2}, {2, 1, 3}}, {{0, 1, 4}, {4, 1, 3}}};
  auto make = [](std::vector<Triple> ts) {
    ExplanationPath p;
    for (const auto& t : ts) p.edges.push_back({0, 0, t, 0, 1.0});
    return p;
  };
  const std::vector<ExplanationPath> got{make({{0, 1, 4}, {4, 1, 3}}), make({{0, 2, 5}, {5, 2, 3}}),
                                         make({{0, 1, 2}, {2, 1, 3}})};
  const auto [prec, rec] = path_recovery(got, planted);
  EXPECT_DOUBLE_EQ(prec, 0.5);
  EXPECT_DOUBLE_EQ(rec, 0.5);
  EXPECT_EQ(path_recovery({}, planted), std::make_pair(0.0, 0.0));
}

TEST(SuiteConfig, JsonKeys) {
  const auto c = suite_config_from_json({{"instances", 3}, {"path_len", 4}, {"k_hop", 2}, {"modes", {"full"}},
                                         {"combine", "euclidean"}, {"decoder", "transe"}});
  EXPECT_EQ(c.instances, 3u);
  EXPECT_EQ(c.planted.path_len, 4u);
  EXPECT_EQ(c.pipeline.hops, 2u);
  EXPECT_EQ(c.modes, std::vector<SuiteMode>{SuiteMode::kFull});
  EXPECT_EQ(c.pipeline.explainer.combine, CombineMode::kEuclidean);
  EXPECT_EQ(c.train.shape.decoder, Decoder::kTransE);
  EXPECT_EQ(suite_config_from_json(to_json(c)).planted.path_len, 4u);
  EXPECT_EQ(to_json(suite_config_from_json(to_json(c))).dump(), to_json(c).dump());
  EXPECT_THROW(suite_config_from_json({{"instancez", 3}}), ContractError);
  EXPECT_THROW(suite_config_from_json({{"instances", "many"}}), ContractError);
  EXPECT_THROW(suite_config_from_json({{"modes", {"half"}}}), ContractError);
}

TEST(SuiteConfig, KeyValueFile) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p = dir / "powerlink_suite.conf";
  std::ofstream(p) << "# small\ninstances = 4\nlr = 0.01   # explainer\ncombine = cat\n\n";
  const auto c = load_suite_config(p);
  EXPECT_EQ(c.instances, 4u);
  EXPECT_DOUBLE_EQ(c.pipeline.explainer.lr, 0.01);
  std::ofstream(p) << "instances 4\n";
  try {
    load_suite_config(p);
    ADD_FAILURE() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  EXPECT_THROW(load_suite_config(dir / "powerlink_nope.conf"), IoError);
}

TEST(Suite, SmallRunIsReproducible) {
  SuiteConfig c;
  c.instances = 2;
  c.train.epochs = 60;
  c.pipeline.explainer.epochs = 5;
  c.modes = {SuiteMode::kFull, SuiteMode::kNoMi};
  const auto a = run_suite(c);
  c.workers = 2;
  const auto b = run_suite(c);
  ASSERT_EQ(a.outcomes.size(), 4u);
  ASSERT_EQ(a.summaries.size(), 2u);
  for (std::size_t i = 0; i < a.outcomes.size(); ++i) {
    auto ea = a.outcomes[i].explanation, eb = b.outcomes[i].explanation;
    ea.erase("config");
    eb.erase("config");
    EXPECT_EQ(ea.dump(), eb.dump());
    EXPECT_EQ(a.outcomes[i].mode, b.outcomes[i].mode);
  }
  for (std::size_t i = 0; i < a.summaries.size(); ++i)
    EXPECT_EQ(to_json(a.summaries[i]).dump(), to_json(b.summaries[i]).dump());
  EXPECT_EQ(a.outcomes[1].mode, SuiteMode::kNoMi);
}
