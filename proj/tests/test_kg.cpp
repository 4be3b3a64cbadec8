#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "powerlink/error.hpp"
#include "powerlink/kg.hpp"
#include "support.hpp"

using namespace powerlink;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  auto p = std::filesystem::temp_directory_path() / ("powerlink_kg_" + name);
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

std::set<EntityId> global_nodes(const ComputationGraph& gc) { return {gc.nodes().begin(), gc.nodes().end()}; }

std::vector<std::size_t> bfs(const KnowledgeGraph& g, EntityId s) {
  std::vector<std::size_t> d(g.num_entities(), SIZE_MAX);
  std::deque<EntityId> q{s};
  d[s] = 0;
  while (!q.empty()) {
    auto u = q.front();
    q.pop_front();
    for (const auto& t : g.triples()) {
      EntityId v;
      if (t.head == u) v = t.tail;
      else if (t.tail == u) v = t.head;
      else continue;
      if (d[v] == SIZE_MAX) {
        d[v] = d[u] + 1;
        q.push_back(v);
      }
    }
  }
  return d;
}

// Naive repeated scan: drop any unprotected node whose distinct undirected
// neighbour count is below k, until nothing changes.
std::set<EntityId> kcore_oracle(const ComputationGraph& gc, std::size_t k) {
  std::set<LocalIndex> alive;
  for (LocalIndex i = 0; i < gc.num_nodes(); ++i) alive.insert(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (LocalIndex v : std::set<LocalIndex>(alive)) {
      if (v == gc.head_index() || v == gc.tail_index()) continue;
      std::set<LocalIndex> nb;
      for (const auto& e : gc.edges()) {
        if (e.head == e.tail) continue;
        if (e.head == v && alive.count(e.tail)) nb.insert(e.tail);
        if (e.tail == v && alive.count(e.head)) nb.insert(e.head);
      }
      if (nb.size() < k) {
        alive.erase(v);
        changed = true;
      }
    }
  }
  std::set<EntityId> out;
  for (auto i : alive) out.insert(gc.global_of(i));
  return out;
}

}  // namespace

TEST(LoadTriples, ThreeLineFile) {
  auto p = write_file("three.txt", "a\tr1\tb\nb\tr1\tc\na\tr2\tc\n");
  auto g = load_triples(p);
  EXPECT_EQ(g.num_entities(), 3u);
  EXPECT_EQ(g.num_relations(), 2u);
  EXPECT_EQ(g.num_triples(), 3u);
  EXPECT_EQ(g.entities().name(0), "a");
  EXPECT_EQ(g.relations().name(1), "r2");
}

TEST(LoadTriples, DuplicateLineIsCounted) {
  auto p = write_file("dup.txt", "a\tr\tb\na\tr\tb\n");
  auto g = load_triples(p);
  EXPECT_EQ(g.num_triples(), 1u);
  EXPECT_EQ(g.duplicates_dropped(), 1u);
}

TEST(LoadTriples, MalformedLineReportsLineNumber) {
  auto p = write_file("bad.txt", "a\tr\tb\nonly\ttwo\n");
  try {
    load_triples(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadTriples, EmptyAndMissingFiles) {
  EXPECT_THROW(load_triples(write_file("empty.txt", "")), Error);
  EXPECT_THROW(load_triples("/nonexistent/powerlink.txt"), IoError);
}

TEST(LoadTriples, WriteReadRoundTrip) {
  std::mt19937_64 rng(5);
  auto g = testkit::random_kg(rng, 20, 40, 3);
  auto p = std::filesystem::temp_directory_path() / "powerlink_kg_rt.txt";
  write_triples(p, g, g.triples());
  auto h = load_triples(p);
  EXPECT_EQ(h.num_triples(), g.num_triples());
  for (const auto& t : h.triples()) {
    const Triple back{static_cast<EntityId>(std::stoul(h.entities().name(t.head))),
                      static_cast<RelationId>(std::stoul(h.relations().name(t.relation))),
                      static_cast<EntityId>(std::stoul(h.entities().name(t.tail)))};
    EXPECT_TRUE(g.contains(back));
  }
}

TEST(KnowledgeGraph, RejectsDuplicatesAndBadIds) {
  EXPECT_THROW(KnowledgeGraph::from_ids(2, 1, {{0, 0, 1}, {0, 0, 1}}), ContractError);
  EXPECT_THROW(KnowledgeGraph::from_ids(2, 1, {{0, 0, 2}}), ContractError);
}

TEST(KnowledgeGraph, BinaryAdjacency) {
  auto g = KnowledgeGraph::from_ids(3, 2, {{0, 0, 1}, {0, 1, 1}, {1, 0, 2}});
  EXPECT_EQ(g.adjacency().nnz(), 2u);
  EXPECT_TRUE(g.adjacency().find(0, 1).has_value());
  EXPECT_FALSE(g.adjacency().find(1, 0).has_value());
}

TEST(Vocabulary, FingerprintTracksOrder) {
  Vocabulary a(std::vector<std::string>{"x", "y"});
  Vocabulary b(std::vector<std::string>{"y", "x"});
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.fingerprint(), Vocabulary(std::vector<std::string>{"x", "y"}).fingerprint());
}

TEST(Extract, PathGraph) {
  auto g = KnowledgeGraph::from_ids(3, 1, {{0, 0, 1}, {1, 0, 2}});
  auto gc = extract_computation_graph(g, {0, 0, 2}, 1);
  EXPECT_EQ(global_nodes(gc), (std::set<EntityId>{0, 1, 2}));
  EXPECT_EQ(gc.num_edges(), 2u);
}

TEST(Extract, StarKeepsOnlyCenter) {
  // center 0, leaves 1..5
  std::vector<Triple> ts;
  for (EntityId x = 1; x <= 5; ++x) ts.push_back({0, 0, x});
  auto g = KnowledgeGraph::from_ids(6, 1, ts);
  auto gc = extract_computation_graph(g, {1, 0, 2}, 1);
  EXPECT_EQ(global_nodes(gc), (std::set<EntityId>{0, 1, 2}));
}

TEST(Extract, IsolatedTargetGivesTwoNodes) {
  auto g = KnowledgeGraph::from_ids(4, 1, {{2, 0, 3}});
  auto gc = extract_computation_graph(g, {0, 0, 1}, 2);
  EXPECT_EQ(gc.num_nodes(), 2u);
  EXPECT_EQ(gc.num_edges(), 0u);
}

TEST(Extract, MatchesBfsOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    auto g = testkit::random_kg(rng, 50, 80, 3);
    const Triple t{static_cast<EntityId>(seed % 50), 0, static_cast<EntityId>((seed * 7 + 3) % 50)};
    if (t.head == t.tail) continue;
    auto dh = bfs(g, t.head), dt = bfs(g, t.tail);
    std::set<EntityId> expect;
    for (EntityId e = 0; e < 50; ++e)
      if (dh[e] <= 2 || dt[e] <= 2) expect.insert(e);
    auto gc = extract_computation_graph(g, t, 2);
    EXPECT_EQ(global_nodes(gc), expect) << "seed " << seed;
    std::size_t inside = 0;
    for (const auto& tr : g.triples()) inside += expect.count(tr.head) && expect.count(tr.tail);
    EXPECT_EQ(gc.num_edges(), inside);
    // index maps are mutual inverses
    for (LocalIndex i = 0; i < gc.num_nodes(); ++i) EXPECT_EQ(*gc.local_of(gc.global_of(i)), i);
  }
}

TEST(Extract, MonotoneInHops) {
  std::mt19937_64 rng(11);
  auto g = testkit::random_kg(rng, 60, 70, 2);
  for (std::size_t h = 1; h < 4; ++h) {
    auto a = global_nodes(extract_computation_graph(g, {0, 0, 1}, h));
    auto b = global_nodes(extract_computation_graph(g, {0, 0, 1}, h + 1));
    EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST(Extract, TruncationKeepsNearestAndEndpoints) {
  // 0 - 1 - ... chain plus a far branch; cap at 4 nodes.
  std::vector<Triple> ts;
  for (EntityId i = 0; i + 1 < 10; ++i) ts.push_back({i, 0, i + 1});
  auto g = KnowledgeGraph::from_ids(10, 1, ts);
  auto gc = extract_computation_graph(g, {4, 0, 9}, 3, 4);
  auto nodes = global_nodes(gc);
  EXPECT_EQ(nodes.size(), 4u);
  EXPECT_TRUE(nodes.count(4) && nodes.count(9));
  // distance 1 from an endpoint: 3, 5, 8 -> two smallest ids win
  EXPECT_TRUE(nodes.count(3) && nodes.count(5));
}

TEST(KCore, TriangleUnchanged) {
  auto g = KnowledgeGraph::from_ids(3, 1, {{0, 0, 1}, {1, 0, 2}, {2, 0, 0}});
  auto gc = extract_computation_graph(g, {0, 0, 1}, 1);
  auto pruned = k_core_prune(gc, 2);
  EXPECT_EQ(pruned.num_nodes(), 3u);
  EXPECT_EQ(pruned.num_edges(), 3u);
}

TEST(KCore, StarCascade) {
  std::vector<Triple> ts;
  for (EntityId x = 1; x <= 5; ++x) ts.push_back({0, 0, x});
  auto g = KnowledgeGraph::from_ids(6, 1, ts);
  auto gc = extract_computation_graph(g, {1, 0, 2}, 2);
  ASSERT_EQ(gc.num_nodes(), 6u);
  // Unprotected leaves drop; the centre keeps its two protected neighbours.
  auto k2 = k_core_prune(gc, 2);
  EXPECT_EQ(global_nodes(k2), (std::set<EntityId>{0, 1, 2}));
  auto k3 = k_core_prune(gc, 3);
  EXPECT_EQ(global_nodes(k3), (std::set<EntityId>{1, 2}));
  EXPECT_EQ(k3.num_edges(), 0u);
}

TEST(KCore, ParallelEdgesCountOnce) {
  auto g = KnowledgeGraph::from_ids(3, 2, {{0, 0, 2}, {0, 1, 2}, {2, 0, 0}, {1, 0, 0}});
  auto gc = extract_computation_graph(g, {0, 0, 1}, 1);
  auto pruned = k_core_prune(gc, 2);
  EXPECT_EQ(global_nodes(pruned), (std::set<EntityId>{0, 1}));
}

TEST(KCore, MatchesIterativeOracleAndIsIdempotent) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 39;
    auto gc = testkit::random_gc(rng, n, 0.02 + 0.2 * std::uniform_real_distribution<>(0, 1)(rng), 2, true);
    const std::size_t k = seed % 4;
    auto pruned = k_core_prune(gc, k);
    ASSERT_EQ(global_nodes(pruned), kcore_oracle(gc, k)) << "seed " << seed;
    EXPECT_EQ(pruned.global_of(pruned.head_index()), gc.global_of(gc.head_index()));
    EXPECT_EQ(pruned.global_of(pruned.tail_index()), gc.global_of(gc.tail_index()));
    auto again = k_core_prune(pruned, k);
    EXPECT_EQ(global_nodes(again), global_nodes(pruned));
    EXPECT_EQ(again.num_edges(), pruned.num_edges());
  }
}

TEST(WalkCounts, PathAndCycle) {
  auto path = ComputationGraph({0, 1, 2}, {{0, 0, 1, 0}, {1, 0, 2, 1}}, 0, 2);
  auto a = adjacency_power_row(path, 0, 2);
  EXPECT_EQ(a[0], (std::vector<std::uint64_t>{0, 1, 0}));
  EXPECT_EQ(a[1], (std::vector<std::uint64_t>{0, 0, 1}));
  auto cyc = ComputationGraph({0, 1, 2}, {{0, 0, 1, 0}, {1, 0, 2, 1}, {2, 0, 0, 2}}, 0, 1);
  EXPECT_EQ(adjacency_power_row(cyc, 0, 3)[2][0], 1u);
}

TEST(WalkCounts, MatchDfsAndDensePower) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 11;
    auto gc = testkit::random_gc(rng, n, 0.35, 2, true);
    std::vector<std::vector<std::uint64_t>> A(n, std::vector<std::uint64_t>(n, 0));
    for (const auto& e : gc.edges()) A[e.head][e.tail] = 1;
    const LocalIndex s = gc.head_index();
    auto counts = adjacency_power_row(gc, s, 4);
    // dense power
    std::vector<std::uint64_t> row(A[s]);
    for (std::size_t l = 1; l <= 4; ++l) {
      ASSERT_EQ(counts[l - 1], row) << "seed " << seed << " l " << l;
      std::vector<std::uint64_t> next(n, 0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) next[j] += row[i] * A[i][j];
      row = next;
    }
    // DFS enumeration for small n
    if (n <= 6) {
      std::vector<std::vector<std::uint64_t>> dfs(4, std::vector<std::uint64_t>(n, 0));
      std::function<void(LocalIndex, std::size_t)> walk = [&](LocalIndex u, std::size_t len) {
        if (len > 0) ++dfs[len - 1][u];
        if (len == 4) return;
        for (LocalIndex v = 0; v < n; ++v)
          if (A[u][v]) walk(v, len + 1);
      };
      walk(s, 0);
      EXPECT_EQ(counts, dfs);
    }
  }
}

TEST(ComputationGraph, WithoutTripleDropsEveryCopy) {
  auto g = KnowledgeGraph::from_ids(3, 2, {{0, 0, 1}, {0, 1, 1}, {1, 0, 2}});
  auto gc = extract_computation_graph(g, {0, 0, 2}, 1);
  auto out = gc.without_triple({0, 0, 1});
  EXPECT_EQ(out.num_edges(), 2u);
  EXPECT_EQ(out.num_nodes(), gc.num_nodes());
}
