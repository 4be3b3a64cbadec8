#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "powerlink/kg.hpp"

namespace powerlink::testkit {

// Random local graph on nodes 0..n-1. Pairs may carry several relations.
inline ComputationGraph random_gc(std::mt19937_64& rng, std::size_t n, double density, std::size_t relations = 2,
                                  bool self_loops = false) {
  std::bernoulli_distribution edge(density);
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(relations - 1));
  std::vector<EntityId> nodes(n);
  for (std::size_t i = 0; i < n; ++i) nodes[i] = static_cast<EntityId>(i);
  std::vector<LocalEdge> edges;
  std::set<Triple> seen;
  for (LocalIndex i = 0; i < n; ++i)
    for (LocalIndex j = 0; j < n; ++j) {
      if (i == j && !self_loops) continue;
      if (!edge(rng)) continue;
      const RelationId r = rel(rng);
      if (seen.insert({i, r, j}).second) edges.push_back({i, r, j, edges.size()});
      if (edge(rng)) {
        const RelationId r2 = rel(rng);
        if (seen.insert({i, r2, j}).second) edges.push_back({i, r2, j, edges.size()});
      }
    }
  std::uniform_int_distribution<LocalIndex> pick(0, static_cast<LocalIndex>(n - 1));
  const LocalIndex h = pick(rng);
  LocalIndex t = pick(rng);
  if (n > 1)
    while (t == h) t = pick(rng);
  return ComputationGraph(std::move(nodes), std::move(edges), h, t);
}

inline KnowledgeGraph random_kg(std::mt19937_64& rng, std::size_t n, std::size_t triples, std::size_t relations) {
  std::uniform_int_distribution<EntityId> ent(0, static_cast<EntityId>(n - 1));
  std::uniform_int_distribution<RelationId> rel(0, static_cast<RelationId>(relations - 1));
  std::set<Triple> set;
  std::size_t guard = 0;
  while (set.size() < triples && ++guard < 100 * triples) {
    const Triple t{ent(rng), rel(rng), ent(rng)};
    if (t.head != t.tail) set.insert(t);
  }
  return KnowledgeGraph::from_ids(n, relations, {set.begin(), set.end()});
}

}  // namespace powerlink::testkit
