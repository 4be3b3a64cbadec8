#pragma once

#include <cstddef>
#include <vector>

#include "powerlink/kg.hpp"
#include "powerlink/mask.hpp"

namespace powerlink {

struct PathEdge {
  LocalIndex head = 0;
  LocalIndex tail = 0;
  Triple triple;                  // global ids of the triple that supplied the pair score
  std::size_t edge_position = 0;  // index into gc.edges()
  double score = 0.0;
};

struct ExplanationPath {
  std::vector<PathEdge> edges;
  double mean_score = 0.0;

  std::size_t length() const noexcept { return edges.size(); }
  /// Local node sequence head ... tail.
  std::vector<LocalIndex> nodes() const;
};

/// Up to `num_paths` edge-disjoint head->tail paths, cheapest first under the
/// cost 1/M. Each found path's pairs are removed before the next search;
/// paths longer than `max_len` are dropped but their pairs are still removed.
/// An empty result means the endpoints are not connected.
std::vector<ExplanationPath> generate_paths(const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                                            const TargetTriple& target, std::size_t num_paths,
                                            std::size_t max_len);

/// Single Dijkstra search over the pairs whose `alive` flag is set. Ties are
/// resolved toward smaller local indices. Returns the local node sequence, or
/// an empty vector when `to` is unreachable.
std::vector<LocalIndex> cheapest_path(const CsrPattern& pattern, std::span<const double> values,
                                      std::span<const char> alive, LocalIndex from, LocalIndex to);

}  // namespace powerlink
