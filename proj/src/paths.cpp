#include "powerlink/paths.hpp"

#include <limits>
#include <queue>
#include <utility>

#include "powerlink/error.hpp"

namespace powerlink {

std::vector<LocalIndex> ExplanationPath::nodes() const {
  std::vector<LocalIndex> out;
  if (edges.empty()) return out;
  out.push_back(edges.front().head);
  for (const auto& e : edges) out.push_back(e.tail);
  return out;
}

std::vector<LocalIndex> cheapest_path(const CsrPattern& pattern, std::span<const double> values,
                                      std::span<const char> alive, LocalIndex from, LocalIndex to) {
  const std::size_t n = pattern.rows;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr auto kNone = std::numeric_limits<LocalIndex>::max();
  std::vector<double> dist(n, kInf);
  std::vector<LocalIndex> prev(n, kNone);
  std::vector<char> done(n, 0);
  using Item = std::pair<double, LocalIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[from] = 0.0;
  heap.push({0.0, from});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (u == to) break;
    for (std::size_t p = pattern.row_ptr[u]; p < pattern.row_ptr[u + 1]; ++p) {
      const LocalIndex v = pattern.col_idx[p];
      if (!alive[p] || v == u || values[p] <= 0.0 || done[v]) continue;
      const double nd = d + 1.0 / values[p];
      if (nd < dist[v] || (nd == dist[v] && u < prev[v])) {
        dist[v] = nd;
        prev[v] = u;
        heap.push({nd, v});
      }
    }
  }
  if (from == to || !done[to]) return {};
  std::vector<LocalIndex> path;
  for (LocalIndex v = to; v != kNone; v = prev[v]) path.push_back(v);
  return {path.rbegin(), path.rend()};
}

std::vector<ExplanationPath> generate_paths(const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                                            const TargetTriple& target, std::size_t num_paths,
                                            std::size_t max_len) {
  if (num_paths < 1) throw ContractError("num_paths must be at least 1");
  if (!mask.aligned_to(gc)) throw ContractError("mask is not aligned to the computation graph");
  auto h = gc.local_of(target.triple.head);
  auto t = gc.local_of(target.triple.tail);
  if (!h || !t) throw ContractError("target endpoints are not in the computation graph");

  const CsrPattern& pattern = mask.pattern();
  std::vector<char> alive(pattern.nnz(), 1);
  std::vector<ExplanationPath> out;
  while (out.size() < num_paths) {
    const auto nodes = cheapest_path(pattern, mask.values(), alive, *h, *t);
    if (nodes.empty()) break;
    ExplanationPath path;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      const std::size_t pos = *pattern.find(nodes[i], nodes[i + 1]);
      alive[pos] = 0;
      const std::size_t edge = mask.provenance()[pos];
      const LocalEdge& le = gc.edges()[edge];
      PathEdge pe;
      pe.head = le.head;
      pe.tail = le.tail;
      pe.triple = {gc.global_of(le.head), le.relation, gc.global_of(le.tail)};
      pe.edge_position = edge;
      pe.score = mask.values()[pos];
      total += pe.score;
      path.edges.push_back(pe);
    }
    if (path.edges.size() > max_len) continue;
    path.mean_score = total / static_cast<double>(path.edges.size());
    out.push_back(std::move(path));
  }
  return out;
}

}  // namespace powerlink
