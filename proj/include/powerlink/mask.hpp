#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "powerlink/csr.hpp"
#include "powerlink/kg.hpp"

namespace powerlink {

/// Sparse n x n edge-score matrix over a computation graph. One value per
/// distinct (head, tail) pair; when several triples share a pair the entry
/// holds their maximum and `provenance` names the edge that produced it.
class EdgeScoreMatrix {
 public:
  EdgeScoreMatrix() = default;

  /// Every entry set to `value`; provenance is the first edge of each pair.
  static EdgeScoreMatrix uniform(const ComputationGraph& gc, double value);
  /// Per-pair values in stored-entry order.
  static EdgeScoreMatrix from_pair_values(const ComputationGraph& gc, std::vector<double> values);
  /// Per-edge scores collapsed by maximum onto their pairs.
  static EdgeScoreMatrix from_edge_scores(const ComputationGraph& gc, std::span<const double> scores);

  std::size_t size() const noexcept { return values_.size(); }
  const CsrPattern& pattern() const { return *pattern_; }
  std::shared_ptr<const CsrPattern> pattern_ptr() const noexcept { return pattern_; }
  std::span<const double> values() const noexcept { return values_; }
  /// Gc edge position that supplied each stored entry.
  std::span<const std::size_t> provenance() const noexcept { return provenance_; }
  std::optional<double> at(LocalIndex head, LocalIndex tail) const;

  /// Value applied to every gc edge (the pair value, broadcast).
  std::vector<double> edge_values(const ComputationGraph& gc) const;
  /// 1 - M on the same support.
  EdgeScoreMatrix complement() const;
  /// True when the support matches the graph's adjacency exactly.
  bool aligned_to(const ComputationGraph& gc) const;

 private:
  std::shared_ptr<const CsrPattern> pattern_;
  std::vector<double> values_;
  std::vector<std::size_t> provenance_;
};

}  // namespace powerlink
