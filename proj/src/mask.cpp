#include "powerlink/mask.hpp"

#include "powerlink/error.hpp"

namespace powerlink {

namespace {

std::vector<std::size_t> first_edge_per_pair(const ComputationGraph& gc) {
  constexpr auto kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> prov(gc.adjacency().nnz(), kNone);
  const auto& pairs = gc.edge_pairs();
  for (std::size_t k = 0; k < pairs.size(); ++k)
    if (prov[pairs[k]] == kNone) prov[pairs[k]] = k;
  return prov;
}

}  // namespace

EdgeScoreMatrix EdgeScoreMatrix::uniform(const ComputationGraph& gc, double value) {
  EdgeScoreMatrix m;
  m.pattern_ = gc.adjacency_ptr();
  m.values_.assign(gc.adjacency().nnz(), value);
  m.provenance_ = first_edge_per_pair(gc);
  return m;
}

EdgeScoreMatrix EdgeScoreMatrix::from_pair_values(const ComputationGraph& gc, std::vector<double> values) {
  if (values.size() != gc.adjacency().nnz())
    throw ContractError("EdgeScoreMatrix: one value per adjacency entry required");
  EdgeScoreMatrix m;
  m.pattern_ = gc.adjacency_ptr();
  m.values_ = std::move(values);
  m.provenance_ = first_edge_per_pair(gc);
  return m;
}

EdgeScoreMatrix EdgeScoreMatrix::from_edge_scores(const ComputationGraph& gc, std::span<const double> scores) {
  if (scores.size() != gc.num_edges()) throw ContractError("EdgeScoreMatrix: one score per edge required");
  EdgeScoreMatrix m;
  m.pattern_ = gc.adjacency_ptr();
  m.values_.assign(gc.adjacency().nnz(), 0.0);
  m.provenance_ = first_edge_per_pair(gc);
  const auto& pairs = gc.edge_pairs();
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const std::size_t p = pairs[k];
    if (m.provenance_[p] == k || scores[k] > m.values_[p]) {
      m.values_[p] = scores[k];
      m.provenance_[p] = k;
    }
  }
  return m;
}

std::optional<double> EdgeScoreMatrix::at(LocalIndex head, LocalIndex tail) const {
  auto pos = pattern_->find(head, tail);
  if (!pos) return std::nullopt;
  return values_[*pos];
}

std::vector<double> EdgeScoreMatrix::edge_values(const ComputationGraph& gc) const {
  if (!aligned_to(gc)) throw ContractError("EdgeScoreMatrix: mask is not aligned to the computation graph");
  std::vector<double> out(gc.num_edges());
  const auto& pairs = gc.edge_pairs();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = values_[pairs[k]];
  return out;
}

EdgeScoreMatrix EdgeScoreMatrix::complement() const {
  EdgeScoreMatrix m = *this;
  for (double& v : m.values_) v = 1.0 - v;
  return m;
}

bool EdgeScoreMatrix::aligned_to(const ComputationGraph& gc) const {
  if (!pattern_) return false;
  if (pattern_ == gc.adjacency_ptr()) return true;
  return *pattern_ == gc.adjacency();
}

}  // namespace powerlink
