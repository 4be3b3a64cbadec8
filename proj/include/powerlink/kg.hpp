#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "powerlink/csr.hpp"

namespace powerlink {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using LocalIndex = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

enum class Label { kFactual, kCounterfactual };

struct TargetTriple {
  Triple triple;
  Label label = Label::kFactual;
};

/// Bidirectional id <-> name map; ids are assigned in first-seen order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  /// Returns the id of `name`, adding it if new.
  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// name -> id as a JSON object (keys sorted).
  nlohmann::json to_json() const;
  /// 64-bit FNV-1a over the names in id order; identifies a vocabulary.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Immutable triple store with a binary entity adjacency in compressed rows.
class KnowledgeGraph {
 public:
  /// Validates ids and rejects duplicate triples (ContractError).
  KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> triples);
  /// Unnamed graph; entity/relation names are their decimal ids.
  static KnowledgeGraph from_ids(std::size_t num_entities, std::size_t num_relations,
                                 std::vector<Triple> triples);

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  std::size_t num_triples() const noexcept { return triples_.size(); }
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }

  /// A[i][j] = 1 iff some (i, r, j) exists.
  const CsrPattern& adjacency() const noexcept { return adjacency_; }
  /// Indices into triples() of the triples leaving / entering an entity.
  std::span<const std::size_t> out_triples(EntityId e) const;
  std::span<const std::size_t> in_triples(EntityId e) const;
  bool contains(const Triple& t) const;

  /// Number of duplicate lines dropped while loading (0 for direct builds).
  std::size_t duplicates_dropped() const noexcept { return duplicates_dropped_; }
  void set_duplicates_dropped(std::size_t n) noexcept { duplicates_dropped_ = n; }

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::vector<Triple> sorted_;
  CsrPattern adjacency_;
  std::vector<std::size_t> out_ptr_, out_idx_, in_ptr_, in_idx_;
  std::size_t duplicates_dropped_ = 0;
};

/// Reads a head<delim>relation<delim>tail file. Duplicate lines are dropped
/// and counted; malformed lines raise ParseError with the line number.
KnowledgeGraph load_triples(const std::filesystem::path& path, char delimiter = '\t');

/// Train/valid/test splits sharing one vocabulary (built train first).
struct Dataset {
  KnowledgeGraph train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
};

/// Loads <dir>/train.txt plus optional valid.txt and test.txt.
Dataset load_dataset(const std::filesystem::path& dir, char delimiter = '\t');

void write_triples(const std::filesystem::path& path, const KnowledgeGraph& g,
                   std::span<const Triple> triples, char delimiter = '\t');

struct LocalEdge {
  LocalIndex head = 0;
  RelationId relation = 0;
  LocalIndex tail = 0;
  std::size_t triple_index = 0;  // position in the parent graph's triples()
};

/// Subgraph around a target pair with local <-> global index maps.
class ComputationGraph {
 public:
  /// `nodes` are global ids in local order; edges use local indices.
  ComputationGraph(std::vector<EntityId> nodes, std::vector<LocalEdge> edges, LocalIndex head,
                   LocalIndex tail);

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<EntityId>& nodes() const noexcept { return nodes_; }
  const std::vector<LocalEdge>& edges() const noexcept { return edges_; }

  /// Binary local adjacency; one stored entry per distinct (head, tail) pair.
  const CsrPattern& adjacency() const noexcept { return *adjacency_; }
  std::shared_ptr<const CsrPattern> adjacency_ptr() const noexcept { return adjacency_; }
  /// Stored-entry position of every edge in adjacency().
  const std::vector<std::uint32_t>& edge_pairs() const noexcept { return edge_pairs_; }

  LocalIndex head_index() const noexcept { return head_; }
  LocalIndex tail_index() const noexcept { return tail_; }
  EntityId global_of(LocalIndex i) const { return nodes_.at(i); }
  std::optional<LocalIndex> local_of(EntityId e) const;

  /// Undirected neighbor count (self-loops ignored).
  std::vector<std::size_t> undirected_degrees() const;

  /// Same node set with the given edge positions removed.
  ComputationGraph without_edges(std::span<const std::size_t> edge_positions) const;
  /// Removes every edge equal to `t` (by global ids).
  ComputationGraph without_triple(const Triple& t) const;

 private:
  std::vector<EntityId> nodes_;
  std::vector<LocalEdge> edges_;
  std::unordered_map<EntityId, LocalIndex> local_;
  std::shared_ptr<const CsrPattern> adjacency_;
  std::vector<std::uint32_t> edge_pairs_;
  LocalIndex head_ = 0;
  LocalIndex tail_ = 0;
};

inline constexpr std::size_t kUnlimitedNodes = static_cast<std::size_t>(-1);

/// Nodes within `hops` undirected hops of the target head or tail, truncated
/// to `max_nodes` by (distance to nearer endpoint, global id); endpoints are
/// always kept. Edges are all triples with both endpoints retained.
ComputationGraph extract_computation_graph(const KnowledgeGraph& g, const Triple& target,
                                           std::size_t hops, std::size_t max_nodes = kUnlimitedNodes);

/// Iteratively removes nodes of undirected degree < k, never removing the
/// target endpoints. Local order of survivors is preserved.
ComputationGraph k_core_prune(const ComputationGraph& gc, std::size_t k);

/// result[l-1][j] = number of directed walks of length l from `start` to j,
/// for l = 1..max_len. Throws NumericError on 64-bit overflow.
std::vector<std::vector<std::uint64_t>> adjacency_power_row(const ComputationGraph& gc,
                                                            LocalIndex start, std::size_t max_len);

}  // namespace powerlink
