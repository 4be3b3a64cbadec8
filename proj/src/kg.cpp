#include "powerlink/kg.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "powerlink/error.hpp"

namespace powerlink {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> names) {
  for (auto& n : names) {
    if (index_.count(n)) throw ContractError("Vocabulary: duplicate name '" + n + "'");
    intern(n);
  }
}

std::uint32_t Vocabulary::intern(std::string_view name) {
  std::string key(name);
  auto it = index_.find(key);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::uint32_t i = 0; i < names_.size(); ++i) j[names_[i]] = i;
  return j;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& n : names_) {
    for (char c : n) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> triples)
    : entities_(std::move(entities)), relations_(std::move(relations)), triples_(std::move(triples)) {
  const std::size_t ne = entities_.size();
  for (const auto& t : triples_) {
    if (t.head >= ne || t.tail >= ne || t.relation >= relations_.size())
      throw ContractError("KnowledgeGraph: triple id out of range");
  }
  sorted_ = triples_;
  std::sort(sorted_.begin(), sorted_.end());
  if (std::adjacent_find(sorted_.begin(), sorted_.end()) != sorted_.end())
    throw ContractError("KnowledgeGraph: duplicate triple");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(triples_.size());
  out_ptr_.assign(ne + 1, 0);
  in_ptr_.assign(ne + 1, 0);
  for (const auto& t : triples_) {
    pairs.emplace_back(t.head, t.tail);
    ++out_ptr_[t.head + 1];
    ++in_ptr_[t.tail + 1];
  }
  adjacency_ = CsrPattern::from_pairs(ne, ne, std::move(pairs));
  for (std::size_t i = 0; i < ne; ++i) {
    out_ptr_[i + 1] += out_ptr_[i];
    in_ptr_[i + 1] += in_ptr_[i];
  }
  out_idx_.resize(triples_.size());
  in_idx_.resize(triples_.size());
  std::vector<std::size_t> out_fill(out_ptr_.begin(), out_ptr_.end() - 1);
  std::vector<std::size_t> in_fill(in_ptr_.begin(), in_ptr_.end() - 1);
  for (std::size_t k = 0; k < triples_.size(); ++k) {
    out_idx_[out_fill[triples_[k].head]++] = k;
    in_idx_[in_fill[triples_[k].tail]++] = k;
  }
}

KnowledgeGraph KnowledgeGraph::from_ids(std::size_t num_entities, std::size_t num_relations,
                                        std::vector<Triple> triples) {
  Vocabulary ents, rels;
  for (std::size_t i = 0; i < num_entities; ++i) ents.intern(std::to_string(i));
  for (std::size_t i = 0; i < num_relations; ++i) rels.intern(std::to_string(i));
  return KnowledgeGraph(std::move(ents), std::move(rels), std::move(triples));
}

std::span<const std::size_t> KnowledgeGraph::out_triples(EntityId e) const {
  return {out_idx_.data() + out_ptr_[e], out_ptr_[e + 1] - out_ptr_[e]};
}

std::span<const std::size_t> KnowledgeGraph::in_triples(EntityId e) const {
  return {in_idx_.data() + in_ptr_[e], in_ptr_[e + 1] - in_ptr_[e]};
}

bool KnowledgeGraph::contains(const Triple& t) const {
  return std::binary_search(sorted_.begin(), sorted_.end(), t);
}

// ---------------------------------------------------------------------------
// Loading

namespace {

struct RawTriples {
  std::vector<Triple> triples;
  std::size_t lines = 0;
};

RawTriples parse_file(const std::filesystem::path& path, char delim, Vocabulary& ents,
                      Vocabulary& rels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triple file: " + path.string());
  RawTriples out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto pos = rest.find(delim);
      fields.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (fields.size() != 3 || std::any_of(fields.begin(), fields.end(), [](auto f) { return f.empty(); })) {
      std::ostringstream msg;
      msg << path.string() << ":" << lineno << ": expected 3 non-empty fields, got " << fields.size();
      throw ParseError(msg.str(), lineno);
    }
    const EntityId h = ents.intern(fields[0]);
    const RelationId r = rels.intern(fields[1]);
    const EntityId t = ents.intern(fields[2]);
    out.triples.push_back({h, r, t});
    ++out.lines;
  }
  return out;
}

std::vector<Triple> dedup_in_order(const std::vector<Triple>& raw, std::size_t& dropped) {
  std::vector<Triple> out;
  out.reserve(raw.size());
  std::set<Triple> seen;
  dropped = 0;
  for (const auto& t : raw) {
    if (seen.insert(t).second)
      out.push_back(t);
    else
      ++dropped;
  }
  return out;
}

}  // namespace

KnowledgeGraph load_triples(const std::filesystem::path& path, char delimiter) {
  Vocabulary ents, rels;
  RawTriples raw = parse_file(path, delimiter, ents, rels);
  if (raw.triples.empty()) throw ParseError(path.string() + ": file contains no triples", 0);
  std::size_t dropped = 0;
  auto triples = dedup_in_order(raw.triples, dropped);
  KnowledgeGraph g(std::move(ents), std::move(rels), std::move(triples));
  g.set_duplicates_dropped(dropped);
  return g;
}

Dataset load_dataset(const std::filesystem::path& dir, char delimiter) {
  Vocabulary ents, rels;
  RawTriples train = parse_file(dir / "train.txt", delimiter, ents, rels);
  if (train.triples.empty()) throw ParseError((dir / "train.txt").string() + ": file contains no triples", 0);
  std::vector<Triple> valid, test;
  if (std::filesystem::exists(dir / "valid.txt")) valid = parse_file(dir / "valid.txt", delimiter, ents, rels).triples;
  if (std::filesystem::exists(dir / "test.txt")) test = parse_file(dir / "test.txt", delimiter, ents, rels).triples;
  std::size_t dropped = 0;
  auto triples = dedup_in_order(train.triples, dropped);
  KnowledgeGraph g(std::move(ents), std::move(rels), std::move(triples));
  g.set_duplicates_dropped(dropped);
  return Dataset{std::move(g), std::move(valid), std::move(test)};
}

void write_triples(const std::filesystem::path& path, const KnowledgeGraph& g,
                   std::span<const Triple> triples, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write triple file: " + path.string());
  for (const auto& t : triples)
    out << g.entities().name(t.head) << delimiter << g.relations().name(t.relation) << delimiter
        << g.entities().name(t.tail) << '\n';
}

// ---------------------------------------------------------------------------
// ComputationGraph

ComputationGraph::ComputationGraph(std::vector<EntityId> nodes, std::vector<LocalEdge> edges,
                                   LocalIndex head, LocalIndex tail)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), head_(head), tail_(tail) {
  const std::size_t n = nodes_.size();
  if (head_ >= n || tail_ >= n) throw ContractError("ComputationGraph: target index out of range");
  local_.reserve(n);
  for (LocalIndex i = 0; i < n; ++i) {
    if (!local_.emplace(nodes_[i], i).second) throw ContractError("ComputationGraph: duplicate node");
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(edges_.size());
  for (const auto& e : edges_) {
    if (e.head >= n || e.tail >= n) throw ContractError("ComputationGraph: edge endpoint out of range");
    pairs.emplace_back(e.head, e.tail);
  }
  auto pattern = std::make_shared<CsrPattern>(CsrPattern::from_pairs(n, n, std::move(pairs)));
  edge_pairs_.resize(edges_.size());
  for (std::size_t k = 0; k < edges_.size(); ++k)
    edge_pairs_[k] = static_cast<std::uint32_t>(*pattern->find(edges_[k].head, edges_[k].tail));
  adjacency_ = std::move(pattern);
}

std::optional<LocalIndex> ComputationGraph::local_of(EntityId e) const {
  auto it = local_.find(e);
  if (it == local_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> ComputationGraph::undirected_degrees() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> und;
  und.reserve(2 * edges_.size());
  for (const auto& e : edges_) {
    if (e.head == e.tail) continue;
    und.emplace_back(e.head, e.tail);
    und.emplace_back(e.tail, e.head);
  }
  std::sort(und.begin(), und.end());
  und.erase(std::unique(und.begin(), und.end()), und.end());
  std::vector<std::size_t> deg(nodes_.size(), 0);
  for (const auto& p : und) ++deg[p.first];
  return deg;
}

ComputationGraph ComputationGraph::without_edges(std::span<const std::size_t> edge_positions) const {
  std::vector<bool> drop(edges_.size(), false);
  for (std::size_t p : edge_positions) {
    if (p >= edges_.size()) throw ContractError("without_edges: edge position out of range");
    drop[p] = true;
  }
  std::vector<LocalEdge> kept;
  kept.reserve(edges_.size());
  for (std::size_t k = 0; k < edges_.size(); ++k)
    if (!drop[k]) kept.push_back(edges_[k]);
  return ComputationGraph(nodes_, std::move(kept), head_, tail_);
}

ComputationGraph ComputationGraph::without_triple(const Triple& t) const {
  std::vector<std::size_t> hits;
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const auto& e = edges_[k];
    if (nodes_[e.head] == t.head && e.relation == t.relation && nodes_[e.tail] == t.tail) hits.push_back(k);
  }
  return without_edges(hits);
}

// ---------------------------------------------------------------------------
// Extraction and pruning

namespace {

std::unordered_map<EntityId, std::size_t> undirected_ball(const KnowledgeGraph& g, EntityId source,
                                                          std::size_t hops) {
  std::unordered_map<EntityId, std::size_t> dist{{source, 0}};
  std::deque<EntityId> queue{source};
  const auto& triples = g.triples();
  while (!queue.empty()) {
    const EntityId u = queue.front();
    queue.pop_front();
    const std::size_t du = dist[u];
    if (du == hops) continue;
    auto visit = [&](EntityId v) {
      if (dist.emplace(v, du + 1).second) queue.push_back(v);
    };
    for (std::size_t k : g.out_triples(u)) visit(triples[k].tail);
    for (std::size_t k : g.in_triples(u)) visit(triples[k].head);
  }
  return dist;
}

}  // namespace

ComputationGraph extract_computation_graph(const KnowledgeGraph& g, const Triple& target,
                                           std::size_t hops, std::size_t max_nodes) {
  if (hops < 1) throw ContractError("extract_computation_graph: hops must be >= 1");
  if (max_nodes < 2) throw ContractError("extract_computation_graph: max_nodes must be >= 2");
  if (target.head >= g.num_entities() || target.tail >= g.num_entities())
    throw ContractError("extract_computation_graph: target entity out of range");

  auto from_head = undirected_ball(g, target.head, hops);
  auto from_tail = undirected_ball(g, target.tail, hops);
  std::map<EntityId, std::size_t> dist(from_head.begin(), from_head.end());
  for (const auto& [e, d] : from_tail) {
    auto [it, inserted] = dist.emplace(e, d);
    if (!inserted) it->second = std::min(it->second, d);
  }

  std::vector<std::pair<std::size_t, EntityId>> order;
  order.reserve(dist.size());
  for (const auto& [e, d] : dist) order.emplace_back(d, e);
  std::sort(order.begin(), order.end());
  if (order.size() > max_nodes) order.resize(max_nodes);

  std::vector<EntityId> nodes;
  nodes.reserve(order.size());
  std::unordered_map<EntityId, LocalIndex> local;
  for (const auto& [d, e] : order) {
    local.emplace(e, static_cast<LocalIndex>(nodes.size()));
    nodes.push_back(e);
  }

  std::vector<LocalEdge> edges;
  const auto& triples = g.triples();
  for (EntityId u : nodes) {
    for (std::size_t k : g.out_triples(u)) {
      auto it = local.find(triples[k].tail);
      if (it == local.end()) continue;
      edges.push_back({local.at(u), triples[k].relation, it->second, k});
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const LocalEdge& a, const LocalEdge& b) { return a.triple_index < b.triple_index; });
  return ComputationGraph(std::move(nodes), std::move(edges), local.at(target.head), local.at(target.tail));
}

ComputationGraph k_core_prune(const ComputationGraph& gc, std::size_t k) {
  const std::size_t n = gc.num_nodes();
  std::vector<std::vector<LocalIndex>> nbrs(n);
  for (const auto& e : gc.edges()) {
    if (e.head == e.tail) continue;
    nbrs[e.head].push_back(e.tail);
    nbrs[e.tail].push_back(e.head);
  }
  std::vector<std::size_t> deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = nbrs[i];
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    deg[i] = v.size();
  }
  auto is_target = [&](std::size_t i) { return i == gc.head_index() || i == gc.tail_index(); };

  std::vector<bool> alive(n, true);
  std::deque<LocalIndex> queue;
  for (LocalIndex i = 0; i < n; ++i)
    if (deg[i] < k && !is_target(i)) {
      alive[i] = false;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const LocalIndex u = queue.front();
    queue.pop_front();
    for (LocalIndex v : nbrs[u]) {
      if (!alive[v]) continue;
      if (--deg[v] < k && !is_target(v)) {
        alive[v] = false;
        queue.push_back(v);
      }
    }
  }

  std::vector<LocalIndex> remap(n, static_cast<LocalIndex>(-1));
  std::vector<EntityId> nodes;
  for (LocalIndex i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    remap[i] = static_cast<LocalIndex>(nodes.size());
    nodes.push_back(gc.global_of(i));
  }
  std::vector<LocalEdge> edges;
  for (const auto& e : gc.edges())
    if (alive[e.head] && alive[e.tail]) edges.push_back({remap[e.head], e.relation, remap[e.tail], e.triple_index});
  return ComputationGraph(std::move(nodes), std::move(edges), remap[gc.head_index()], remap[gc.tail_index()]);
}

std::vector<std::vector<std::uint64_t>> adjacency_power_row(const ComputationGraph& gc, LocalIndex start,
                                                            std::size_t max_len) {
  if (start >= gc.num_nodes()) throw ContractError("adjacency_power_row: start out of range");
  if (max_len < 1) throw ContractError("adjacency_power_row: max_len must be >= 1");
  const CsrPattern& a = gc.adjacency();
  std::vector<std::vector<std::uint64_t>> rows;
  rows.reserve(max_len);
  std::vector<std::uint64_t> cur(gc.num_nodes(), 0);
  for (std::uint32_t j : a.row(start)) cur[j] = 1;
  rows.push_back(cur);
  for (std::size_t l = 2; l <= max_len; ++l) {
    std::vector<std::uint64_t> next(gc.num_nodes(), 0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      if (cur[i] == 0) continue;
      for (std::uint32_t j : a.row(i)) {
        if (__builtin_add_overflow(next[j], cur[i], &next[j]))
          throw NumericError("adjacency_power_row: walk count overflow at length " + std::to_string(l));
      }
    }
    cur = std::move(next);
    rows.push_back(cur);
  }
  return rows;
}

}  // namespace powerlink
