#include "powerlink/report.hpp"

#include <map>
#include <sstream>

namespace powerlink {

namespace {

const char* const kPalette[] = {"#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#e377c2"};

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

}  // namespace

nlohmann::json triple_to_json(const Triple& t, const KnowledgeGraph& g) {
  return {{"head", g.entities().name(t.head)},
          {"relation", g.relations().name(t.relation)},
          {"tail", g.entities().name(t.tail)},
          {"ids", {t.head, t.relation, t.tail}}};
}

nlohmann::json explanation_to_json(const Explanation& e, const KnowledgeGraph& g, const nlohmann::json& config) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : e.paths) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& pe : p.edges) {
      auto j = triple_to_json(pe.triple, g);
      j["score"] = pe.score;
      edges.push_back(std::move(j));
    }
    paths.push_back({{"length", p.length()}, {"mean_score", p.mean_score}, {"triples", std::move(edges)}});
  }
  nlohmann::json trace = nlohmann::json::array();
  for (std::size_t i = 0; i < e.trace.size(); ++i) {
    const auto& t = e.trace[i];
    trace.push_back({{"epoch", i + 1},
                     {"prediction", t.prediction},
                     {"path", t.path},
                     {"regularization", t.regularization},
                     {"total", t.total}});
  }
  auto target = triple_to_json(e.target.triple, g);
  target["label"] = e.target.label == Label::kFactual ? "factual" : "counterfactual";
  return {{"target", std::move(target)},
          {"paths", std::move(paths)},
          {"num_mask_entries", e.mask.size()},
          {"loss_trace", std::move(trace)},
          {"config", config}};
}

std::string explanation_to_dot(const Explanation& e, const ComputationGraph& gc, const KnowledgeGraph& g) {
  std::map<std::size_t, std::size_t> path_of_edge;
  for (std::size_t i = 0; i < e.paths.size(); ++i)
    for (const auto& pe : e.paths[i].edges) path_of_edge.emplace(pe.edge_position, i);

  std::ostringstream out;
  out << "digraph explanation {\n  rankdir=LR;\n  node [shape=ellipse, fontsize=10];\n";
  for (std::size_t i = 0; i < gc.num_nodes(); ++i) {
    const EntityId id = gc.global_of(static_cast<LocalIndex>(i));
    out << "  n" << i << " [label=" << quoted(g.entities().name(id));
    if (id == e.target.triple.head || id == e.target.triple.tail) out << ", style=bold";
    out << "];\n";
  }
  for (std::size_t k = 0; k < gc.num_edges(); ++k) {
    const auto& le = gc.edges()[k];
    out << "  n" << le.head << " -> n" << le.tail << " [label=" << quoted(g.relations().name(le.relation));
    auto it = path_of_edge.find(k);
    if (it != path_of_edge.end())
      out << ", color=" << quoted(kPalette[it->second % std::size(kPalette)]) << ", penwidth=2";
    else
      out << ", color=\"#cccccc\", fontcolor=\"#999999\"";
    out << "];\n";
  }
  auto h = gc.local_of(e.target.triple.head);
  auto t = gc.local_of(e.target.triple.tail);
  if (h && t)
    out << "  n" << *h << " -> n" << *t << " [label=" << quoted(g.relations().name(e.target.triple.relation))
        << ", style=dashed, color=red, fontcolor=red];\n";
  out << "}\n";
  return out.str();
}

}  // namespace powerlink
