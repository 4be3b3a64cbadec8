#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <tuple>
#include <vector>

#include "powerlink/error.hpp"
#include "powerlink/explainer.hpp"
#include "powerlink/harness.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/metrics.hpp"
#include "powerlink/model.hpp"
#include "powerlink/report.hpp"

namespace py = pybind11;
using namespace powerlink;

namespace {

using NamedTriple = std::tuple<std::string, std::string, std::string>;

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(to_py(v));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (auto it = j.begin(); it != j.end(); ++it) out[py::str(it.key())] = to_py(it.value());
      return out;
    }
    default: return py::none();
  }
}

nlohmann::json from_py(const py::handle& o) {
  if (o.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(o)) return o.cast<bool>();
  if (py::isinstance<py::int_>(o)) return o.cast<std::int64_t>();
  if (py::isinstance<py::float_>(o)) return o.cast<double>();
  if (py::isinstance<py::str>(o)) return o.cast<std::string>();
  if (py::isinstance<py::dict>(o)) {
    nlohmann::json out = nlohmann::json::object();
    for (auto kv : o.cast<py::dict>()) out[kv.first.cast<std::string>()] = from_py(kv.second);
    return out;
  }
  if (py::isinstance<py::list>(o) || py::isinstance<py::tuple>(o)) {
    nlohmann::json out = nlohmann::json::array();
    for (auto v : o) out.push_back(from_py(v));
    return out;
  }
  throw py::type_error("unsupported value in configuration");
}

KnowledgeGraph graph_from_names(const std::vector<NamedTriple>& rows) {
  Vocabulary ents, rels;
  std::vector<Triple> triples;
  triples.reserve(rows.size());
  for (const auto& [h, r, t] : rows) {
    const EntityId hi = ents.intern(h);
    const RelationId ri = rels.intern(r);
    triples.push_back({hi, ri, ents.intern(t)});
  }
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  return KnowledgeGraph(std::move(ents), std::move(rels), std::move(triples));
}

Triple lookup(const KnowledgeGraph& g, const std::string& h, const std::string& r, const std::string& t) {
  auto find = [](const Vocabulary& v, const std::string& name, const char* what) {
    if (auto id = v.find(name)) return *id;
    throw ContractError(std::string("unknown ") + what + " '" + name + "'");
  };
  return {find(g.entities(), h, "entity"), find(g.relations(), r, "relation"), find(g.entities(), t, "entity")};
}

PipelineConfig pipeline_from(const py::kwargs& kw) {
  PipelineConfig c;
  for (auto item : kw) {
    const auto key = item.first.cast<std::string>();
    const auto v = item.second;
    if (key == "k_hop") c.hops = v.cast<std::size_t>();
    else if (key == "max_nodes") c.max_nodes = v.cast<std::size_t>();
    else if (key == "k_core") c.k_core = v.cast<std::size_t>();
    else if (key == "num_paths") c.num_paths = v.cast<std::size_t>();
    else if (key == "epochs") c.explainer.epochs = v.cast<std::size_t>();
    else if (key == "lr") c.explainer.lr = v.cast<double>();
    else if (key == "gamma") c.explainer.gamma = v.cast<double>();
    else if (key == "power_order") c.explainer.power_order = v.cast<std::size_t>();
    else if (key == "combine") c.explainer.combine = combine_from_string(v.cast<std::string>());
    else if (key == "seed") c.explainer.seed = v.cast<std::uint64_t>();
    else if (key == "path_loss") c.explainer.path_loss = v.cast<bool>();
    else if (key == "mi_loss") c.explainer.mi_loss = v.cast<bool>();
    else throw ContractError("unknown explainer option '" + key + "'");
  }
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Path-based explanations for knowledge graph completion models";

  static py::exception<Error> base(m, "PowerlinkError");
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());

  py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
      .def(py::init(&graph_from_names), py::arg("triples"),
           "Builds a graph from (head, relation, tail) name triples; duplicates are dropped.")
      .def_static("load", [](const std::filesystem::path& p) { return load_triples(p); }, py::arg("path"))
      .def_property_readonly("num_entities", &KnowledgeGraph::num_entities)
      .def_property_readonly("num_relations", &KnowledgeGraph::num_relations)
      .def_property_readonly("num_triples", &KnowledgeGraph::num_triples)
      .def("entity_names", [](const KnowledgeGraph& g) { return g.entities().names(); })
      .def("relation_names", [](const KnowledgeGraph& g) { return g.relations().names(); })
      .def("triples",
           [](const KnowledgeGraph& g) {
             std::vector<NamedTriple> out;
             for (const auto& t : g.triples())
               out.emplace_back(g.entities().name(t.head), g.relations().name(t.relation), g.entities().name(t.tail));
             return out;
           })
      .def("__len__", &KnowledgeGraph::num_triples);

  py::class_<KgcModel>(m, "Model")
      .def_property_readonly("dim", &KgcModel::dim)
      .def_property_readonly("decoder", [](const KgcModel& k) { return to_string(k.decoder()); })
      .def("save", [](const KgcModel& k, const std::filesystem::path& p, const KnowledgeGraph& g) { save_checkpoint(p, k, g); },
           py::arg("path"), py::arg("graph"))
      .def_static("load", [](const std::filesystem::path& p, const KnowledgeGraph& g) { return load_checkpoint(p, g); },
                  py::arg("path"), py::arg("graph"))
      .def(
          "score",
          [](const KgcModel& k, const KnowledgeGraph& g, const std::string& h, const std::string& r,
             const std::string& t, const py::kwargs& kw) {
            const Triple tr = lookup(g, h, r, t);
            const ComputationGraph gc = prepare_graph(g, tr, pipeline_from(kw));
            const TripleScore s = score_target(k, gc, {tr, Label::kFactual});
            return py::make_tuple(s.raw, s.probability);
          },
          py::arg("graph"), py::arg("head"), py::arg("relation"), py::arg("tail"),
          "(raw, probability) of the triple on its prepared computation graph.");

  m.def(
      "train",
      [](const KnowledgeGraph& g, std::size_t dim, std::size_t layers, std::size_t basis, const std::string& decoder,
         std::size_t epochs, double lr, std::size_t negatives, double holdout, std::uint64_t seed) {
        TrainConfig c;
        c.shape = {dim, layers, basis, decoder_from_string(decoder)};
        c.epochs = epochs;
        c.lr = lr;
        c.negatives = negatives;
        c.holdout = holdout;
        c.seed = seed;
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train_kgc(g, c);
        }();
        return py::make_tuple(std::move(r.model), r.loss_trace);
      },
      py::arg("graph"), py::arg("dim") = 16, py::arg("layers") = 2, py::arg("basis") = 4,
      py::arg("decoder") = "DistMult", py::arg("epochs") = 200, py::arg("lr") = 0.5, py::arg("negatives") = 4,
      py::arg("holdout") = 0.0, py::arg("seed") = 0, "Returns (model, loss_trace).");

  m.def(
      "explain",
      [](const KgcModel& k, const KnowledgeGraph& g, const std::string& h, const std::string& r, const std::string& t,
         bool factual, const py::kwargs& kw) {
        const PipelineConfig pc = pipeline_from(kw);
        const TargetTriple target{lookup(g, h, r, t), factual ? Label::kFactual : Label::kCounterfactual};
        PipelineResult res = [&] {
          py::gil_scoped_release release;
          return explain_target(k, g, target, pc);
        }();
        py::dict out = to_py(explanation_to_json(res.explanation, g, nlohmann::json::object())).cast<py::dict>();
        out["dot"] = explanation_to_dot(res.explanation, res.gc, g);
        return out;
      },
      py::arg("model"), py::arg("graph"), py::arg("head"), py::arg("relation"), py::arg("tail"),
      py::arg("factual") = true,
      "Explains one triple. Keyword options: k_hop, max_nodes, k_core, num_paths, epochs, lr, gamma, "
      "power_order, combine, seed, path_loss, mi_loss.");

  m.def(
      "evaluate",
      [](const KgcModel& k, const KnowledgeGraph& g, const std::vector<NamedTriple>& candidates,
         std::size_t sample_num, const std::string& threshold, std::size_t workers, const py::kwargs& kw) {
        BatchConfig bc;
        bc.pipeline = pipeline_from(kw);
        bc.sample_count = sample_num;
        bc.rule = threshold_rule_from_string(threshold);
        bc.seed = bc.pipeline.explainer.seed;
        bc.workers = workers;
        std::vector<Triple> ts;
        for (const auto& [h, r, t] : candidates) ts.push_back(lookup(g, h, r, t));
        BatchResult res = [&] {
          py::gil_scoped_release release;
          return evaluate_batch(k, g, ts, bc);
        }();
        nlohmann::json j = to_json(res.report);
        j["candidates"] = res.candidates;
        j["explainable"] = res.explainable;
        return to_py(j);
      },
      py::arg("model"), py::arg("graph"), py::arg("candidates"), py::arg("sample_num") = 500,
      py::arg("threshold") = "prob", py::arg("workers") = 1);

  m.def(
      "generate_planted",
      [](const py::kwargs& kw) {
        nlohmann::json j = nlohmann::json::object();
        for (auto item : kw) j[item.first.cast<std::string>()] = from_py(item.second);
        PlantedConfig c = suite_config_from_json(j).planted;
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        PlantedInstance inst = generate_planted(c);
        const auto& g = inst.graph;
        auto named = [&](const Triple& t) {
          return NamedTriple{g.entities().name(t.head), g.relations().name(t.relation), g.entities().name(t.tail)};
        };
        auto chains = [&](const std::vector<std::vector<Triple>>& ps) {
          std::vector<std::vector<NamedTriple>> out;
          for (const auto& p : ps) {
            out.emplace_back();
            for (const auto& t : p) out.back().push_back(named(t));
          }
          return out;
        };
        py::dict out;
        out["target"] = named(inst.target.triple);
        out["planted_paths"] = chains(inst.planted_paths);
        out["decoy_paths"] = chains(inst.decoy_paths);
        out["graph"] = py::cast(std::move(inst.graph));
        return out;
      },
      "Planted-path instance; keyword options are the planted keys of the suite config plus seed.");

  m.def(
      "run_suite",
      [](const py::dict& config) {
        const SuiteConfig c = suite_config_from_json(from_py(config));
        SuiteReport r = [&] {
          py::gil_scoped_release release;
          return run_suite(c);
        }();
        nlohmann::json out = {{"config", to_json(c)}, {"summaries", nlohmann::json::array()}};
        for (const auto& s : r.summaries) out["summaries"].push_back(to_json(s));
        return to_py(out);
      },
      py::arg("config") = py::dict());

  m.def(
      "on_path_probability",
      [](std::size_t num_nodes, const std::vector<std::tuple<LocalIndex, LocalIndex, double>>& edges, LocalIndex head,
         LocalIndex tail, std::size_t power_order) {
        std::vector<EntityId> nodes(num_nodes);
        for (std::size_t i = 0; i < num_nodes; ++i) nodes[i] = static_cast<EntityId>(i);
        std::vector<LocalEdge> local;
        std::vector<double> scores;
        for (std::size_t k = 0; k < edges.size(); ++k) {
          const auto& [a, b, s] = edges[k];
          local.push_back({a, 0, b, k});
          scores.push_back(s);
        }
        const ComputationGraph gc(std::move(nodes), std::move(local), head, tail);
        return on_path_probability(EdgeScoreMatrix::from_edge_scores(gc, scores), gc, power_order);
      },
      py::arg("num_nodes"), py::arg("edges"), py::arg("head"), py::arg("tail"), py::arg("power_order") = 3,
      "P_on for a small weighted graph given as (i, j, score) edges.");

  m.def("path_loss", &path_loss, py::arg("p_on"));
}
