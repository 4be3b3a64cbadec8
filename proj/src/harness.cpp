#include "powerlink/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "powerlink/error.hpp"
#include "powerlink/parallel.hpp"
#include "powerlink/report.hpp"

namespace powerlink {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Undirected adjacency that grows as triples are accepted.
class GrowingGraph {
 public:
  explicit GrowingGraph(std::size_t n) : adj_(n) {}

  void add(EntityId a, EntityId b) {
    adj_[a].push_back(b);
    adj_[b].push_back(a);
  }
  void remove_last(EntityId a, EntityId b) {
    adj_[a].pop_back();
    adj_[b].pop_back();
  }
  std::size_t distance(EntityId from, EntityId to) const {
    std::vector<std::size_t> dist(adj_.size(), kFar);
    std::deque<EntityId> q{from};
    dist[from] = 0;
    while (!q.empty()) {
      const EntityId u = q.front();
      q.pop_front();
      if (u == to) return dist[u];
      for (EntityId v : adj_[u])
        if (dist[v] == kFar) {
          dist[v] = dist[u] + 1;
          q.push_back(v);
        }
    }
    return kFar;
  }

  static constexpr std::size_t kFar = static_cast<std::size_t>(-1);

 private:
  std::vector<std::vector<EntityId>> adj_;
};

bool same_path(const ExplanationPath& p, const std::vector<Triple>& planted) {
  if (p.edges.size() != planted.size()) return false;
  for (std::size_t i = 0; i < planted.size(); ++i)
    if (p.edges[i].triple != planted[i]) return false;
  return true;
}

std::string trim(std::string s) {
  auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

nlohmann::json parse_scalar(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return v.substr(1, v.size() - 2);
  try {
    std::size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  return v;
}

}  // namespace

std::optional<std::size_t> undirected_distance(const KnowledgeGraph& g, EntityId from, EntityId to,
                                               const std::optional<Triple>& skip) {
  std::vector<std::size_t> dist(g.num_entities(), GrowingGraph::kFar);
  std::deque<EntityId> q{from};
  dist[from] = 0;
  while (!q.empty()) {
    const EntityId u = q.front();
    q.pop_front();
    if (u == to) return dist[u];
    auto visit = [&](std::size_t k, bool outgoing) {
      const Triple& t = g.triples()[k];
      if (skip && t == *skip) return;
      const EntityId v = outgoing ? t.tail : t.head;
      if (dist[v] == GrowingGraph::kFar) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
    };
    for (std::size_t k : g.out_triples(u)) visit(k, true);
    for (std::size_t k : g.in_triples(u)) visit(k, false);
  }
  return std::nullopt;
}

PlantedInstance generate_planted(const PlantedConfig& c) {
  if (c.path_len < 1 || c.path_len > 5) throw ContractError("planted path length must be between 1 and 5");
  if (c.n_planted_paths < 1) throw ContractError("at least one planted path is required");
  if (c.path_len == 1 && c.n_planted_paths > 1) throw ContractError("only one direct path can be planted");
  const bool need_noise = c.n_distractors > 0 || c.n_decoy_paths > 0;
  if (c.n_relations < (need_noise ? 3u : 2u)) throw ContractError("too few relations for the planted layout");
  if (c.n_decoy_paths > 0 && c.path_len == 1) throw ContractError("decoy paths need path length of at least 2");
  const std::size_t inner = c.path_len - 1;
  const std::size_t needed =
      2 + (c.n_planted_paths + c.n_decoy_paths) * inner + c.n_rule_examples * (c.path_len + 1);
  if (needed > c.n_entities) throw ContractError("too few entities to host the planted structure");

  std::mt19937_64 rng(c.seed);
  std::vector<EntityId> perm(c.n_entities);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t cursor = 2;
  const EntityId head = perm[0];
  const EntityId tail = perm[1];
  std::uniform_int_distribution<RelationId> noise_rel(2, static_cast<RelationId>(c.n_relations - 1));

  std::vector<Triple> triples;
  std::set<Triple> seen;
  GrowingGraph undirected(c.n_entities);
  auto add = [&](const Triple& t) {
    triples.push_back(t);
    seen.insert(t);
    undirected.add(t.head, t.tail);
  };
  auto chain = [&](EntityId from, EntityId to, bool decoy) {
    std::vector<EntityId> nodes{from};
    for (std::size_t i = 0; i < inner; ++i) nodes.push_back(perm[cursor++]);
    nodes.push_back(to);
    std::vector<Triple> path;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
      path.push_back({nodes[i], decoy ? noise_rel(rng) : kPathRelation, nodes[i + 1]});
    for (const auto& t : path) add(t);
    return path;
  };

  PlantedInstance inst{KnowledgeGraph::from_ids(1, 1, {}), {}, {}, {}, {}, c.seed};
  for (std::size_t p = 0; p < c.n_planted_paths; ++p) inst.planted_paths.push_back(chain(head, tail, false));
  for (std::size_t p = 0; p < c.n_decoy_paths; ++p) inst.decoy_paths.push_back(chain(head, tail, true));
  for (std::size_t p = 0; p < c.n_rule_examples; ++p) {
    const EntityId x = perm[cursor++];
    const EntityId y = perm[cursor++];
    chain(x, y, false);
    add({x, kTargetRelation, y});
  }

  // Distractors: half anchored on the target neighbourhood so they reach the
  // computation graph, the rest anywhere.
  std::vector<EntityId> anchors{head, tail};
  for (const auto& path : inst.planted_paths)
    for (std::size_t i = 1; i < path.size(); ++i) anchors.push_back(path[i].head);
  for (const auto& path : inst.decoy_paths)
    for (std::size_t i = 1; i < path.size(); ++i) anchors.push_back(path[i].head);
  // Planted pairs stay single-edged so a planted chain is identifiable.
  std::set<std::pair<EntityId, EntityId>> planted_pairs;
  for (const auto& path : inst.planted_paths)
    for (const auto& t : path) planted_pairs.insert(std::minmax(t.head, t.tail));
  std::uniform_int_distribution<std::size_t> any(0, c.n_entities - 1);
  std::uniform_int_distribution<std::size_t> anchor(0, anchors.size() - 1);
  std::size_t attempts = 0;
  while (inst.distractor_edges.size() < c.n_distractors) {
    if (++attempts > 200 * (c.n_distractors + 1)) throw ContractError("cannot place the requested distractors");
    EntityId a = (rng() & 1U) ? anchors[anchor(rng)] : static_cast<EntityId>(any(rng));
    EntityId b = static_cast<EntityId>(any(rng));
    if (rng() & 1U) std::swap(a, b);
    const Triple t{a, noise_rel(rng), b};
    if (a == b || seen.count(t) || planted_pairs.count(std::minmax(a, b))) continue;
    undirected.add(a, b);
    const bool shortcut = undirected.distance(head, tail) < c.path_len;
    undirected.remove_last(a, b);
    if (shortcut) continue;
    add(t);
    inst.distractor_edges.push_back(t);
  }

  const Triple target{head, kTargetRelation, tail};
  triples.push_back(target);

  std::vector<std::string> ent_names, rel_names{"predicts", "explains"};
  for (std::size_t i = 0; i < c.n_entities; ++i) ent_names.push_back("e" + std::to_string(i));
  for (std::size_t r = 2; r < c.n_relations; ++r) rel_names.push_back("noise" + std::to_string(r - 1));
  inst.graph = KnowledgeGraph(Vocabulary(std::move(ent_names)), Vocabulary(std::move(rel_names)), std::move(triples));
  inst.target = {target, Label::kFactual};
  return inst;
}

std::string to_string(SuiteMode m) {
  switch (m) {
    case SuiteMode::kFull: return "full";
    case SuiteMode::kNoPath: return "no_path";
    case SuiteMode::kNoMi: return "no_mi";
  }
  return "?";
}

SuiteMode suite_mode_from_string(std::string_view s) {
  if (s == "full") return SuiteMode::kFull;
  if (s == "no_path") return SuiteMode::kNoPath;
  if (s == "no_mi") return SuiteMode::kNoMi;
  throw ContractError("unknown suite mode '" + std::string(s) + "' (expected full, no_path or no_mi)");
}

SuiteConfig suite_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("suite config must be a flat object");
  SuiteConfig c;
  auto& pc = c.planted;
  auto& ec = c.pipeline.explainer;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "instances") c.instances = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "modes") {
        c.modes.clear();
        std::vector<std::string> names;
        if (v.is_array()) names = v.get<std::vector<std::string>>();
        else {
          std::stringstream ss(v.get<std::string>());
          for (std::string part; std::getline(ss, part, ',');) names.push_back(trim(part));
        }
        for (const auto& n : names) c.modes.push_back(suite_mode_from_string(n));
      }
      else if (key == "n_entities") pc.n_entities = v.get<std::size_t>();
      else if (key == "n_relations") pc.n_relations = v.get<std::size_t>();
      else if (key == "n_planted_paths") pc.n_planted_paths = v.get<std::size_t>();
      else if (key == "path_len") pc.path_len = v.get<std::size_t>();
      else if (key == "n_distractors") pc.n_distractors = v.get<std::size_t>();
      else if (key == "n_decoy_paths") pc.n_decoy_paths = v.get<std::size_t>();
      else if (key == "n_rule_examples") pc.n_rule_examples = v.get<std::size_t>();
      else if (key == "dim") c.train.shape.dim = v.get<std::size_t>();
      else if (key == "layers") c.train.shape.layers = v.get<std::size_t>();
      else if (key == "basis") c.train.shape.basis = v.get<std::size_t>();
      else if (key == "decoder") c.train.shape.decoder = decoder_from_string(v.get<std::string>());
      else if (key == "kgc_epochs") c.train.epochs = v.get<std::size_t>();
      else if (key == "kgc_lr") c.train.lr = v.get<double>();
      else if (key == "negatives") c.train.negatives = v.get<std::size_t>();
      else if (key == "holdout") c.train.holdout = v.get<double>();
      else if (key == "k_hop") c.pipeline.hops = v.get<std::size_t>();
      else if (key == "max_nodes") c.pipeline.max_nodes = v.get<std::size_t>();
      else if (key == "k_core") c.pipeline.k_core = v.get<std::size_t>();
      else if (key == "num_paths") c.pipeline.num_paths = v.get<std::size_t>();
      else if (key == "epochs") ec.epochs = v.get<std::size_t>();
      else if (key == "lr") ec.lr = v.get<double>();
      else if (key == "gamma") ec.gamma = v.get<double>();
      else if (key == "power_order") ec.power_order = v.get<std::size_t>();
      else if (key == "combine") ec.combine = combine_from_string(v.get<std::string>());
      else throw ContractError("unknown suite config key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ContractError("suite config key '" + key + "' has the wrong type");
    }
  }
  if (c.instances < 1) throw ContractError("suite needs at least one instance");
  if (c.modes.empty()) throw ContractError("suite needs at least one mode");
  return c;
}

nlohmann::json to_json(const SuiteConfig& c) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  const auto& pc = c.planted;
  const auto& ec = c.pipeline.explainer;
  return {{"instances", c.instances},
          {"seed", c.seed},
          {"workers", c.workers},
          {"modes", modes},
          {"n_entities", pc.n_entities},
          {"n_relations", pc.n_relations},
          {"n_planted_paths", pc.n_planted_paths},
          {"path_len", pc.path_len},
          {"n_distractors", pc.n_distractors},
          {"n_decoy_paths", pc.n_decoy_paths},
          {"n_rule_examples", pc.n_rule_examples},
          {"dim", c.train.shape.dim},
          {"layers", c.train.shape.layers},
          {"basis", c.train.shape.basis},
          {"decoder", to_string(c.train.shape.decoder)},
          {"kgc_epochs", c.train.epochs},
          {"kgc_lr", c.train.lr},
          {"negatives", c.train.negatives},
          {"holdout", c.train.holdout},
          {"k_hop", c.pipeline.hops},
          {"max_nodes", c.pipeline.max_nodes},
          {"k_core", c.pipeline.k_core},
          {"num_paths", c.pipeline.num_paths},
          {"epochs", ec.epochs},
          {"lr", ec.lr},
          {"gamma", ec.gamma},
          {"power_order", ec.power_order},
          {"combine", to_string(ec.combine)}};
}

SuiteConfig load_suite_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open suite config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    try {
      return suite_config_from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("suite config is not valid JSON: ") + e.what(), 0);
    }
  }
  nlohmann::json j = nlohmann::json::object();
  std::istringstream lines(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(lines, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", lineno);
    j[key] = parse_scalar(trim(line.substr(eq + 1)));
  }
  return suite_config_from_json(j);
}

std::pair<double, double> path_recovery(const std::vector<ExplanationPath>& paths,
                                        const std::vector<std::vector<Triple>>& planted) {
  if (planted.empty()) return {0.0, 0.0};
  const std::size_t k = planted.size();
  const std::size_t considered = std::min(k, paths.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < considered; ++i)
    for (const auto& p : planted)
      if (same_path(paths[i], p)) {
        ++hits;
        break;
      }
  const double precision = considered == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(considered);
  return {precision, static_cast<double>(hits) / static_cast<double>(k)};
}

SuiteReport run_suite(const SuiteConfig& config) {
  const std::size_t modes = config.modes.size();
  SuiteReport report;
  report.outcomes.resize(config.instances * modes);
  parallel_for(config.instances, config.workers, [&](std::size_t i) {
    PlantedConfig pc = config.planted;
    pc.seed = config.seed + i;
    const PlantedInstance inst = generate_planted(pc);
    TrainConfig tc = config.train;
    tc.seed = pc.seed;
    const TrainResult trained = train_kgc(inst.graph, tc);
    const ComputationGraph gc = prepare_graph(inst.graph, inst.target.triple, config.pipeline);
    for (std::size_t m = 0; m < modes; ++m) {
      PipelineConfig pcfg = config.pipeline;
      pcfg.explainer.seed = pc.seed;
      pcfg.explainer.path_loss = config.modes[m] != SuiteMode::kNoPath;
      pcfg.explainer.mi_loss = config.modes[m] != SuiteMode::kNoMi;
      const Explanation e = explain_on(trained.model, gc, inst.target, pcfg);
      InstanceOutcome& o = report.outcomes[i * modes + m];
      o.instance = i;
      o.seed = pc.seed;
      o.mode = config.modes[m];
      o.top1_planted = !e.paths.empty() && path_recovery({e.paths.front()}, inst.planted_paths).first > 0.0;
      std::tie(o.precision, o.recall) = path_recovery(e.paths, inst.planted_paths);
      o.gc_nodes = gc.num_nodes();
      o.gc_edges = gc.num_edges();
      o.metrics = evaluate_target(trained.model, gc, e);
      nlohmann::json echo = to_json(config);
      echo["instance"] = i;
      echo["mode"] = to_string(config.modes[m]);
      o.explanation = explanation_to_json(e, inst.graph, echo);
    }
  });

  for (std::size_t m = 0; m < modes; ++m) {
    ModeSummary s;
    s.mode = config.modes[m];
    std::vector<TargetMetrics> rows;
    for (std::size_t i = 0; i < config.instances; ++i) {
      const auto& o = report.outcomes[i * modes + m];
      s.recovery += o.top1_planted ? 1.0 : 0.0;
      s.precision += o.precision;
      s.recall += o.recall;
      rows.push_back(o.metrics);
    }
    const double n = static_cast<double>(config.instances);
    s.recovery /= n;
    s.precision /= n;
    s.recall /= n;
    s.report = aggregate(rows);
    report.summaries.push_back(s);
  }
  return report;
}

nlohmann::json to_json(const ModeSummary& s) {
  return {{"mode", to_string(s.mode)},
          {"recovery", s.recovery},
          {"precision", s.precision},
          {"recall", s.recall},
          {"metrics", to_json(s.report)}};
}

void write_suite_outputs(const std::filesystem::path& dir, const SuiteConfig& config, const SuiteReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "instances");
  auto write = [](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
  };
  write(dir / "config.json", to_json(config).dump(2) + "\n");
  for (const auto& o : report.outcomes) {
    char name[64];
    std::snprintf(name, sizeof name, "%03zu_%s.json", o.instance, to_string(o.mode).c_str());
    write(dir / "instances" / name, o.explanation.dump(2) + "\n");
  }

  std::ostringstream csv;
  csv << "instance,seed,mode,top1_planted,precision,recall,fidelity_plus,fidelity_minus,sparsity,hit1,hit3,hit5,"
         "gc_nodes,gc_edges,num_paths\n";
  for (const auto& o : report.outcomes) {
    csv << o.instance << ',' << o.seed << ',' << to_string(o.mode) << ',' << (o.top1_planted ? 1 : 0) << ','
        << fmt(o.precision) << ',' << fmt(o.recall) << ',' << fmt(o.metrics.fidelity_plus) << ','
        << fmt(o.metrics.fidelity_minus) << ',' << fmt(o.metrics.sparsity);
    for (bool h : o.metrics.hits) csv << ',' << (h ? 1 : 0);
    csv << ',' << o.gc_nodes << ',' << o.gc_edges << ',' << o.metrics.num_paths << '\n';
  }
  write(dir / "suite.csv", csv.str());

  std::ostringstream agg;
  agg << "mode,recovery,precision,recall,fidelity_plus,fidelity_minus,sparsity,hdr1,hdr3,hdr5,n\n";
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    agg << to_string(s.mode) << ',' << fmt(s.recovery) << ',' << fmt(s.precision) << ',' << fmt(s.recall) << ','
        << fmt(s.report.fidelity_plus) << ',' << fmt(s.report.fidelity_minus) << ',' << fmt(s.report.sparsity);
    for (double h : s.report.h_delta_r) agg << ',' << fmt(h);
    agg << ',' << s.report.n_samples << '\n';
    summary.push_back(to_json(s));
  }
  write(dir / "aggregate.csv", agg.str());
  write(dir / "summary.json", nlohmann::json{{"modes", summary}}.dump(2) + "\n");
}

}  // namespace powerlink
