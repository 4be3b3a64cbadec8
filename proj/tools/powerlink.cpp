// powerlink: train a KGC model, explain its predictions with paths, score the
// explanations, and run the planted-path suite.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "powerlink/error.hpp"
#include "powerlink/explainer.hpp"
#include "powerlink/harness.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/metrics.hpp"
#include "powerlink/model.hpp"
#include "powerlink/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace powerlink;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Name first, then a bare numeric id.
std::uint32_t resolve(const Vocabulary& vocab, const std::string& what, const std::string& key) {
  if (auto id = vocab.find(key)) return *id;
  if (!key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const unsigned long long id = std::stoull(key);
    if (id < vocab.size()) return static_cast<std::uint32_t>(id);
  }
  std::vector<std::pair<std::size_t, std::string>> near;
  for (const auto& name : vocab.names()) near.emplace_back(edit_distance(key, name), name);
  const std::size_t keep = std::min<std::size_t>(3, near.size());
  std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(keep), near.end());
  std::string msg = "unknown " + what + " '" + key + "'";
  if (keep > 0) {
    msg += "; nearest matches:";
    for (std::size_t i = 0; i < keep; ++i) msg += (i ? ", " : " ") + near[i].second;
  }
  throw UsageError(msg);
}

Dataset read_dataset(const fs::path& p) {
  if (!fs::exists(p)) throw UsageError("dataset not found: " + p.string());
  if (fs::is_directory(p)) return load_dataset(p);
  return Dataset{load_triples(p), {}, {}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

// Options shared by explain and evaluate. Presets fill only what the user
// left unset (flags and POWERLINK_* variables win).
struct ExplainOptions {
  std::string preset = "dense";
  std::size_t k_hop = 1;
  std::size_t max_nodes = 1000;
  std::size_t k_core = 2;
  std::size_t num_paths = 5;
  std::size_t epochs = 50;
  double lr = 0.005;
  double gamma = 0.03;
  std::size_t power_order = 3;
  std::string combine = "concatenation";
  std::uint64_t seed = 0;
  bool no_path_loss = false;
  bool no_mi_loss = false;
  CLI::Option* k_hop_opt = nullptr;
  CLI::Option* max_nodes_opt = nullptr;

  void add_to(CLI::App& app) {
    app.add_option("--preset", preset, "dense (k_hop 1, max_nodes 1000) or sparse (k_hop 3, max_nodes 2000)")
        ->check(CLI::IsMember({"dense", "sparse"}))
        ->envname("POWERLINK_PRESET");
    k_hop_opt = app.add_option("--k_hop,--k-hop", k_hop, "ego-graph radius")->envname("POWERLINK_K_HOP");
    max_nodes_opt =
        app.add_option("--max_nodes,--max-nodes", max_nodes, "computation graph node cap")->envname("POWERLINK_MAX_NODES");
    app.add_option("--k_core,--k-core", k_core, "k-core pruning level")->capture_default_str()->envname("POWERLINK_K_CORE");
    app.add_option("--num_paths,--num-paths", num_paths, "paths to extract")
        ->capture_default_str()
        ->envname("POWERLINK_NUM_PATHS");
    app.add_option("--epochs", epochs, "explainer epochs")->capture_default_str()->envname("POWERLINK_EPOCHS");
    app.add_option("--lr", lr, "explainer learning rate")->capture_default_str()->envname("POWERLINK_LR");
    app.add_option("--gamma", gamma, "mask regularisation weight")->capture_default_str()->envname("POWERLINK_GAMMA");
    app.add_option("--power_order,--power-order", power_order, "maximum path length L")
        ->capture_default_str()
        ->envname("POWERLINK_POWER_ORDER");
    app.add_option("--combine", combine, "concatenation or euclidean")
        ->capture_default_str()
        ->envname("POWERLINK_COMBINE");
    app.add_option("--seed", seed, "random seed")->capture_default_str()->envname("POWERLINK_SEED");
    app.add_flag("--no-path-loss,--no_path_loss", no_path_loss, "train with the prediction loss only");
    app.add_flag("--no-mi-loss,--no_mi_loss", no_mi_loss, "train with the path loss only");
  }

  bool sparse() const { return preset == "sparse"; }

  PipelineConfig resolve() {
    if (sparse()) {
      if (k_hop_opt->count() == 0) k_hop = 3;
      if (max_nodes_opt->count() == 0) max_nodes = 2000;
    }
    PipelineConfig c;
    c.hops = k_hop;
    c.max_nodes = max_nodes;
    c.k_core = k_core;
    c.num_paths = num_paths;
    c.explainer.epochs = epochs;
    c.explainer.lr = lr;
    c.explainer.gamma = gamma;
    c.explainer.power_order = power_order;
    c.explainer.combine = combine_from_string(combine);
    c.explainer.seed = seed;
    c.explainer.path_loss = !no_path_loss;
    c.explainer.mi_loss = !no_mi_loss;
    if (c.num_paths < 1) throw UsageError("num_paths must be at least 1");
    validate(c.explainer);
    return c;
  }
};

json pipeline_json(const PipelineConfig& c) {
  const auto& e = c.explainer;
  return {{"k_hop", c.hops},
          {"max_nodes", c.max_nodes},
          {"k_core", c.k_core},
          {"num_paths", c.num_paths},
          {"epochs", e.epochs},
          {"lr", e.lr},
          {"gamma", e.gamma},
          {"power_order", e.power_order},
          {"combine", to_string(e.combine)},
          {"seed", e.seed},
          {"path_loss", e.path_loss},
          {"mi_loss", e.mi_loss}};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string out_dir;
  std::size_t dim = 16;
  std::size_t layers = 2;
  std::size_t basis = 4;
  std::string decoder = "DistMult";
  std::size_t epochs = 200;
  double lr = 0.5;
  std::size_t negatives = 4;
  double holdout = 0.0;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  TrainConfig c;
  c.shape.dim = a.dim;
  c.shape.layers = a.layers;
  c.shape.basis = a.basis;
  c.shape.decoder = decoder_from_string(a.decoder);
  c.epochs = a.epochs;
  c.lr = a.lr;
  c.negatives = a.negatives;
  c.holdout = a.holdout;
  c.seed = a.seed;

  fs::create_directories(a.out_dir);
  write_json(fs::path(a.out_dir) / "config.json",
             {{"command", "train"},
              {"dataset", a.dataset},
              {"dim", c.shape.dim},
              {"layers", c.shape.layers},
              {"basis", c.shape.basis},
              {"decoder", to_string(c.shape.decoder)},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"negatives", c.negatives},
              {"holdout", c.holdout},
              {"seed", c.seed}});

  const Dataset ds = read_dataset(a.dataset);
  const TrainResult r = train_kgc(ds.train, c);
  save_checkpoint(fs::path(a.out_dir) / "model.plnk", r.model, ds.train);
  write_json(fs::path(a.out_dir) / "train_log.json",
             {{"entities", ds.train.num_entities()},
              {"relations", ds.train.num_relations()},
              {"triples", ds.train.num_triples()},
              {"duplicates_dropped", ds.train.duplicates_dropped()},
              {"final_loss", r.final_loss},
              {"loss_trace", r.loss_trace}});
  std::printf("trained on %zu triples, final loss %.6f\n", ds.train.num_triples(), r.final_loss);
  return 0;
}

struct ExplainArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out_dir;
  std::string head, relation, tail;
  std::string label = "factual";
  bool dot = false;
  ExplainOptions opts;
};

int run_explain(ExplainArgs& a) {
  const PipelineConfig pc = a.opts.resolve();
  if (a.label != "factual" && a.label != "counterfactual")
    throw UsageError("label must be factual or counterfactual");
  fs::create_directories(a.out_dir);
  json cfg = pipeline_json(pc);
  cfg["command"] = "explain";
  cfg["dataset"] = a.dataset;
  cfg["checkpoint"] = a.checkpoint;
  cfg["preset"] = a.opts.preset;
  cfg["target"] = {a.head, a.relation, a.tail};
  cfg["label"] = a.label;
  write_json(fs::path(a.out_dir) / "config.json", cfg);

  require_file(a.checkpoint, "checkpoint");
  const Dataset ds = read_dataset(a.dataset);
  const KnowledgeGraph& g = ds.train;
  const KgcModel model = load_checkpoint(a.checkpoint, g);
  const Triple t{resolve(g.entities(), "entity", a.head), resolve(g.relations(), "relation", a.relation),
                 resolve(g.entities(), "entity", a.tail)};
  const TargetTriple target{t, a.label == "factual" ? Label::kFactual : Label::kCounterfactual};

  const PipelineResult r = explain_target(model, g, target, pc);
  write_json(fs::path(a.out_dir) / "explanation.json", explanation_to_json(r.explanation, g, cfg));
  if (a.dot) {
    std::ofstream f(fs::path(a.out_dir) / "explanation.dot", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write explanation.dot");
    f << explanation_to_dot(r.explanation, r.gc, g);
  }
  std::printf("%zu path(s) over a %zu-node, %zu-edge computation graph\n", r.explanation.paths.size(),
              r.gc.num_nodes(), r.gc.num_edges());
  return 0;
}

struct EvaluateArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out_dir;
  std::string split = "test";
  std::size_t sample_num = 500;
  std::string threshold = "prob";
  std::size_t workers = 1;
  CLI::Option* sample_opt = nullptr;
  CLI::Option* threshold_opt = nullptr;
  ExplainOptions opts;
};

int run_evaluate(EvaluateArgs& a) {
  const PipelineConfig pc = a.opts.resolve();
  if (a.opts.sparse()) {
    if (a.sample_opt->count() == 0) a.sample_num = 200;
    if (a.threshold_opt->count() == 0) a.threshold = "rank1";
  }
  if (a.sample_num < 1) throw UsageError("sample_num must be at least 1");
  if (a.workers < 1) throw UsageError("workers must be at least 1");
  BatchConfig bc;
  bc.pipeline = pc;
  bc.sample_count = a.sample_num;
  bc.rule = threshold_rule_from_string(a.threshold);
  bc.seed = a.opts.seed;
  bc.workers = a.workers;

  fs::create_directories(a.out_dir);
  json cfg = pipeline_json(pc);
  cfg["command"] = "evaluate";
  cfg["dataset"] = a.dataset;
  cfg["checkpoint"] = a.checkpoint;
  cfg["preset"] = a.opts.preset;
  cfg["split"] = a.split;
  cfg["sample_num"] = bc.sample_count;
  cfg["threshold"] = to_string(bc.rule);
  write_json(fs::path(a.out_dir) / "config.json", cfg);

  require_file(a.checkpoint, "checkpoint");
  const Dataset ds = read_dataset(a.dataset);
  const KgcModel model = load_checkpoint(a.checkpoint, ds.train);
  const std::vector<Triple>& candidates =
      a.split == "test" ? ds.test : a.split == "valid" ? ds.valid : ds.train.triples();
  if (candidates.empty()) throw DataError("split '" + a.split + "' has no triples");

  const BatchResult r = evaluate_batch(model, ds.train, candidates, bc);
  json report = to_json(r.report);
  report["candidates"] = r.candidates;
  report["explainable"] = r.explainable;
  write_json(fs::path(a.out_dir) / "metrics.json", report);
  write_metrics_csv(fs::path(a.out_dir) / "metrics.csv", r.rows);
  write_timing_csv(fs::path(a.out_dir) / "timing.csv", r.rows);
  std::printf("explained %zu of %zu explainable targets: F+ %.4f F- %.4f sparsity %.4f HdR@1 %.4f\n",
              r.report.n_samples, r.explainable, r.report.fidelity_plus, r.report.fidelity_minus,
              r.report.sparsity, r.report.h_delta_r[0]);
  return 0;
}

struct SuiteArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> instances;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::vector<std::string> sets;
};

int run_suite_cmd(const SuiteArgs& a) {
  json j = json::object();
  if (!a.config.empty()) {
    require_file(a.config, "suite config");
    j = to_json(load_suite_config(a.config));
  }
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      j[key] = json::parse(value);
    } catch (const json::parse_error&) {
      j[key] = value;
    }
  }
  if (a.instances) j["instances"] = *a.instances;
  if (a.seed) j["seed"] = *a.seed;
  if (a.workers) j["workers"] = *a.workers;
  const SuiteConfig c = suite_config_from_json(j);

  fs::create_directories(a.out_dir);
  write_json(fs::path(a.out_dir) / "config.json", to_json(c));
  const SuiteReport r = run_suite(c);
  write_suite_outputs(a.out_dir, c, r);
  for (const auto& s : r.summaries)
    std::printf("%-8s recovery %.3f precision %.3f HdR@1 %.3f\n", to_string(s.mode).c_str(), s.recovery,
                s.precision, s.report.h_delta_r[0]);
  return 0;
}

struct GenerateArgs {
  std::string out_dir;
  PlantedConfig planted;
};

int run_generate(const GenerateArgs& a) {
  const PlantedConfig& c = a.planted;
  fs::create_directories(a.out_dir);
  write_json(fs::path(a.out_dir) / "config.json",
             {{"command", "generate"},
              {"n_entities", c.n_entities},
              {"n_relations", c.n_relations},
              {"n_planted_paths", c.n_planted_paths},
              {"path_len", c.path_len},
              {"n_distractors", c.n_distractors},
              {"n_decoy_paths", c.n_decoy_paths},
              {"n_rule_examples", c.n_rule_examples},
              {"seed", c.seed}});
  const PlantedInstance inst = generate_planted(c);
  const auto& g = inst.graph;
  write_triples(fs::path(a.out_dir) / "train.txt", g, g.triples());
  const std::vector<Triple> test{inst.target.triple};
  write_triples(fs::path(a.out_dir) / "test.txt", g, test);
  auto chains = [&](const std::vector<std::vector<Triple>>& paths) {
    json out = json::array();
    for (const auto& p : paths) {
      json path = json::array();
      for (const auto& t : p) path.push_back(triple_to_json(t, g));
      out.push_back(std::move(path));
    }
    return out;
  };
  json distractors = json::array();
  for (const auto& t : inst.distractor_edges) distractors.push_back(triple_to_json(t, g));
  write_json(fs::path(a.out_dir) / "planted.json", {{"target", triple_to_json(inst.target.triple, g)},
                                                    {"planted_paths", chains(inst.planted_paths)},
                                                    {"decoy_paths", chains(inst.decoy_paths)},
                                                    {"distractors", std::move(distractors)}});
  std::printf("wrote %zu triples to %s\n", g.num_triples(), a.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Path-based explanations for knowledge graph completion models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "powerlink 0.1.0");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train an RGCN-style KGC model and write a checkpoint");
  t->add_option("--dataset", train.dataset, "triples file or directory with train.txt")->required()->envname("POWERLINK_DATASET");
  t->add_option("--out-dir,--out_dir", train.out_dir, "output directory")->required()->envname("POWERLINK_OUT_DIR");
  t->add_option("--dim", train.dim)->capture_default_str()->envname("POWERLINK_DIM");
  t->add_option("--layers", train.layers)->capture_default_str()->envname("POWERLINK_LAYERS");
  t->add_option("--basis", train.basis)->capture_default_str()->envname("POWERLINK_BASIS");
  t->add_option("--decoder", train.decoder, "TransE or DistMult")->capture_default_str()->envname("POWERLINK_DECODER");
  t->add_option("--epochs", train.epochs)->capture_default_str()->envname("POWERLINK_EPOCHS");
  t->add_option("--lr", train.lr)->capture_default_str()->envname("POWERLINK_LR");
  t->add_option("--negatives", train.negatives)->capture_default_str()->envname("POWERLINK_NEGATIVES");
  t->add_option("--holdout", train.holdout, "share of positives kept out of each epoch's message graph")
      ->capture_default_str()
      ->envname("POWERLINK_HOLDOUT");
  t->add_option("--seed", train.seed)->capture_default_str()->envname("POWERLINK_SEED");

  ExplainArgs explain;
  auto* e = app.add_subcommand("explain", "explain one target triple with paths");
  e->add_option("--dataset", explain.dataset)->required()->envname("POWERLINK_DATASET");
  e->add_option("--checkpoint", explain.checkpoint)->required()->envname("POWERLINK_CHECKPOINT");
  e->add_option("--out-dir,--out_dir", explain.out_dir)->required()->envname("POWERLINK_OUT_DIR");
  e->add_option("--head", explain.head, "entity name or id")->required();
  e->add_option("--relation", explain.relation, "relation name or id")->required();
  e->add_option("--tail", explain.tail, "entity name or id")->required();
  e->add_option("--label", explain.label, "factual or counterfactual")->capture_default_str();
  e->add_flag("--dot", explain.dot, "also write explanation.dot");
  explain.opts.add_to(*e);

  EvaluateArgs evaluate;
  auto* v = app.add_subcommand("evaluate", "explain sampled targets and report fidelity, sparsity and HdR");
  v->add_option("--dataset", evaluate.dataset)->required()->envname("POWERLINK_DATASET");
  v->add_option("--checkpoint", evaluate.checkpoint)->required()->envname("POWERLINK_CHECKPOINT");
  v->add_option("--out-dir,--out_dir", evaluate.out_dir)->required()->envname("POWERLINK_OUT_DIR");
  v->add_option("--split", evaluate.split, "test, valid or train")
      ->check(CLI::IsMember({"test", "valid", "train"}))
      ->capture_default_str();
  evaluate.sample_opt = v->add_option("--sample_num,--sample-num", evaluate.sample_num, "targets to sample")
                            ->envname("POWERLINK_SAMPLE_NUM");
  evaluate.threshold_opt = v->add_option("--threshold", evaluate.threshold, "prob (p > 0.5) or rank1")
                               ->envname("POWERLINK_THRESHOLD");
  v->add_option("--workers", evaluate.workers)->capture_default_str()->envname("POWERLINK_WORKERS");
  evaluate.opts.add_to(*v);

  SuiteArgs suite;
  auto* s = app.add_subcommand("suite", "run the planted-path suite");
  s->add_option("--config", suite.config, "JSON or key = value file")->envname("POWERLINK_SUITE_CONFIG");
  s->add_option("--out-dir,--out_dir", suite.out_dir)->required()->envname("POWERLINK_OUT_DIR");
  s->add_option("--instances", suite.instances)->envname("POWERLINK_INSTANCES");
  s->add_option("--seed", suite.seed)->envname("POWERLINK_SEED");
  s->add_option("--workers", suite.workers)->envname("POWERLINK_WORKERS");
  s->add_option("--set", suite.sets, "override one suite key, key=value");

  GenerateArgs gen;
  auto* gcmd = app.add_subcommand("generate", "write one planted instance as a dataset directory");
  gcmd->add_option("--out-dir,--out_dir", gen.out_dir)->required()->envname("POWERLINK_OUT_DIR");
  gcmd->add_option("--n_entities", gen.planted.n_entities)->capture_default_str();
  gcmd->add_option("--n_relations", gen.planted.n_relations)->capture_default_str();
  gcmd->add_option("--n_planted_paths", gen.planted.n_planted_paths)->capture_default_str();
  gcmd->add_option("--path_len", gen.planted.path_len)->capture_default_str();
  gcmd->add_option("--n_distractors", gen.planted.n_distractors)->capture_default_str();
  gcmd->add_option("--n_decoy_paths", gen.planted.n_decoy_paths)->capture_default_str();
  gcmd->add_option("--n_rule_examples", gen.planted.n_rule_examples)->capture_default_str();
  gcmd->add_option("--seed", gen.planted.seed)->capture_default_str()->envname("POWERLINK_SEED");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*t) return run_train(train);
    if (*e) return run_explain(explain);
    if (*v) return run_evaluate(evaluate);
    if (*s) return run_suite_cmd(suite);
    if (*gcmd) return run_generate(gen);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitData;
  } catch (const DataError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitData;
  } catch (const NumericError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const nlohmann::json::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
