#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "powerlink/explainer.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/metrics.hpp"
#include "powerlink/model.hpp"

namespace powerlink {

// Relation ids used by planted instances.
inline constexpr RelationId kTargetRelation = 0;
inline constexpr RelationId kPathRelation = 1;

struct PlantedConfig {
  std::size_t n_entities = 60;
  std::size_t n_relations = 5;
  std::size_t n_planted_paths = 2;
  std::size_t path_len = 3;
  std::size_t n_distractors = 40;
  /// Extra head->tail paths of the same length built from distractor relations.
  std::size_t n_decoy_paths = 0;
  /// Other (x, target-relation, y) pairs joined by a path-relation chain, so a
  /// trained model associates the two relations.
  std::size_t n_rule_examples = 6;
  std::uint64_t seed = 0;
};

struct PlantedInstance {
  KnowledgeGraph graph;
  TargetTriple target;
  std::vector<std::vector<Triple>> planted_paths;
  std::vector<std::vector<Triple>> decoy_paths;
  std::vector<Triple> distractor_edges;
  std::uint64_t seed = 0;
};

/// Node-disjoint planted head->tail chains over the path relation, the target
/// triple under the target relation, and distractor triples that never open a
/// head->tail route shorter than `path_len` (checked by breadth-first search).
PlantedInstance generate_planted(const PlantedConfig& config);

/// Undirected hop distance between two entities ignoring triple `skip`;
/// nullopt when unreachable.
std::optional<std::size_t> undirected_distance(const KnowledgeGraph& g, EntityId from, EntityId to,
                                               const std::optional<Triple>& skip = std::nullopt);

enum class SuiteMode { kFull, kNoPath, kNoMi };
std::string to_string(SuiteMode m);
SuiteMode suite_mode_from_string(std::string_view s);  // "full", "no_path", "no_mi"

struct SuiteConfig {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  PlantedConfig planted;
  // Planted graphs are small; longer training with held-out positives keeps the
  // model from memorising the target through its own edge.
  TrainConfig train = {.shape = {}, .epochs = 600, .lr = 1.0, .holdout = 0.3};
  PipelineConfig pipeline;
  std::vector<SuiteMode> modes = {SuiteMode::kFull, SuiteMode::kNoPath, SuiteMode::kNoMi};
  std::size_t workers = 1;
};

/// Flat keys (see README). Unknown keys raise ContractError.
SuiteConfig suite_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SuiteConfig& c);
/// Reads a JSON object or `key = value` lines (# comments allowed).
SuiteConfig load_suite_config(const std::filesystem::path& path);

struct InstanceOutcome {
  std::size_t instance = 0;
  std::uint64_t seed = 0;
  SuiteMode mode = SuiteMode::kFull;
  bool top1_planted = false;
  double precision = 0.0;  // planted paths among the top-K returned, K = planted count
  double recall = 0.0;     // planted paths recovered within the top-K
  std::size_t gc_nodes = 0;
  std::size_t gc_edges = 0;
  TargetMetrics metrics;
  nlohmann::json explanation;
};

struct ModeSummary {
  SuiteMode mode = SuiteMode::kFull;
  double recovery = 0.0;  // share of instances whose top-1 path is planted
  double precision = 0.0;
  double recall = 0.0;
  MetricReport report;
};

struct SuiteReport {
  std::vector<InstanceOutcome> outcomes;  // instance-major, modes in config order
  std::vector<ModeSummary> summaries;
};

/// Precision/recall of `paths` against the planted chains at cutoff K.
std::pair<double, double> path_recovery(const std::vector<ExplanationPath>& paths,
                                        const std::vector<std::vector<Triple>>& planted);

SuiteReport run_suite(const SuiteConfig& config);

/// config.json, instances/<i>_<mode>.json, suite.csv, summary.json.
void write_suite_outputs(const std::filesystem::path& dir, const SuiteConfig& config, const SuiteReport& report);

nlohmann::json to_json(const ModeSummary& s);

}  // namespace powerlink
