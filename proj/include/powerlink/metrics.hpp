#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "powerlink/explainer.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/mask.hpp"
#include "powerlink/model.hpp"

namespace powerlink {

/// Path counts m reported by the batch evaluation.
inline constexpr std::array<std::size_t, 3> kHitLevels = {1, 3, 5};

/// |p(G_c) - p(G_c masked by 1 - M)|.
double fidelity_plus(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                     const TargetTriple& target);
/// |p(G_c masked by M) - p(G_c)|.
double fidelity_minus(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                      const TargetTriple& target);
/// 1 - mean per-edge mask value; 1 for a graph without edges.
double sparsity(const EdgeScoreMatrix& mask, const ComputationGraph& gc);

/// gc with every triple on the first min(m, |paths|) paths deleted.
ComputationGraph remove_path_edges(const ComputationGraph& gc, std::span<const ExplanationPath> paths, std::size_t m);
/// True unless the raw target score on the reduced graph exceeds the one on gc.
bool h_delta_r(const KgcModel& model, const ComputationGraph& gc, const Explanation& explanation, std::size_t m);

struct TargetMetrics {
  TargetTriple target;
  double fidelity_plus = 0.0;
  double fidelity_minus = 0.0;
  double sparsity = 0.0;
  std::array<bool, kHitLevels.size()> hits{};
  std::size_t epochs = 0;
  std::size_t num_paths = 0;
  double wall_seconds = 0.0;
};

/// All per-target metrics from one cached unmasked baseline pass.
TargetMetrics evaluate_target(const KgcModel& model, const ComputationGraph& gc, const Explanation& explanation);

struct MetricReport {
  double fidelity_plus = 0.0;
  double fidelity_minus = 0.0;
  double sparsity = 0.0;
  std::array<double, kHitLevels.size()> h_delta_r{};
  std::size_t n_samples = 0;
};

/// Ordered mean over per-target results; requires at least one.
MetricReport aggregate(std::span<const TargetMetrics> rows);

enum class ThresholdRule { kProbability, kRank1 };
std::string to_string(ThresholdRule r);
ThresholdRule threshold_rule_from_string(std::string_view s);  // "prob" / "probability", "rank1"

struct BatchConfig {
  PipelineConfig pipeline;
  std::size_t sample_count = 500;
  ThresholdRule rule = ThresholdRule::kProbability;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct BatchResult {
  MetricReport report;
  std::vector<TargetMetrics> rows;
  std::size_t candidates = 0;   // targets examined
  std::size_t explainable = 0;  // targets passing the rule
};

/// True when the model's prediction on the prepared graph passes the rule.
bool is_explainable(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target, ThresholdRule rule);

/// Selects explainable targets from `candidates`, samples `sample_count` of
/// them under the seed, explains and scores each. Results are in sample order
/// regardless of the worker count. DataError if nothing is explainable.
BatchResult evaluate_batch(const KgcModel& model, const KnowledgeGraph& g, std::span<const Triple> candidates,
                           const BatchConfig& config);

nlohmann::json to_json(const MetricReport& r);
/// Per-target rows: ids, metrics, epochs. Wall time is kept out so the file
/// is reproducible; see write_timing_csv.
void write_metrics_csv(const std::filesystem::path& path, std::span<const TargetMetrics> rows);
void write_timing_csv(const std::filesystem::path& path, std::span<const TargetMetrics> rows);

}  // namespace powerlink
