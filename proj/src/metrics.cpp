#include "powerlink/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "powerlink/error.hpp"
#include "powerlink/parallel.hpp"

namespace powerlink {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double fidelity_plus(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                     const TargetTriple& target) {
  const double base = score_target(model, gc, target).probability;
  return std::abs(base - score_target_masked(model, gc, mask.complement(), target).probability);
}

double fidelity_minus(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                      const TargetTriple& target) {
  const double base = score_target(model, gc, target).probability;
  return std::abs(score_target_masked(model, gc, mask, target).probability - base);
}

double sparsity(const EdgeScoreMatrix& mask, const ComputationGraph& gc) {
  const auto v = mask.edge_values(gc);
  if (v.empty()) return 1.0;
  double s = 0.0;
  for (double x : v) s += x;
  return 1.0 - s / static_cast<double>(v.size());
}

ComputationGraph remove_path_edges(const ComputationGraph& gc, std::span<const ExplanationPath> paths, std::size_t m) {
  std::set<std::pair<LocalIndex, LocalIndex>> pairs;
  for (std::size_t i = 0; i < std::min(m, paths.size()); ++i)
    for (const auto& e : paths[i].edges) pairs.insert({e.head, e.tail});
  std::vector<std::size_t> drop;
  for (std::size_t k = 0; k < gc.num_edges(); ++k) {
    const auto& e = gc.edges()[k];
    if (pairs.count({e.head, e.tail})) drop.push_back(k);
  }
  return gc.without_edges(drop);
}

bool h_delta_r(const KgcModel& model, const ComputationGraph& gc, const Explanation& explanation, std::size_t m) {
  if (m < 1) throw ContractError("m must be at least 1");
  const double base = score_target(model, gc, explanation.target).raw;
  const ComputationGraph gt = remove_path_edges(gc, explanation.paths, m);
  return !(score_target(model, gt, explanation.target).raw > base);
}

TargetMetrics evaluate_target(const KgcModel& model, const ComputationGraph& gc, const Explanation& explanation) {
  const TargetTriple& target = explanation.target;
  TargetMetrics out;
  out.target = target;
  out.epochs = explanation.trace.size();
  out.num_paths = explanation.paths.size();

  const TripleScore base = score_target(model, gc, target);
  out.fidelity_plus =
      std::abs(base.probability - score_target_masked(model, gc, explanation.mask.complement(), target).probability);
  out.fidelity_minus = std::abs(score_target_masked(model, gc, explanation.mask, target).probability - base.probability);
  out.sparsity = sparsity(explanation.mask, gc);

  std::vector<double> reduced_raw(explanation.paths.size() + 1, base.raw);
  std::vector<char> have(explanation.paths.size() + 1, 0);
  have[0] = 1;
  for (std::size_t i = 0; i < kHitLevels.size(); ++i) {
    const std::size_t k = std::min(kHitLevels[i], explanation.paths.size());
    if (!have[k]) {
      reduced_raw[k] = score_target(model, remove_path_edges(gc, explanation.paths, k), target).raw;
      have[k] = 1;
    }
    out.hits[i] = !(reduced_raw[k] > base.raw);
  }
  return out;
}

MetricReport aggregate(std::span<const TargetMetrics> rows) {
  if (rows.empty()) throw DataError("no targets to aggregate");
  MetricReport r;
  for (const auto& t : rows) {
    r.fidelity_plus += t.fidelity_plus;
    r.fidelity_minus += t.fidelity_minus;
    r.sparsity += t.sparsity;
    for (std::size_t i = 0; i < kHitLevels.size(); ++i) r.h_delta_r[i] += t.hits[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(rows.size());
  r.fidelity_plus /= n;
  r.fidelity_minus /= n;
  r.sparsity /= n;
  for (double& h : r.h_delta_r) h /= n;
  r.n_samples = rows.size();
  return r;
}

std::string to_string(ThresholdRule r) { return r == ThresholdRule::kProbability ? "prob" : "rank1"; }

ThresholdRule threshold_rule_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "prob" || lower == "probability") return ThresholdRule::kProbability;
  if (lower == "rank1") return ThresholdRule::kRank1;
  throw ContractError("unknown threshold rule '" + std::string(s) + "' (expected prob or rank1)");
}

bool is_explainable(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target, ThresholdRule rule) {
  if (rule == ThresholdRule::kProbability) return score_target(model, gc, target).probability > 0.5;
  return rank_target(model, gc, target) == 1;
}

BatchResult evaluate_batch(const KgcModel& model, const KnowledgeGraph& g, std::span<const Triple> candidates,
                           const BatchConfig& config) {
  if (config.sample_count < 1) throw ContractError("sample count must be at least 1");
  validate(config.pipeline.explainer);

  BatchResult result;
  result.candidates = candidates.size();
  std::vector<char> ok(candidates.size(), 0);
  parallel_for(candidates.size(), config.workers, [&](std::size_t i) {
    const Triple& t = candidates[i];
    if (t.head >= g.num_entities() || t.tail >= g.num_entities() || t.relation >= g.num_relations()) return;
    const ComputationGraph gc = prepare_graph(g, t, config.pipeline);
    ok[i] = is_explainable(model, gc, {t, Label::kFactual}, config.rule) ? 1 : 0;
  });
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) picked.push_back(i);
  result.explainable = picked.size();
  if (picked.empty())
    throw DataError("no explainable targets under rule '" + to_string(config.rule) +
                    "'; try the other threshold rule or a larger k-hop / max-nodes setting");
  if (picked.size() > config.sample_count) {
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = picked.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> d(0, i);
      std::swap(picked[i], picked[d(rng)]);
    }
    picked.resize(config.sample_count);
    std::sort(picked.begin(), picked.end());
  }

  result.rows.resize(picked.size());
  parallel_for(picked.size(), config.workers, [&](std::size_t j) {
    const auto start = std::chrono::steady_clock::now();
    const TargetTriple target{candidates[picked[j]], Label::kFactual};
    const ComputationGraph gc = prepare_graph(g, target.triple, config.pipeline);
    const Explanation e = explain_on(model, gc, target, config.pipeline);
    TargetMetrics m = evaluate_target(model, gc, e);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.rows[j] = m;
  });
  result.report = aggregate(result.rows);
  return result;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json hits = nlohmann::json::object();
  for (std::size_t i = 0; i < kHitLevels.size(); ++i) hits[std::to_string(kHitLevels[i])] = r.h_delta_r[i];
  return {{"fidelity_plus", r.fidelity_plus},
          {"fidelity_minus", r.fidelity_minus},
          {"sparsity", r.sparsity},
          {"h_delta_r", hits},
          {"n_samples", r.n_samples}};
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const TargetMetrics> rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "head,relation,tail,fidelity_plus,fidelity_minus,sparsity,hit1,hit3,hit5,epochs,num_paths\n";
  for (const auto& r : rows) {
    f << r.target.triple.head << ',' << r.target.triple.relation << ',' << r.target.triple.tail << ','
      << fmt(r.fidelity_plus) << ',' << fmt(r.fidelity_minus) << ',' << fmt(r.sparsity);
    for (bool h : r.hits) f << ',' << (h ? 1 : 0);
    f << ',' << r.epochs << ',' << r.num_paths << '\n';
  }
}

void write_timing_csv(const std::filesystem::path& path, std::span<const TargetMetrics> rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "head,relation,tail,wall_seconds\n";
  for (const auto& r : rows)
    f << r.target.triple.head << ',' << r.target.triple.relation << ',' << r.target.triple.tail << ','
      << fmt(r.wall_seconds) << '\n';
}

}  // namespace powerlink
