#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "powerlink/autodiff.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/mask.hpp"
#include "powerlink/model.hpp"
#include "powerlink/paths.hpp"

namespace powerlink {

enum class CombineMode { kConcatenation, kEuclidean };

std::string to_string(CombineMode m);
CombineMode combine_from_string(std::string_view s);  // "concatenation"/"cat", "euclidean"/"euc"

/// [h, r, t, h_hat, r_hat, t_hat].
std::vector<double> combine_cat(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                                std::span<const double> th, std::span<const double> tr,
                                std::span<const double> tt);
/// [|h - h_hat|, |r - r_hat|, |t - t_hat|].
std::vector<double> combine_euc(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                                std::span<const double> th, std::span<const double> tr,
                                std::span<const double> tt);

/// Triplet edge scorer: MLP input -> 64 -> 32 -> 1, rectifier hidden layers,
/// sigmoid output. Parameters "w1","b1","w2","b2","w3","b3".
class TesParams {
 public:
  static constexpr std::size_t kHidden1 = 64;
  static constexpr std::size_t kHidden2 = 32;

  /// Glorot-uniform weights, zero biases.
  TesParams(CombineMode mode, std::size_t dim, std::uint64_t seed);

  CombineMode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t input_width() const noexcept { return mode_ == CombineMode::kConcatenation ? 6 * dim_ : 3; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

 private:
  CombineMode mode_;
  std::size_t dim_;
  ad::ParamStore params_;
};

/// One combined feature row per gc edge, from encoder outputs on the unmasked
/// gc and the model's relation embeddings.
ad::Tensor tes_features(const KgcModel& model, const ComputationGraph& gc, const Triple& target, CombineMode mode);

/// MLP over feature rows (m x input_width) -> m x 1 probabilities.
ad::Var tes_forward(ad::Tape& tape, TesParams& tes, ad::Var features);
/// Same network evaluated on one feature row without a tape.
double tes_forward_row(const TesParams& tes, std::span<const double> features);

EdgeScoreMatrix tes_score_edges(TesParams& tes, const KgcModel& model, const ComputationGraph& gc,
                                const Triple& target);

// ---------------------------------------------------------------------------
// Powering chain.

struct PowerVector {
  std::vector<double> u;
  std::size_t l = 1;
  LocalIndex target_row = 0;
};

/// u^(1): row `row` of M.
PowerVector power_start(const EdgeScoreMatrix& m, LocalIndex row);
/// u^(l+1) = u^(l) M.
PowerVector power_step(const PowerVector& u, const EdgeScoreMatrix& m);
/// (u[k] / a[k])^(1/l), or 0 where a[k] == 0.
std::vector<double> normalize_power(const PowerVector& u, std::span<const std::uint64_t> a);
/// Mean over l = 1..L of the normalized u^(l)[tail].
double on_path_probability(const EdgeScoreMatrix& m, const ComputationGraph& gc, std::size_t power_order);
/// -log(max(p_on, 1e-12)).
double path_loss(double p_on);

struct LossTerms {
  double prediction = 0.0;
  double path = 0.0;
  double regularization = 0.0;  // gamma * |M|
  double total = 0.0;
};

/// Three-term objective for a given mask (both terms enabled).
LossTerms total_loss(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                     const TargetTriple& target, double gamma, std::size_t power_order);

// ---------------------------------------------------------------------------
// Training.

struct ExplainerConfig {
  std::size_t epochs = 50;
  double lr = 0.005;
  double gamma = 0.03;
  std::size_t power_order = 3;
  CombineMode combine = CombineMode::kConcatenation;
  std::uint64_t seed = 0;
  bool path_loss = true;
  bool mi_loss = true;
};

void validate(const ExplainerConfig& config);

struct LossVars {
  ad::Var prediction;
  ad::Var path;
  ad::Var regularization;
  ad::Var total;  // honours the enable flags
};

/// Everything fixed while one target is explained: features and walk counts
/// are computed once; build() records the loss for the current TES weights.
class ExplanationProblem {
 public:
  ExplanationProblem(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                     ExplainerConfig config);

  const ComputationGraph& gc() const noexcept { return *gc_; }
  const ExplainerConfig& config() const noexcept { return config_; }
  const ad::Tensor& features() const noexcept { return features_; }

  /// Per-edge scores (E x 1) and per-pair mask values (nnz x 1) on the tape.
  ad::Var edge_scores(ad::Tape& tape, TesParams& tes) const;
  ad::Var pair_values(ad::Tape& tape, ad::Var edge_scores) const;
  ad::Var on_path(ad::Tape& tape, ad::Var pair_values) const;
  LossVars build(ad::Tape& tape, TesParams& tes) const;

 private:
  const KgcModel* model_;
  const ComputationGraph* gc_;
  TargetTriple target_;
  ExplainerConfig config_;
  LocalIndex head_ = 0;
  LocalIndex tail_ = 0;
  ad::Tensor features_;
  std::vector<std::vector<std::uint64_t>> walks_;
};

struct ExplainerResult {
  TesParams tes;
  EdgeScoreMatrix mask;
  std::vector<LossTerms> trace;  // per epoch, before the update
};

ExplainerResult train_explainer(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                                const ExplainerConfig& config);

// ---------------------------------------------------------------------------
// End-to-end pipeline.

struct PipelineConfig {
  std::size_t hops = 1;
  std::size_t max_nodes = 1000;
  std::size_t k_core = 2;
  std::size_t num_paths = 5;
  ExplainerConfig explainer;
};

/// Ego-graph around the target with the target triple itself removed, then
/// k-core pruned.
ComputationGraph prepare_graph(const KnowledgeGraph& g, const Triple& target, const PipelineConfig& config);

struct Explanation {
  TargetTriple target;
  std::vector<ExplanationPath> paths;
  EdgeScoreMatrix mask;
  std::vector<LossTerms> trace;
};

struct PipelineResult {
  ComputationGraph gc;
  Explanation explanation;
};

PipelineResult explain_target(const KgcModel& model, const KnowledgeGraph& g, const TargetTriple& target,
                              const PipelineConfig& config);
/// Explains on an already prepared graph.
Explanation explain_on(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                       const PipelineConfig& config);

}  // namespace powerlink
