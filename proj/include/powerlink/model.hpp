#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "powerlink/autodiff.hpp"
#include "powerlink/kg.hpp"
#include "powerlink/mask.hpp"

namespace powerlink {

enum class Decoder { kTransE, kDistMult };

std::string to_string(Decoder d);
Decoder decoder_from_string(std::string_view s);  // "transe" / "distmult", any case

struct ModelShape {
  std::size_t dim = 16;
  std::size_t layers = 2;
  std::size_t basis = 4;
  Decoder decoder = Decoder::kDistMult;
};

struct TrainConfig {
  ModelShape shape;
  std::size_t epochs = 200;
  double lr = 0.5;
  std::size_t negatives = 4;
  /// Share of triples scored as positives each epoch; those triples are left
  /// out of that epoch's message graph. 0 scores every triple on the full graph.
  double holdout = 0.0;
  std::uint64_t seed = 0;
};

struct TripleScore {
  double raw = 0.0;
  double probability = 0.5;  // sigmoid(raw)
};

/// RGCN-style encoder (basis-decomposed relation weights plus a self-loop
/// weight per layer) over entity/relation embeddings, with a KGE decoder.
///
/// Parameter layout in params(): "entity" (|E| x d), "relation" (|R| x d),
/// then per layer l: "l<l>.basis<b>" (d x d), "l<l>.coeff" (|R| x B),
/// "l<l>.self" (d x d).
class KgcModel {
 public:
  KgcModel(std::size_t num_entities, std::size_t num_relations, ModelShape shape, std::uint64_t seed);
  /// Parameters taken as-is from `params` (used by checkpoint loading).
  KgcModel(std::size_t num_entities, std::size_t num_relations, ModelShape shape, ad::ParamStore params);

  const ModelShape& shape() const noexcept { return shape_; }
  Decoder decoder() const noexcept { return shape_.decoder; }
  std::size_t dim() const noexcept { return shape_.dim; }
  std::size_t num_entities() const noexcept { return num_entities_; }
  std::size_t num_relations() const noexcept { return num_relations_; }

  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }

  std::span<const double> relation_embedding(RelationId r) const;

 private:
  void validate() const;

  std::size_t num_entities_;
  std::size_t num_relations_;
  ModelShape shape_;
  ad::ParamStore params_;
};

/// Encoder weights bound to a tape, either as trainable params or constants.
struct EncoderVars {
  struct Layer {
    std::vector<ad::Var> basis;
    ad::Var coeff;
    ad::Var self;
  };
  std::vector<Layer> layers;
};

EncoderVars bind_encoder(ad::Tape& tape, KgcModel& model);         // trainable
EncoderVars bind_encoder_frozen(ad::Tape& tape, const KgcModel& model);

/// Node-input rows (entity embeddings of gc nodes) as a tape constant.
ad::Var frozen_node_inputs(ad::Tape& tape, const KgcModel& model, const ComputationGraph& gc);

/// Message passing on the tape. `edge_mask` (num_edges x 1) scales every
/// edge message; the self-loop term is never masked. Aggregation is the sum
/// of masked messages divided by in-degree.
ad::Var encode_on_tape(ad::Tape& tape, const EncoderVars& enc, const ModelShape& shape,
                       ad::Var node_inputs, const ComputationGraph& gc,
                       const std::optional<ad::Var>& edge_mask);

/// Raw decoder scores for row-aligned (P x d) head, relation, tail blocks.
ad::Var decode_on_tape(Decoder decoder, ad::Var heads, ad::Var relations, ad::Var tails);

/// Raw score of `target` under the frozen model with a differentiable mask.
ad::Var masked_target_raw(ad::Tape& tape, const KgcModel& model, const ComputationGraph& gc,
                          const std::optional<ad::Var>& edge_mask, const Triple& target);

/// Node embeddings (n x d) after the encoder; `mask` must be aligned to gc.
ad::Tensor encode(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix* mask = nullptr);

TripleScore score(const KgcModel& model, std::span<const double> head, std::span<const double> relation,
                  std::span<const double> tail);

TripleScore score_target(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target);
TripleScore score_target_masked(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                                const TargetTriple& target);

/// Raw rank of the true tail among all gc nodes other than the head;
/// equal-scored candidates rank ahead of the true tail.
std::size_t rank_target(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                        const EdgeScoreMatrix* mask = nullptr);

/// Number of encoder forward passes run by the non-tape scoring entry points
/// on this thread.
std::size_t forward_pass_count() noexcept;

/// Every entity and every triple of `g`, for full-graph encoding.
ComputationGraph whole_graph(const KnowledgeGraph& g);

struct TrainResult {
  KgcModel model;
  double final_loss = 0.0;
  std::vector<double> loss_trace;
};

/// Full-batch binary cross-entropy with uniformly corrupted heads/tails.
TrainResult train_kgc(const KnowledgeGraph& g, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints: "PLNK", u16 version, u32 metadata length, JSON metadata,
// then little-endian float32 tensors in parameter order.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const KgcModel& model, const KnowledgeGraph& g);
/// Verifies the vocabulary fingerprints against `g` (DataError on mismatch).
KgcModel load_checkpoint(const std::filesystem::path& path, const KnowledgeGraph& g);
/// Loads without vocabulary verification.
KgcModel load_checkpoint(const std::filesystem::path& path);

}  // namespace powerlink
