#include "powerlink/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "powerlink/error.hpp"

namespace powerlink {

namespace {

thread_local std::size_t g_forward_passes = 0;

std::string layer_name(std::size_t l, const std::string& what) { return "l" + std::to_string(l) + "." + what; }

ad::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct EdgeIndex {
  std::vector<std::uint32_t> src, dst, rel;
  std::vector<double> inv_in_degree;
};

EdgeIndex index_edges(const ComputationGraph& gc) {
  EdgeIndex ix;
  const auto& edges = gc.edges();
  ix.src.reserve(edges.size());
  ix.dst.reserve(edges.size());
  ix.rel.reserve(edges.size());
  std::vector<std::size_t> indeg(gc.num_nodes(), 0);
  for (const auto& e : edges) {
    ix.src.push_back(e.head);
    ix.dst.push_back(e.tail);
    ix.rel.push_back(e.relation);
    ++indeg[e.tail];
  }
  ix.inv_in_degree.reserve(edges.size());
  for (const auto& e : edges) ix.inv_in_degree.push_back(1.0 / static_cast<double>(indeg[e.tail]));
  return ix;
}

LocalIndex require_local(const ComputationGraph& gc, EntityId e, const char* which) {
  auto l = gc.local_of(e);
  if (!l) throw ContractError(std::string("target ") + which + " is not in the computation graph");
  return *l;
}

ad::Var frozen_relation_row(ad::Tape& tape, const KgcModel& model, RelationId r) {
  if (r >= model.num_relations()) throw ContractError("relation id out of range for the model");
  auto row = model.relation_embedding(r);
  return tape.constant(ad::Tensor::from(1, row.size(), row));
}

std::optional<ad::Var> mask_var(ad::Tape& tape, const ComputationGraph& gc, const EdgeScoreMatrix* mask) {
  if (!mask) return std::nullopt;
  auto vals = mask->edge_values(gc);
  return tape.constant(ad::Tensor::from(vals.size(), 1, vals));
}

ad::Var encode_frozen(ad::Tape& tape, const KgcModel& model, const ComputationGraph& gc,
                      const std::optional<ad::Var>& edge_mask) {
  EncoderVars enc = bind_encoder_frozen(tape, model);
  ad::Var x = frozen_node_inputs(tape, model, gc);
  return encode_on_tape(tape, enc, model.shape(), x, gc, edge_mask);
}

}  // namespace

std::string to_string(Decoder d) { return d == Decoder::kTransE ? "TransE" : "DistMult"; }

Decoder decoder_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "transe") return Decoder::kTransE;
  if (lower == "distmult") return Decoder::kDistMult;
  throw ContractError("unknown decoder '" + std::string(s) + "' (expected TransE or DistMult)");
}

KgcModel::KgcModel(std::size_t num_entities, std::size_t num_relations, ModelShape shape, std::uint64_t seed)
    : num_entities_(num_entities), num_relations_(num_relations), shape_(shape) {
  if (shape_.dim < 2) throw ContractError("embedding dimension must be at least 2");
  if (shape_.layers < 1) throw ContractError("encoder needs at least one layer");
  if (shape_.basis < 1) throw ContractError("basis count must be at least 1");
  if (num_entities_ == 0 || num_relations_ == 0) throw ContractError("model needs entities and relations");

  std::mt19937_64 rng(seed);
  const double d = static_cast<double>(shape_.dim);
  const double emb = std::sqrt(3.0 / d);
  params_.add("entity", uniform_tensor(num_entities_, shape_.dim, emb, rng));
  params_.add("relation", uniform_tensor(num_relations_, shape_.dim, emb, rng));
  const double glorot = std::sqrt(6.0 / (2.0 * d));
  const double coeff = std::sqrt(3.0 / static_cast<double>(shape_.basis));
  for (std::size_t l = 0; l < shape_.layers; ++l) {
    for (std::size_t b = 0; b < shape_.basis; ++b)
      params_.add(layer_name(l, "basis" + std::to_string(b)), uniform_tensor(shape_.dim, shape_.dim, glorot, rng));
    params_.add(layer_name(l, "coeff"), uniform_tensor(num_relations_, shape_.basis, coeff, rng));
    params_.add(layer_name(l, "self"), uniform_tensor(shape_.dim, shape_.dim, glorot, rng));
  }
}

KgcModel::KgcModel(std::size_t num_entities, std::size_t num_relations, ModelShape shape, ad::ParamStore params)
    : num_entities_(num_entities), num_relations_(num_relations), shape_(shape), params_(std::move(params)) {
  validate();
}

void KgcModel::validate() const {
  if (shape_.dim < 2) throw DataError("embedding dimension must be at least 2");
  if (shape_.layers < 1 || shape_.basis < 1) throw DataError("invalid encoder shape");
  auto expect = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    if (!params_.contains(name)) throw DataError("missing parameter '" + name + "'");
    const auto& t = params_.value(name);
    if (t.rows() != rows || t.cols() != cols) throw DataError("parameter '" + name + "' has the wrong shape");
    for (double v : t.values())
      if (!std::isfinite(v)) throw DataError("parameter '" + name + "' is not finite");
  };
  expect("entity", num_entities_, shape_.dim);
  expect("relation", num_relations_, shape_.dim);
  for (std::size_t l = 0; l < shape_.layers; ++l) {
    for (std::size_t b = 0; b < shape_.basis; ++b)
      expect(layer_name(l, "basis" + std::to_string(b)), shape_.dim, shape_.dim);
    expect(layer_name(l, "coeff"), num_relations_, shape_.basis);
    expect(layer_name(l, "self"), shape_.dim, shape_.dim);
  }
  if (params_.size() != 2 + shape_.layers * (shape_.basis + 2)) throw DataError("unexpected parameters in model");
}

std::span<const double> KgcModel::relation_embedding(RelationId r) const {
  return params_.value(std::size_t{1}).row(r);
}

EncoderVars bind_encoder(ad::Tape& tape, KgcModel& model) {
  EncoderVars enc;
  auto& p = model.params();
  for (std::size_t l = 0; l < model.shape().layers; ++l) {
    EncoderVars::Layer layer;
    for (std::size_t b = 0; b < model.shape().basis; ++b)
      layer.basis.push_back(tape.param(p, layer_name(l, "basis" + std::to_string(b))));
    layer.coeff = tape.param(p, layer_name(l, "coeff"));
    layer.self = tape.param(p, layer_name(l, "self"));
    enc.layers.push_back(std::move(layer));
  }
  return enc;
}

EncoderVars bind_encoder_frozen(ad::Tape& tape, const KgcModel& model) {
  EncoderVars enc;
  const auto& p = model.params();
  for (std::size_t l = 0; l < model.shape().layers; ++l) {
    EncoderVars::Layer layer;
    for (std::size_t b = 0; b < model.shape().basis; ++b)
      layer.basis.push_back(tape.constant(p.value(layer_name(l, "basis" + std::to_string(b)))));
    layer.coeff = tape.constant(p.value(layer_name(l, "coeff")));
    layer.self = tape.constant(p.value(layer_name(l, "self")));
    enc.layers.push_back(std::move(layer));
  }
  return enc;
}

ad::Var frozen_node_inputs(ad::Tape& tape, const KgcModel& model, const ComputationGraph& gc) {
  const auto& table = model.params().value(std::size_t{0});
  ad::Tensor x(gc.num_nodes(), model.dim());
  for (std::size_t i = 0; i < gc.num_nodes(); ++i) {
    const EntityId e = gc.global_of(static_cast<LocalIndex>(i));
    if (e >= model.num_entities()) throw ContractError("entity id out of range for the model");
    std::copy(table.row(e).begin(), table.row(e).end(), x.row(i).begin());
  }
  return tape.constant(std::move(x));
}

ad::Var encode_on_tape(ad::Tape& /*tape*/, const EncoderVars& enc, const ModelShape& shape, ad::Var node_inputs,
                       const ComputationGraph& gc, const std::optional<ad::Var>& edge_mask) {
  if (node_inputs.rows() != gc.num_nodes() || node_inputs.cols() != shape.dim)
    throw ContractError("node inputs do not match the computation graph");
  if (edge_mask && (edge_mask->rows() != gc.num_edges() || edge_mask->cols() != 1))
    throw ContractError("edge mask must hold one value per computation-graph edge");
  if (enc.layers.size() != shape.layers) throw ContractError("encoder layer count mismatch");

  const EdgeIndex ix = index_edges(gc);
  const std::size_t n = gc.num_nodes();
  ad::Var h = node_inputs;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    ad::Var self = ad::matmul(h, layer.self);
    ad::Var next = self;
    if (gc.num_edges() > 0) {
      ad::Var coef = ad::gather_rows(layer.coeff, ix.rel);
      ad::Var msg;
      for (std::size_t b = 0; b < layer.basis.size(); ++b) {
        ad::Var z = ad::gather_rows(ad::matmul(h, layer.basis[b]), ix.src);
        ad::Var term = ad::scale_rows(z, ad::column(coef, b));
        msg = b == 0 ? term : msg + term;
      }
      if (edge_mask) msg = ad::scale_rows(msg, *edge_mask);
      next = ad::scatter_add_rows(msg, ix.dst, n, ix.inv_in_degree) + self;
    }
    h = l + 1 < enc.layers.size() ? ad::relu(next) : next;
  }
  return h;
}

ad::Var decode_on_tape(Decoder decoder, ad::Var heads, ad::Var relations, ad::Var tails) {
  if (decoder == Decoder::kTransE) return -ad::row_norms(heads + relations - tails);
  return ad::row_sum(heads * relations * tails);
}

ad::Var masked_target_raw(ad::Tape& tape, const KgcModel& model, const ComputationGraph& gc,
                          const std::optional<ad::Var>& edge_mask, const Triple& target) {
  const LocalIndex h = require_local(gc, target.head, "head");
  const LocalIndex t = require_local(gc, target.tail, "tail");
  ad::Var emb = encode_frozen(tape, model, gc, edge_mask);
  const std::uint32_t hi[1] = {h};
  const std::uint32_t ti[1] = {t};
  return decode_on_tape(model.decoder(), ad::gather_rows(emb, hi), frozen_relation_row(tape, model, target.relation),
                        ad::gather_rows(emb, ti));
}

ad::Tensor encode(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix* mask) {
  ++g_forward_passes;
  ad::Tape tape;
  auto m = mask_var(tape, gc, mask);
  return encode_frozen(tape, model, gc, m).value();
}

TripleScore score(const KgcModel& model, std::span<const double> head, std::span<const double> relation,
                  std::span<const double> tail) {
  const std::size_t d = model.dim();
  if (head.size() != d || relation.size() != d || tail.size() != d)
    throw ContractError("score: embedding dimension mismatch");
  ad::Tape tape;
  ad::Var raw = decode_on_tape(model.decoder(), tape.constant(ad::Tensor::from(1, d, head)),
                               tape.constant(ad::Tensor::from(1, d, relation)),
                               tape.constant(ad::Tensor::from(1, d, tail)));
  const double r = raw.scalar();
  return {r, ad::sigmoid(raw).scalar()};
}

namespace {

TripleScore target_score(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix* mask,
                         const TargetTriple& target) {
  ++g_forward_passes;
  ad::Tape tape;
  auto m = mask_var(tape, gc, mask);
  ad::Var raw = masked_target_raw(tape, model, gc, m, target.triple);
  return {raw.scalar(), ad::sigmoid(raw).scalar()};
}

}  // namespace

TripleScore score_target(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target) {
  return target_score(model, gc, nullptr, target);
}

TripleScore score_target_masked(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                                const TargetTriple& target) {
  return target_score(model, gc, &mask, target);
}

std::size_t rank_target(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                        const EdgeScoreMatrix* mask) {
  const LocalIndex h = require_local(gc, target.triple.head, "head");
  const LocalIndex t = require_local(gc, target.triple.tail, "tail");
  ++g_forward_passes;
  ad::Tape tape;
  auto m = mask_var(tape, gc, mask);
  ad::Var emb = encode_frozen(tape, model, gc, m);

  std::vector<std::uint32_t> cands;
  for (LocalIndex c = 0; c < gc.num_nodes(); ++c)
    if (c != h) cands.push_back(c);
  std::vector<std::uint32_t> heads(cands.size(), h);
  std::vector<std::uint32_t> rels(cands.size(), 0);
  ad::Var rel = frozen_relation_row(tape, model, target.triple.relation);
  ad::Var raw = decode_on_tape(model.decoder(), ad::gather_rows(emb, heads), ad::gather_rows(rel, rels),
                               ad::gather_rows(emb, cands));
  const auto& s = raw.value();
  double true_score = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (cands[i] == t) true_score = s[i];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (cands[i] != t && s[i] >= true_score) ++rank;
  return rank;
}

std::size_t forward_pass_count() noexcept { return g_forward_passes; }

ComputationGraph whole_graph(const KnowledgeGraph& g) {
  std::vector<EntityId> nodes(g.num_entities());
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = static_cast<EntityId>(i);
  std::vector<LocalEdge> edges;
  edges.reserve(g.num_triples());
  for (std::size_t k = 0; k < g.num_triples(); ++k) {
    const auto& t = g.triples()[k];
    edges.push_back({t.head, t.relation, t.tail, k});
  }
  return ComputationGraph(std::move(nodes), std::move(edges), 0, 0);
}

TrainResult train_kgc(const KnowledgeGraph& g, const TrainConfig& config) {
  if (g.num_triples() == 0) throw ContractError("cannot train on an empty knowledge graph");
  if (!(config.holdout >= 0.0 && config.holdout < 1.0)) throw ContractError("holdout must be in [0, 1)");
  KgcModel model(g.num_entities(), g.num_relations(), config.shape, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(g.num_entities() - 1));

  const std::size_t total = g.num_triples();
  std::size_t p = total;
  if (config.holdout > 0.0)
    p = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(config.holdout * static_cast<double>(total))), 1,
                                total);
  const std::size_t batch = p * (1 + config.negatives);
  std::vector<std::uint32_t> hi(batch), ri(batch), ti(batch);
  ad::Tensor sign(batch, 1, 1.0);
  for (std::size_t k = p; k < batch; ++k) sign[k] = -1.0;
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EntityId> all_nodes(g.num_entities());
  std::iota(all_nodes.begin(), all_nodes.end(), 0);
  std::optional<ComputationGraph> whole;
  if (p == total) whole.emplace(whole_graph(g));

  TrainResult result{std::move(model), 0.0, {}};
  KgcModel& m = result.model;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (p < total) std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = p;
    for (std::size_t k = 0; k < p; ++k) {
      const auto& t = g.triples()[order[k]];
      hi[k] = t.head;
      ri[k] = t.relation;
      ti[k] = t.tail;
      for (std::size_t j = 0; j < config.negatives; ++j, ++pos) {
        Triple c = t;
        const bool corrupt_head = (rng() & 1U) != 0;
        for (int attempt = 0; attempt < 10; ++attempt) {
          c = t;
          (corrupt_head ? c.head : c.tail) = pick(rng);
          if (!g.contains(c) || g.num_entities() == 1) break;
        }
        hi[pos] = c.head;
        ri[pos] = c.relation;
        ti[pos] = c.tail;
      }
    }
    std::optional<ComputationGraph> partial;
    if (p < total) {
      std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(p), order.end());
      std::sort(kept.begin(), kept.end());
      std::vector<LocalEdge> edges;
      edges.reserve(kept.size());
      for (std::size_t k : kept) {
        const auto& t = g.triples()[k];
        edges.push_back({t.head, t.relation, t.tail, k});
      }
      partial.emplace(all_nodes, std::move(edges), 0, 0);
    }
    const ComputationGraph& graph = p < total ? *partial : *whole;

    ad::Tape tape;
    ad::Var ent = tape.param(m.params(), std::size_t{0});
    ad::Var rel = tape.param(m.params(), std::size_t{1});
    EncoderVars enc = bind_encoder(tape, m);
    ad::Var emb = encode_on_tape(tape, enc, m.shape(), ent, graph, std::nullopt);
    ad::Var raw = decode_on_tape(m.decoder(), ad::gather_rows(emb, hi), ad::gather_rows(rel, ri),
                                 ad::gather_rows(emb, ti));
    ad::Var loss = ad::scale(ad::sum(ad::log(ad::sigmoid(raw * tape.constant(sign)))),
                             -1.0 / static_cast<double>(batch));
    tape.backward(loss);
    ad::sgd_step(m.params(), config.lr);
    result.loss_trace.push_back(loss.scalar());
  }
  result.final_loss = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
  return result;
}

}  // namespace powerlink
