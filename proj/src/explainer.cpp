#include "powerlink/explainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "powerlink/error.hpp"

namespace powerlink {

namespace {

void require_dims(std::initializer_list<std::span<const double>> parts) {
  const std::size_t d = parts.begin()->size();
  for (auto p : parts)
    if (p.size() != d) throw ContractError("combine: embedding dimension mismatch");
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

ad::Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

LocalIndex local_or_throw(const ComputationGraph& gc, EntityId e) {
  auto l = gc.local_of(e);
  if (!l) throw ContractError("target endpoint is not in the computation graph");
  return *l;
}

// Shared by the tape and the plain evaluation so both give identical bits.
double normalized_term(double u, std::uint64_t a, std::size_t l) {
  if (a == 0) return 0.0;
  return std::pow(u * (1.0 / static_cast<double>(a)), 1.0 / static_cast<double>(l));
}

double on_path_plain(const EdgeScoreMatrix& m, LocalIndex head, LocalIndex tail,
                     const std::vector<std::vector<std::uint64_t>>& walks, std::size_t power_order) {
  PowerVector u = power_start(m, head);
  double acc = 0.0;
  bool any = false;
  for (std::size_t l = 1; l <= power_order; ++l) {
    if (l > 1) u = power_step(u, m);
    const std::uint64_t a = walks[l - 1][tail];
    if (a == 0) continue;
    const double term = normalized_term(u.u[tail], a, l);
    acc = any ? acc + term : term;
    any = true;
  }
  return any ? acc * (1.0 / static_cast<double>(power_order)) : 0.0;
}

double prediction_term(double raw, Label label) {
  ad::Tape tape;
  ad::Var r = tape.constant(raw);
  if (label == Label::kCounterfactual) r = -r;
  return (-ad::log(ad::sigmoid(r))).scalar();
}

}  // namespace

std::string to_string(CombineMode m) { return m == CombineMode::kConcatenation ? "concatenation" : "euclidean"; }

CombineMode combine_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "concatenation" || lower == "cat" || lower == "concat") return CombineMode::kConcatenation;
  if (lower == "euclidean" || lower == "euc") return CombineMode::kEuclidean;
  throw ContractError("unknown combine mode '" + std::string(s) + "' (expected concatenation or euclidean)");
}

std::vector<double> combine_cat(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                                std::span<const double> th, std::span<const double> tr,
                                std::span<const double> tt) {
  require_dims({h, r, t, th, tr, tt});
  std::vector<double> out;
  out.reserve(6 * h.size());
  for (auto part : {h, r, t, th, tr, tt}) out.insert(out.end(), part.begin(), part.end());
  return out;
}

std::vector<double> combine_euc(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                                std::span<const double> th, std::span<const double> tr,
                                std::span<const double> tt) {
  require_dims({h, r, t, th, tr, tt});
  return {distance(h, th), distance(r, tr), distance(t, tt)};
}

TesParams::TesParams(CombineMode mode, std::size_t dim, std::uint64_t seed) : mode_(mode), dim_(dim) {
  if (dim == 0) throw ContractError("TES needs a positive embedding dimension");
  std::mt19937_64 rng(seed);
  const std::size_t in = input_width();
  params_.add("w1", glorot(in, kHidden1, rng));
  params_.add("b1", ad::Tensor(1, kHidden1));
  params_.add("w2", glorot(kHidden1, kHidden2, rng));
  params_.add("b2", ad::Tensor(1, kHidden2));
  params_.add("w3", glorot(kHidden2, 1, rng));
  params_.add("b3", ad::Tensor(1, 1));
}

ad::Tensor tes_features(const KgcModel& model, const ComputationGraph& gc, const Triple& target, CombineMode mode) {
  const LocalIndex th = local_or_throw(gc, target.head);
  const LocalIndex tt = local_or_throw(gc, target.tail);
  ad::Tape tape;
  EncoderVars enc = bind_encoder_frozen(tape, model);
  const ad::Tensor emb =
      encode_on_tape(tape, enc, model.shape(), frozen_node_inputs(tape, model, gc), gc, std::nullopt).value();
  const auto tr = model.relation_embedding(target.relation);
  const std::size_t width = mode == CombineMode::kConcatenation ? 6 * model.dim() : 3;
  ad::Tensor x(gc.num_edges(), width);
  for (std::size_t k = 0; k < gc.num_edges(); ++k) {
    const LocalEdge& e = gc.edges()[k];
    const auto row = mode == CombineMode::kConcatenation
                         ? combine_cat(emb.row(e.head), model.relation_embedding(e.relation), emb.row(e.tail),
                                       emb.row(th), tr, emb.row(tt))
                         : combine_euc(emb.row(e.head), model.relation_embedding(e.relation), emb.row(e.tail),
                                       emb.row(th), tr, emb.row(tt));
    std::copy(row.begin(), row.end(), x.row(k).begin());
  }
  return x;
}

ad::Var tes_forward(ad::Tape& tape, TesParams& tes, ad::Var features) {
  if (features.cols() != tes.input_width()) throw ContractError("TES input width mismatch");
  auto& p = tes.params();
  ad::Var h1 = ad::relu(ad::add_row_bias(ad::matmul(features, tape.param(p, "w1")), tape.param(p, "b1")));
  ad::Var h2 = ad::relu(ad::add_row_bias(ad::matmul(h1, tape.param(p, "w2")), tape.param(p, "b2")));
  return ad::sigmoid(ad::add_row_bias(ad::matmul(h2, tape.param(p, "w3")), tape.param(p, "b3")));
}

double tes_forward_row(const TesParams& tes, std::span<const double> features) {
  if (features.size() != tes.input_width()) throw ContractError("TES input width mismatch");
  const auto& p = tes.params();
  auto layer = [](std::span<const double> x, const ad::Tensor& w, const ad::Tensor& b, bool rectify) {
    std::vector<double> out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w(i, j);
      s += b[j];
      out[j] = rectify ? std::max(s, 0.0) : s;
    }
    return out;
  };
  auto h1 = layer(features, p.value("w1"), p.value("b1"), true);
  auto h2 = layer(h1, p.value("w2"), p.value("b2"), true);
  auto z = layer(h2, p.value("w3"), p.value("b3"), false);
  return 1.0 / (1.0 + std::exp(-z[0]));
}

EdgeScoreMatrix tes_score_edges(TesParams& tes, const KgcModel& model, const ComputationGraph& gc,
                                const Triple& target) {
  ad::Tape tape;
  ad::Var x = tape.constant(tes_features(model, gc, target, tes.mode()));
  ad::Var s = tes_forward(tape, tes, x);
  return EdgeScoreMatrix::from_edge_scores(gc, s.value().values());
}

PowerVector power_start(const EdgeScoreMatrix& m, LocalIndex row) {
  const CsrPattern& p = m.pattern();
  if (row >= p.rows) throw ContractError("power_start: row out of range");
  PowerVector out;
  out.u.assign(p.cols, 0.0);
  out.l = 1;
  out.target_row = row;
  for (std::size_t q = p.row_ptr[row]; q < p.row_ptr[row + 1]; ++q) out.u[p.col_idx[q]] = m.values()[q];
  return out;
}

PowerVector power_step(const PowerVector& u, const EdgeScoreMatrix& m) {
  if (u.l < 1) throw ContractError("power_step: walk length must be at least 1");
  if (u.u.size() != m.pattern().rows) throw ContractError("power_step: vector length mismatch");
  PowerVector out;
  out.u.assign(m.pattern().cols, 0.0);
  row_times_csr(u.u, m.pattern(), m.values(), out.u);
  out.l = u.l + 1;
  out.target_row = u.target_row;
  return out;
}

std::vector<double> normalize_power(const PowerVector& u, std::span<const std::uint64_t> a) {
  if (a.size() != u.u.size()) throw ContractError("normalize_power: length mismatch");
  std::vector<double> out(u.u.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = normalized_term(u.u[k], a[k], u.l);
  return out;
}

double on_path_probability(const EdgeScoreMatrix& m, const ComputationGraph& gc, std::size_t power_order) {
  if (power_order < 2) throw ContractError("power order must be at least 2");
  if (!m.aligned_to(gc)) throw ContractError("mask is not aligned to the computation graph");
  const auto walks = adjacency_power_row(gc, gc.head_index(), power_order);
  return on_path_plain(m, gc.head_index(), gc.tail_index(), walks, power_order);
}

double path_loss(double p_on) { return -std::log(std::max(p_on, ad::Tape::kLogFloor)); }

LossTerms total_loss(const KgcModel& model, const ComputationGraph& gc, const EdgeScoreMatrix& mask,
                     const TargetTriple& target, double gamma, std::size_t power_order) {
  if (gamma < 0.0) throw ContractError("gamma must be non-negative");
  if (power_order < 2) throw ContractError("power order must be at least 2");
  const LocalIndex h = local_or_throw(gc, target.triple.head);
  const LocalIndex t = local_or_throw(gc, target.triple.tail);
  LossTerms out;
  out.prediction = prediction_term(score_target_masked(model, gc, mask, target).raw, target.label);
  const auto walks = adjacency_power_row(gc, h, power_order);
  out.path = path_loss(on_path_plain(mask, h, t, walks, power_order));
  double sq = 0.0;
  for (double v : mask.values()) sq += v * v;
  out.regularization = gamma * std::sqrt(sq);
  out.total = out.prediction + out.path + out.regularization;
  return out;
}

void validate(const ExplainerConfig& c) {
  if (c.epochs < 1) throw ContractError("explainer epochs must be at least 1");
  if (c.power_order < 2) throw ContractError("power order must be at least 2");
  if (!(c.gamma >= 0.0)) throw ContractError("gamma must be non-negative");
  if (!(c.lr > 0.0)) throw ContractError("learning rate must be positive");
  if (!c.path_loss && !c.mi_loss) throw ContractError("at least one of the path and prediction losses must be enabled");
}

ExplanationProblem::ExplanationProblem(const KgcModel& model, const ComputationGraph& gc,
                                       const TargetTriple& target, ExplainerConfig config)
    : model_(&model), gc_(&gc), target_(target), config_(config) {
  if (config_.power_order < 2) throw ContractError("power order must be at least 2");
  head_ = local_or_throw(gc, target.triple.head);
  tail_ = local_or_throw(gc, target.triple.tail);
  features_ = tes_features(model, gc, target.triple, config_.combine);
  walks_ = adjacency_power_row(gc, head_, config_.power_order);
}

ad::Var ExplanationProblem::edge_scores(ad::Tape& tape, TesParams& tes) const {
  if (tes.mode() != config_.combine) throw ContractError("TES combine mode differs from the problem's");
  return tes_forward(tape, tes, tape.constant(features_));
}

ad::Var ExplanationProblem::pair_values(ad::Tape& /*tape*/, ad::Var edge_scores) const {
  return ad::segment_max(edge_scores, gc_->edge_pairs(), gc_->adjacency().nnz());
}

ad::Var ExplanationProblem::on_path(ad::Tape& tape, ad::Var pairs) const {
  const std::size_t n = gc_->num_nodes();
  ad::Tensor onehot(1, n);
  onehot[head_] = 1.0;
  const auto pattern = gc_->adjacency_ptr();
  ad::Var u = ad::spmv_row(tape.constant(std::move(onehot)), pairs, pattern);
  ad::Var acc;
  bool any = false;
  for (std::size_t l = 1; l <= config_.power_order; ++l) {
    if (l > 1) u = ad::spmv_row(u, pairs, pattern);
    const std::uint64_t a = walks_[l - 1][tail_];
    if (a == 0) continue;
    ad::Var term = ad::pow(ad::scale(ad::element(u, 0, tail_), 1.0 / static_cast<double>(a)),
                           1.0 / static_cast<double>(l));
    acc = any ? acc + term : term;
    any = true;
  }
  if (!any) return tape.constant(0.0);
  return ad::scale(acc, 1.0 / static_cast<double>(config_.power_order));
}

LossVars ExplanationProblem::build(ad::Tape& tape, TesParams& tes) const {
  LossVars out;
  ad::Var scores = edge_scores(tape, tes);
  ad::Var pairs = pair_values(tape, scores);
  ad::Var edge_mask = ad::gather_rows(pairs, gc_->edge_pairs());
  ad::Var raw = masked_target_raw(tape, *model_, *gc_, edge_mask, target_.triple);
  if (target_.label == Label::kCounterfactual) raw = -raw;
  out.prediction = -ad::log(ad::sigmoid(raw));
  out.path = -ad::log(on_path(tape, pairs));
  out.regularization = ad::scale(ad::norm(pairs), config_.gamma);
  if (config_.mi_loss && config_.path_loss)
    out.total = out.prediction + out.path + out.regularization;
  else if (config_.mi_loss)
    out.total = out.prediction + out.regularization;
  else
    out.total = out.path + out.regularization;
  return out;
}

ExplainerResult train_explainer(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                                const ExplainerConfig& config) {
  validate(config);
  ExplanationProblem problem(model, gc, target, config);
  ExplainerResult result{TesParams(config.combine, model.dim(), config.seed), EdgeScoreMatrix(), {}};
  result.trace.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    ad::Tape tape;
    LossVars lv = problem.build(tape, result.tes);
    result.trace.push_back(
        {lv.prediction.scalar(), lv.path.scalar(), lv.regularization.scalar(), lv.total.scalar()});
    tape.backward(lv.total);
    ad::sgd_step(result.tes.params(), config.lr);
  }
  ad::Tape tape;
  ad::Var s = problem.edge_scores(tape, result.tes);
  result.mask = EdgeScoreMatrix::from_edge_scores(gc, s.value().values());
  return result;
}

ComputationGraph prepare_graph(const KnowledgeGraph& g, const Triple& target, const PipelineConfig& config) {
  ComputationGraph gc = extract_computation_graph(g, target, config.hops, config.max_nodes);
  return k_core_prune(gc.without_triple(target), config.k_core);
}

Explanation explain_on(const KgcModel& model, const ComputationGraph& gc, const TargetTriple& target,
                       const PipelineConfig& config) {
  if (config.num_paths < 1) throw ContractError("num_paths must be at least 1");
  ExplainerResult r = train_explainer(model, gc, target, config.explainer);
  Explanation e;
  e.target = target;
  e.paths = generate_paths(gc, r.mask, target, config.num_paths, config.explainer.power_order);
  e.mask = std::move(r.mask);
  e.trace = std::move(r.trace);
  return e;
}

PipelineResult explain_target(const KgcModel& model, const KnowledgeGraph& g, const TargetTriple& target,
                              const PipelineConfig& config) {
  ComputationGraph gc = prepare_graph(g, target.triple, config);
  Explanation e = explain_on(model, gc, target, config);
  return {std::move(gc), std::move(e)};
}

}  // namespace powerlink
