#include "powerlink/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>

#include "powerlink/error.hpp"

namespace powerlink::ad {

// ---------------------------------------------------------------------------
// Tensor / ParamStore

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return from(rows, cols, std::span<const double>(values.begin(), values.size()));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols)
    throw ContractError("Tensor::from: value count does not match shape");
  Tensor t(rows, cols);
  std::copy(values.begin(), values.end(), t.data());
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::size_t ParamStore::add(std::string name, Tensor init) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  Tensor grad(init.rows(), init.cols());
  entries_.push_back(Entry{std::move(name), std::move(init), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParamStore::index(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw ContractError("ParamStore: no parameter named '" + std::string(name) + "'");
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void sgd_step(ParamStore& params, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = params.value(i);
    const Tensor& g = params.grad(i);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * g[k];
  }
  params.zero_grad();
}

// ---------------------------------------------------------------------------
// Var / Tape basics

const Tensor& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("Var::scalar on a non-scalar node");
  return v[0];
}

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParam: return "param";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kAddRowBias: return "add_row_bias";
    case Op::kScaleRows: return "scale_rows";
    case Op::kGatherRows: return "gather_rows";
    case Op::kScatterAddRows: return "scatter_add_rows";
    case Op::kColumn: return "column";
    case Op::kElement: return "element";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kLog: return "log";
    case Op::kPow: return "pow";
    case Op::kSum: return "sum";
    case Op::kRowSum: return "row_sum";
    case Op::kNorm: return "norm";
    case Op::kRowNorms: return "row_norms";
    case Op::kSegmentMax: return "segment_max";
    case Op::kSpmvRow: return "spmv_row";
  }
  return "?";
}

Var Tape::push(Node node) {
  for (double v : node.value.values()) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite value produced by node " << nodes_.size() << " (" << op_name(node.op) << ")";
      throw NumericError(msg.str());
    }
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::mix_branch(std::uint64_t bit) noexcept {
  branch_hash_ ^= bit + 0x9e3779b97f4a7c15ULL;
  branch_hash_ *= 1099511628211ULL;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(ParamStore& store, std::size_t index) {
  Node n;
  n.op = Op::kParam;
  n.value = store.value(index);
  n.requires_grad = true;
  n.store = &store;
  n.a = index;
  return push(std::move(n));
}

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("operation on an unbound Var");
  return *a.tape;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols();
    throw ContractError(msg.str());
  }
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward operations

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tape::Node n;
  n.op = Op::kAdd;
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] + y[i];
  return t.push(std::move(n));
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tape::Node n;
  n.op = Op::kSub;
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] - y[i];
  return t.push(std::move(n));
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tape::Node n;
  n.op = Op::kMul;
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * y[i];
  return t.push(std::move(n));
}

Var div(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "div");
  Tape::Node n;
  n.op = Op::kDiv;
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] / y[i];
  return t.push(std::move(n));
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tape::Node n;
  n.op = Op::kScale;
  n.in0 = a.id;
  n.scalar = c;
  n.requires_grad = t.nodes_[a.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = c * x[i];
  return t.push(std::move(n));
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tape::Node n;
  n.op = Op::kAddScalar;
  n.in0 = a.id;
  n.scalar = c;
  n.requires_grad = t.nodes_[a.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] + c;
  return t.push(std::move(n));
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dimensions differ (" << x.rows() << "x" << x.cols() << " * " << y.rows()
        << "x" << y.cols() << ")";
    throw ContractError(msg.str());
  }
  Tape::Node n;
  n.op = Op::kMatMul;
  n.in0 = a.id;
  n.in1 = b.id;
  n.requires_grad = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  n.value = Tensor(x.rows(), y.cols());
  gemm_acc(x.data(), y.data(), n.value.data(), x.rows(), x.cols(), y.cols());
  return t.push(std::move(n));
}

Var add_row_bias(Var xv, Var bv) {
  require_same_tape(xv, bv);
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  const Tensor& b = bv.value();
  if (b.rows() != 1 || b.cols() != x.cols()) throw ContractError("add_row_bias: bias must be 1 x cols");
  Tape::Node n;
  n.op = Op::kAddRowBias;
  n.in0 = xv.id;
  n.in1 = bv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad || t.nodes_[bv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) n.value(r, c) = x(r, c) + b(0, c);
  return t.push(std::move(n));
}

Var scale_rows(Var xv, Var sv) {
  require_same_tape(xv, sv);
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  const Tensor& s = sv.value();
  if (s.rows() != x.rows() || s.cols() != 1) throw ContractError("scale_rows: scale must be rows x 1");
  Tape::Node n;
  n.op = Op::kScaleRows;
  n.in0 = xv.id;
  n.in1 = sv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad || t.nodes_[sv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) n.value(r, c) = x(r, c) * s(r, 0);
  return t.push(std::move(n));
}

Var gather_rows(Var xv, std::span<const std::uint32_t> idx) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kGatherRows;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.index.assign(idx.begin(), idx.end());
  n.value = Tensor(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw ContractError("gather_rows: index out of range");
    std::copy_n(x.row(idx[i]).data(), x.cols(), n.value.row(i).data());
  }
  return t.push(std::move(n));
}

Var scatter_add_rows(Var xv, std::span<const std::uint32_t> idx, std::size_t out_rows,
                     std::span<const double> weights) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  if (idx.size() != x.rows()) throw ContractError("scatter_add_rows: one index per input row required");
  if (!weights.empty() && weights.size() != idx.size())
    throw ContractError("scatter_add_rows: one weight per input row required");
  Tape::Node n;
  n.op = Op::kScatterAddRows;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.index.assign(idx.begin(), idx.end());
  n.weights.assign(weights.begin(), weights.end());
  n.value = Tensor(out_rows, x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= out_rows) throw ContractError("scatter_add_rows: index out of range");
    const double w = weights.empty() ? 1.0 : weights[i];
    auto src = x.row(i);
    auto dst = n.value.row(idx[i]);
    for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += w * src[c];
  }
  return t.push(std::move(n));
}

Var column(Var xv, std::size_t c) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  if (c >= x.cols()) throw ContractError("column: index out of range");
  Tape::Node n;
  n.op = Op::kColumn;
  n.in0 = xv.id;
  n.a = c;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) n.value[r] = x(r, c);
  return t.push(std::move(n));
}

Var element(Var xv, std::size_t r, std::size_t c) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  if (r >= x.rows() || c >= x.cols()) throw ContractError("element: index out of range");
  Tape::Node n;
  n.op = Op::kElement;
  n.in0 = xv.id;
  n.a = r;
  n.b = c;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor::scalar(x(r, c));
  return t.push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  Tape::Node n;
  n.op = Op::kConcatCols;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    if (p.value().rows() != rows) throw ContractError("concat_cols: row counts differ");
    cols += p.value().cols();
    n.extra_inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || t.nodes_[p.id].requires_grad;
  }
  n.value = Tensor(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.row(r).data(), x.cols(), n.value.row(r).data() + offset);
    offset += x.cols();
  }
  return t.push(std::move(n));
}

Var sigmoid(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kSigmoid;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = sigmoid_scalar(x[i]);
  return t.push(std::move(n));
}

Var relu(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kRelu;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > 0.0;
    n.value[i] = on ? x[i] : 0.0;
    if (t.track_branches_) t.mix_branch(on ? 2 * i + 1 : 2 * i);
  }
  return t.push(std::move(n));
}

Var log(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kLog;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool clamped = x[i] < Tape::kLogFloor;
    n.value[i] = std::log(clamped ? Tape::kLogFloor : x[i]);
    if (t.track_branches_) t.mix_branch(clamped ? 3 * i + 2 : 3 * i);
  }
  return t.push(std::move(n));
}

Var pow(Var xv, double p) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kPow;
  n.in0 = xv.id;
  n.scalar = p;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 && p != std::floor(p)) throw NumericError("pow: negative base with fractional exponent");
    n.value[i] = std::pow(x[i], p);
  }
  return t.push(std::move(n));
}

Var sum(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kSum;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  double s = 0.0;
  for (double v : x.values()) s += v;
  n.value = Tensor::scalar(s);
  return t.push(std::move(n));
}

Var row_sum(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kRowSum;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    n.value[r] = s;
  }
  return t.push(std::move(n));
}

Var norm(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kNorm;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  n.value = Tensor::scalar(std::sqrt(s));
  if (t.track_branches_) t.mix_branch(s == 0.0 ? 7 : 5);
  return t.push(std::move(n));
}

Var row_norms(Var xv) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  Tape::Node n;
  n.op = Op::kRowNorms;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  n.value = Tensor(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    n.value[r] = std::sqrt(s);
    if (t.track_branches_) t.mix_branch(s == 0.0 ? 2 * r + 1 : 2 * r);
  }
  return t.push(std::move(n));
}

std::vector<std::uint32_t> segment_argmax(std::span<const double> x,
                                          std::span<const std::uint32_t> seg,
                                          std::size_t segments) {
  constexpr auto kNone = static_cast<std::uint32_t>(-1);
  std::vector<std::uint32_t> arg(segments, kNone);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] >= segments) throw ContractError("segment_max: segment id out of range");
    std::uint32_t& a = arg[seg[i]];
    if (a == kNone || x[i] > x[a]) a = static_cast<std::uint32_t>(i);
  }
  for (auto a : arg)
    if (a == kNone) throw ContractError("segment_max: empty segment");
  return arg;
}

Var segment_max(Var xv, std::span<const std::uint32_t> seg, std::size_t segments) {
  Tape& t = tape_of(xv);
  const Tensor& x = xv.value();
  if (x.cols() != 1 || x.rows() != seg.size())
    throw ContractError("segment_max: input must be a column with one segment id per row");
  Tape::Node n;
  n.op = Op::kSegmentMax;
  n.in0 = xv.id;
  n.requires_grad = t.nodes_[xv.id].requires_grad;
  auto arg = segment_argmax(x.values(), seg, segments);
  n.index.assign(arg.begin(), arg.end());
  n.value = Tensor(segments, 1);
  for (std::size_t s = 0; s < segments; ++s) {
    n.value[s] = x[arg[s]];
    if (t.track_branches_) t.mix_branch((static_cast<std::uint64_t>(s) << 32) | arg[s]);
  }
  return t.push(std::move(n));
}

Var spmv_row(Var uv, Var valv, std::shared_ptr<const CsrPattern> pattern) {
  require_same_tape(uv, valv);
  Tape& t = tape_of(uv);
  const Tensor& u = uv.value();
  const Tensor& vals = valv.value();
  if (!pattern) throw ContractError("spmv_row: null pattern");
  if (u.rows() != 1 || u.cols() != pattern->rows)
    throw ContractError("spmv_row: left operand must be 1 x rows");
  if (vals.size() != pattern->nnz()) throw ContractError("spmv_row: one value per stored entry required");
  Tape::Node n;
  n.op = Op::kSpmvRow;
  n.in0 = uv.id;
  n.in1 = valv.id;
  n.requires_grad = t.nodes_[uv.id].requires_grad || t.nodes_[valv.id].requires_grad;
  n.value = Tensor(1, pattern->cols);
  row_times_csr(u.values(), *pattern, vals.values(), n.value.values());
  n.pattern = std::move(pattern);
  return t.push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse sweep

Tensor& Tape::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::uint32_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& dst = grad_of(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Var output) {
  if (output.tape != this) throw ContractError("backward: output belongs to another tape");
  const Tensor& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) throw ContractError("backward: output must be a scalar node");
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[output.id].requires_grad) return;
  grad_of(output.id)[0] = 1.0;
  for (std::size_t k = output.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty()) continue;
    for (double g : n.grad.values()) {
      if (!std::isfinite(g)) {
        std::ostringstream msg;
        msg << "non-finite gradient at node " << k << " (" << op_name(n.op) << ")";
        throw NumericError(msg.str());
      }
    }
    backward_node(n);
    if (n.op != Op::kParam) n.grad = Tensor();
  }
}

void Tape::backward_node(Node& n) {
  const Tensor& g = n.grad;
  auto need = [&](std::uint32_t id) { return nodes_[id].requires_grad; };

  switch (n.op) {
    case Op::kConstant:
      return;
    case Op::kParam: {
      Tensor& dst = n.store->grad(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      n.grad = Tensor();
      return;
    }
    case Op::kAdd:
      accumulate(n.in0, g);
      accumulate(n.in1, g);
      return;
    case Op::kSub: {
      accumulate(n.in0, g);
      if (need(n.in1)) {
        Tensor& d = grad_of(n.in1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
      return;
    }
    case Op::kMul: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& y = nodes_[n.in1].value;
      if (need(n.in0)) {
        Tensor& d = grad_of(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      }
      if (need(n.in1)) {
        Tensor& d = grad_of(n.in1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      }
      return;
    }
    case Op::kDiv: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& y = nodes_[n.in1].value;
      if (need(n.in0)) {
        Tensor& d = grad_of(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / y[i];
      }
      if (need(n.in1)) {
        Tensor& d = grad_of(n.in1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i] * x[i] / (y[i] * y[i]);
      }
      return;
    }
    case Op::kScale: {
      if (!need(n.in0)) return;
      Tensor& d = grad_of(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += n.scalar * g[i];
      return;
    }
    case Op::kAddScalar:
      accumulate(n.in0, g);
      return;
    case Op::kMatMul: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
      if (need(n.in0)) {
        Tensor& da = grad_of(n.in0);  // G (m x n) * B^T (n x k)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* gi = g.data() + i * cols;
            const double* bp = b.data() + p * cols;
            for (std::size_t j = 0; j < cols; ++j) s += gi[j] * bp[j];
            da(i, p) += s;
          }
      }
      if (need(n.in1)) {
        Tensor& db = grad_of(n.in1);  // A^T (k x m) * G (m x n)
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data() + i * cols;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            double* dbp = db.data() + p * cols;
            for (std::size_t j = 0; j < cols; ++j) dbp[j] += aip * gi[j];
          }
        }
      }
      return;
    }
    case Op::kAddRowBias: {
      accumulate(n.in0, g);
      if (need(n.in1)) {
        Tensor& db = grad_of(n.in1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
      }
      return;
    }
    case Op::kScaleRows: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& s = nodes_[n.in1].value;
      if (need(n.in0)) {
        Tensor& dx = grad_of(n.in0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dx(r, c) += g(r, c) * s(r, 0);
      }
      if (need(n.in1)) {
        Tensor& ds = grad_of(n.in1);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * x(r, c);
          ds(r, 0) += acc;
        }
      }
      return;
    }
    case Op::kGatherRows: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        auto src = g.row(i);
        auto dst = dx.row(n.index[i]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      return;
    }
    case Op::kScatterAddRows: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        const double w = n.weights.empty() ? 1.0 : n.weights[i];
        auto src = g.row(n.index[i]);
        auto dst = dx.row(i);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += w * src[c];
      }
      return;
    }
    case Op::kColumn: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t r = 0; r < g.rows(); ++r) dx(r, n.a) += g[r];
      return;
    }
    case Op::kElement: {
      if (!need(n.in0)) return;
      grad_of(n.in0)(n.a, n.b) += g[0];
      return;
    }
    case Op::kConcatCols: {
      std::size_t offset = 0;
      for (std::uint32_t id : n.extra_inputs) {
        const std::size_t w = nodes_[id].value.cols();
        if (need(id)) {
          Tensor& dx = grad_of(id);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) dx(r, c) += g(r, offset + c);
        }
        offset += w;
      }
      return;
    }
    case Op::kSigmoid: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      return;
    }
    case Op::kRelu: {
      if (!need(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) dx[i] += g[i];
      return;
    }
    case Op::kLog: {
      if (!need(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] >= kLogFloor) dx[i] += g[i] / x[i];
      return;
    }
    case Op::kPow: {
      if (!need(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] != 0.0) dx[i] += g[i] * n.scalar * std::pow(x[i], n.scalar - 1.0);
      return;
    }
    case Op::kSum: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
      return;
    }
    case Op::kRowSum: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t r = 0; r < dx.rows(); ++r)
        for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += g[r];
      return;
    }
    case Op::kNorm: {
      if (!need(n.in0) || n.value[0] == 0.0) return;
      const Tensor& x = nodes_[n.in0].value;
      Tensor& dx = grad_of(n.in0);
      const double f = g[0] / n.value[0];
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += f * x[i];
      return;
    }
    case Op::kRowNorms: {
      if (!need(n.in0)) return;
      const Tensor& x = nodes_[n.in0].value;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        if (n.value[r] == 0.0) continue;
        const double f = g[r] / n.value[r];
        for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) += f * x(r, c);
      }
      return;
    }
    case Op::kSegmentMax: {
      if (!need(n.in0)) return;
      Tensor& dx = grad_of(n.in0);
      for (std::size_t s = 0; s < n.index.size(); ++s) dx[n.index[s]] += g[s];
      return;
    }
    case Op::kSpmvRow: {
      const CsrPattern& m = *n.pattern;
      const Tensor& u = nodes_[n.in0].value;
      const Tensor& vals = nodes_[n.in1].value;
      if (need(n.in0)) {
        Tensor& du = grad_of(n.in0);
        for (std::size_t i = 0; i < m.rows; ++i) {
          double acc = 0.0;
          for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) acc += vals[p] * g[m.col_idx[p]];
          du[i] += acc;
        }
      }
      if (need(n.in1)) {
        Tensor& dv = grad_of(n.in1);
        for (std::size_t i = 0; i < m.rows; ++i) {
          const double ui = u[i];
          if (ui == 0.0) continue;
          for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) dv[p] += ui * g[m.col_idx[p]];
        }
      }
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

struct Eval {
  double value;
  std::uint64_t signature;
};

Eval evaluate(const LossFn& loss) {
  Tape t;
  t.track_branches(true);
  Var out = loss(t);
  return {out.scalar(), t.branch_signature()};
}

}  // namespace

FiniteDiffReport finite_diff_check(const LossFn& loss, ParamStore& params,
                                   const FiniteDiffOptions& opts) {
  if (!(opts.step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  params.zero_grad();
  {
    Tape t;
    Var out = loss(t);
    t.backward(out);
  }
  return finite_diff_compare(loss, params, opts);
}

FiniteDiffReport finite_diff_compare(const LossFn& loss, ParamStore& params,
                                     const FiniteDiffOptions& opts) {
  if (!(opts.step > 0.0)) throw ContractError("finite_diff_compare: step must be positive");
  FiniteDiffReport report;
  const std::uint64_t base_sig = evaluate(loss).signature;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamCheck check;
    check.name = params.name(pi);
    Tensor& value = params.value(pi);
    const Tensor& grad = params.grad(pi);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double original = value[k];
      value[k] = original + opts.step;
      const Eval plus = evaluate(loss);
      value[k] = original - opts.step;
      const Eval minus = evaluate(loss);
      value[k] = original;
      if (opts.skip_nonsmooth && (plus.signature != base_sig || minus.signature != base_sig)) {
        ++check.skipped_nonsmooth;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.step);
      const double analytic = grad[k];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.rel_floor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, abs_err / denom);
      ++check.compared;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.compared += check.compared;
    report.skipped_nonsmooth += check.skipped_nonsmooth;
    report.params.push_back(std::move(check));
  }
  report.passed = report.compared > 0 && report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace powerlink::ad
