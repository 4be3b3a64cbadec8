#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation in execution order; each node caches its
// forward value. backward() walks the nodes in reverse and accumulates
// gradients into the ParamStore entries that were bound with Tape::param.
// Constants never receive gradients, so frozen model weights cost nothing
// on the backward sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "powerlink/csr.hpp"
#include "powerlink/memory.hpp"

namespace powerlink::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Tensor from(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor from(std::size_t rows, std::size_t cols, std::span<const double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const double> values() const noexcept { return {data_.data(), data_.size()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(double v);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  tracked_vector<double> data_;
};

/// Named trainable tensors with matching gradient accumulators.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t index(std::string_view name) const;  // throws ContractError if absent
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return entries_[i].name; }

  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }
  Tensor& value(std::string_view name) { return value(index(name)); }
  const Tensor& value(std::string_view name) const { return value(index(name)); }
  Tensor& grad(std::size_t i) { return entries_[i].grad; }
  const Tensor& grad(std::size_t i) const { return entries_[i].grad; }

  void zero_grad();
  std::size_t parameter_count() const;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
};

/// p <- p - lr * grad(p), then zeroes every accumulator.
void sgd_step(ParamStore& params, double lr);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  double scalar() const;  // value of a 1x1 node
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kMatMul,
  kAddRowBias,
  kScaleRows,
  kGatherRows,
  kScatterAddRows,
  kColumn,
  kElement,
  kConcatCols,
  kSigmoid,
  kRelu,
  kLog,
  kPow,
  kSum,
  kRowSum,
  kNorm,
  kRowNorms,
  kSegmentMax,
  kSpmvRow,
};

const char* op_name(Op op) noexcept;

class Tape {
 public:
  /// Lower clamp applied to the argument of log().
  static constexpr double kLogFloor = 1e-12;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }
  Var param(ParamStore& store, std::size_t index);
  Var param(ParamStore& store, std::string_view name) { return param(store, store.index(name)); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_[v.id].op; }

  /// Reverse sweep from a 1x1 output; adds into the bound ParamStore grads.
  void backward(Var output);

  /// When enabled, every branching primitive (rectifier, log clamp, max,
  /// zero-norm guard) folds its branch decisions into a running hash. Two
  /// evaluations with equal signatures took the same smooth piece.
  void track_branches(bool on) noexcept { track_branches_ = on; }
  std::uint64_t branch_signature() const noexcept { return branch_hash_; }

 private:
  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var div(Var, Var);
  friend Var scale(Var, double);
  friend Var add_scalar(Var, double);
  friend Var matmul(Var, Var);
  friend Var add_row_bias(Var, Var);
  friend Var scale_rows(Var, Var);
  friend Var gather_rows(Var, std::span<const std::uint32_t>);
  friend Var scatter_add_rows(Var, std::span<const std::uint32_t>, std::size_t, std::span<const double>);
  friend Var column(Var, std::size_t);
  friend Var element(Var, std::size_t, std::size_t);
  friend Var concat_cols(std::span<const Var>);
  friend Var sigmoid(Var);
  friend Var relu(Var);
  friend Var log(Var);
  friend Var pow(Var, double);
  friend Var sum(Var);
  friend Var row_sum(Var);
  friend Var norm(Var);
  friend Var row_norms(Var);
  friend Var segment_max(Var, std::span<const std::uint32_t>, std::size_t);
  friend Var spmv_row(Var, Var, std::shared_ptr<const CsrPattern>);

  struct Node {
    Op op = Op::kConstant;
    std::uint32_t in0 = 0;
    std::uint32_t in1 = 0;
    std::vector<std::uint32_t> extra_inputs;  // concat_cols operands
    bool requires_grad = false;
    Tensor value;
    Tensor grad;
    double scalar = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    tracked_vector<std::uint32_t> index;
    tracked_vector<double> weights;
    std::shared_ptr<const CsrPattern> pattern;
    ParamStore* store = nullptr;
  };

  Var push(Node node);
  void mix_branch(std::uint64_t bit) noexcept;
  void accumulate(std::uint32_t id, const Tensor& g);
  Tensor& grad_of(std::uint32_t id);
  void backward_node(Node& node);

  std::vector<Node> nodes_;
  bool track_branches_ = false;
  std::uint64_t branch_hash_ = 14695981039346656037ULL;
};

// Elementwise arithmetic on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// (m x k) * (k x n). A 1 x k left operand is a row-vector product.
Var matmul(Var a, Var b);
/// x (m x n) + bias (1 x n) added to every row.
Var add_row_bias(Var x, Var bias);
/// Row r of x (m x n) multiplied by s(r, 0); s is m x 1.
Var scale_rows(Var x, Var s);
/// out.row(i) = x.row(idx[i]).
Var gather_rows(Var x, std::span<const std::uint32_t> idx);
/// out.row(idx[i]) += w[i] * x.row(i); out has `out_rows` rows. Empty
/// weights means all ones.
Var scatter_add_rows(Var x, std::span<const std::uint32_t> idx, std::size_t out_rows,
                     std::span<const double> weights = {});
Var column(Var x, std::size_t c);
Var element(Var x, std::size_t r, std::size_t c);
Var concat_cols(std::span<const Var> parts);

Var sigmoid(Var x);
Var relu(Var x);
/// Natural log of max(x, Tape::kLogFloor); zero gradient where clamped.
Var log(Var x);
/// x^p for x >= 0; the derivative at x == 0 is taken as 0.
Var pow(Var x, double p);

Var sum(Var x);        // 1 x 1
Var row_sum(Var x);    // m x 1
Var norm(Var x);       // Euclidean norm of all entries, 1 x 1
Var row_norms(Var x);  // m x 1

/// x is m x 1; out(s) = max over {i : seg[i] == s} of x(i). Every segment
/// must be non-empty. Gradient goes to the first arg-max.
Var segment_max(Var x, std::span<const std::uint32_t> seg, std::size_t segments);
/// Provenance of segment_max: first arg-max index per segment.
std::vector<std::uint32_t> segment_argmax(std::span<const double> x,
                                          std::span<const std::uint32_t> seg,
                                          std::size_t segments);

/// u (1 x rows) times the sparse matrix with the given pattern and per-entry
/// values (nnz x 1).
Var spmv_row(Var u, Var values, std::shared_ptr<const CsrPattern> pattern);

// ---------------------------------------------------------------------------
// Finite-difference checking.

using LossFn = std::function<Var(Tape&)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t compared = 0;
  std::size_t skipped_nonsmooth = 0;
};

struct FiniteDiffReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::size_t compared = 0;
  std::size_t skipped_nonsmooth = 0;
  bool passed = false;
};

struct FiniteDiffOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double rel_floor = 1e-6;
  /// Skip entries whose +/- perturbation crosses a branch of a piecewise
  /// primitive; central differences are meaningless across a kink.
  bool skip_nonsmooth = true;
};

/// Computes analytic gradients with backward(), then compares them against
/// central differences for every entry of every parameter.
FiniteDiffReport finite_diff_check(const LossFn& loss, ParamStore& params,
                                   const FiniteDiffOptions& opts = {});

/// Same comparison, but uses whatever gradients are already accumulated in
/// `params` as the analytic side.
FiniteDiffReport finite_diff_compare(const LossFn& loss, ParamStore& params,
                                     const FiniteDiffOptions& opts = {});

}  // namespace powerlink::ad
