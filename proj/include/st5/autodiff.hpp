#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>

#include "st5/tensor.hpp"

namespace st5 {

using IntMatrix = RowMatrix<std::int32_t>;

namespace ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the
// lifetime of the tape that produced it.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  const Matrix& mat() const { return value().mat(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of forward operations. Nodes are appended in execution
// order, which is a topological order of the graph, so backward() is a
// single reverse sweep.
//
// In Inference mode no backward closures are kept; values are still stored
// so that Vars remain readable.
class Tape {
 public:
  enum class Mode { Record, Inference };

  // upstream: adjoint of this node's output, same storage shape as its value.
  using BackwardFn = std::function<void(const Matrix& upstream, Tape& tape)>;

  explicit Tape(Mode mode = Mode::Record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input tensor; participates in backward iff value.requires_grad().
  Var leaf(Tensor value);
  Var parameter(Tensor value) { return leaf(std::move(value.set_requires_grad(true))); }
  Var constant(Tensor value) { return leaf(std::move(value.set_requires_grad(false))); }

  // Appends an op result. Rejects non-finite values.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Returns
  // the number of backward closures invoked.
  std::size_t backward(const Var& loss);

  // Adjoint of `v`; zeros when `v` received no gradient.
  Tensor grad(const Var& v) const;
  bool has_grad(const Var& v) const { return node(v).has_grad; }
  bool requires_grad(const Var& v) const { return node(v).requires_grad; }

  // Used by backward closures.
  void accumulate(const Var& v, const Matrix& g);

  bool recording() const { return mode_ == Mode::Record; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  const Node& node(const Var& v) const;
  Node& node(const Var& v);

  std::deque<Node> nodes_;
  Mode mode_;
  bool consumed_ = false;
};

// ---- differentiable operations -------------------------------------------

// a: [..., k] (leading dims flattened), b: [k x n] -> [..., n]
Var matmul(const Var& a, const Var& b);
// a: [m x k], b: [n x k] -> a * b^T : [m x n]
Var matmul_transposed(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var relu(const Var& a);
Var reshape(const Var& a, Shape shape);

// Concatenates two matrices with equal row counts along columns.
Var hcat(const Var& a, const Var& b);

// Row-wise RMS normalization with learned gain: x * g / sqrt(mean(x^2) + eps).
Var rms_norm(const Var& x, const Var& gain, double eps = 1e-6);

// Embedding lookup: rows of `table` selected by `ids` taken in row-major
// order. Result is [ids.size() x d].
Var gather_rows(const Var& table, const IntMatrix& ids);

// Picks rows of a 2-D view of x (leading dims flattened).
Var select_rows(const Var& x, std::span<const Index> rows);

// x: [batch*len x d] (or [batch x len x d]); mask: batch x len of {0,1}.
// Returns [batch x d], each row the mean over unmasked positions.
Var masked_mean_rows(const Var& x, const IntMatrix& mask);

Var l2_normalize_rows(const Var& x);
Var softmax_rows(const Var& x, double temperature);

// Mean over rows i of -log softmax(logits_i / temperature)[i]. Requires
// cols >= rows; column i is the label of row i. -inf logits are allowed and
// carry no mass.
Var cross_entropy_diagonal(const Var& logits, double temperature);

struct AttentionLayout {
  Index batch = 0;
  Index q_len = 0;
  Index k_len = 0;
  Index heads = 1;
  double scale = 1.0;
  bool causal = false;
  const IntMatrix* key_mask = nullptr;  // batch x k_len, nonzero = attend
  const IntMatrix* buckets = nullptr;   // q_len x k_len indices into rel_bias rows
};

// Multi-head scaled dot-product attention. q: [batch*q_len x D],
// k, v: [batch*k_len x D]. rel_bias, when given, is a [buckets x heads]
// table added to the logits via layout.buckets. Masked logits are -inf.
Var attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout,
              const std::optional<Var>& rel_bias = std::nullopt);

}  // namespace ad
}  // namespace st5
