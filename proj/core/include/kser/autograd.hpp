#pragma once

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// A Graph records one forward pass. Every op returns a Var handle and pushes a
// node whose backward closure accumulates into its parents' gradients. Nodes
// are stored in creation order, so reverse iteration is a valid topological
// order. Batched sequence data is laid out as (batch * rows) x cols so that a
// row-major reshape between B x (R*C) and (B*R) x C is free.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace kser {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;
  /// Embedding tables: row 0 is the pad token, kept at zero and never updated.
  bool pad_row = false;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Mat& value() const;
  long rows() const { return value().rows(); }
  long cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant input (no gradient).
  Var constant(Mat value);
  /// Leaf bound to a parameter. Gradients flow into p.grad when p.trainable.
  Var param(Parameter& p);

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Adds `g` into the gradient of node `id` (allocating it on first use).
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(value(id).rows(), value(id).cols());
    n.grad += g;
  }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Creates a node; needs_grad is true if any parent needs it.
  Var push(Mat value, std::initializer_list<Var> parents, Backward back);
  Var push(Mat value, std::span<const Var> parents, Backward back);
  /// Node without graph parents whose backward writes elsewhere (e.g. straight
  /// into a parameter's gradient).
  Var push_source(Mat value, bool needs_grad, Backward back);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and runs reverse accumulation.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;  // unused for parameter leaves, which read param->value
    Mat grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward back;
  };
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return graph_->value(id_); }

// ---- elementwise / linear algebra -------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a (r x c) + bias (1 x c) broadcast over rows.
Var add_row_bias(Var a, Var bias);
Var relu(Var a);
Var sigmoid(Var a);
/// Forward value of `a`, gradient blocked.
Var detach(Var a);

// ---- shape ops ----------------------------------------------------------------

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, long start, long len);
/// Row-major reshape (no data movement).
Var reshape(Var a, long rows, long cols);
/// Each column repeated `times` times consecutively: [a b] -> [a a b b].
Var repeat_cols(Var a, long times);
/// Each row repeated `times` times consecutively.
Var repeat_rows(Var a, long times);
/// Per-row sum -> r x 1.
Var row_sum(Var a);
/// Sum of all entries -> 1 x 1.
Var sum_all(Var a);

// ---- grouped ops over (B*G) x w layouts ---------------------------------------

/// Table lookup. Index 0 of a pad_row table yields zeros and receives no gradient.
Var embedding_lookup(Graph& g, Parameter& table, std::span<const int> indices);

/// Mean over the rows of each group whose mask is set; an all-masked group
/// yields zeros. x is (B*G) x w, mask has B*G entries, result is B x w.
Var masked_mean_groups(Var x, std::span<const std::uint8_t> mask, long group);

/// Row-wise softmax restricted to masked entries of a B x G score matrix;
/// masked-out entries get probability 0, an all-masked row is all zeros.
Var masked_softmax(Var scores, std::span<const std::uint8_t> mask);

/// out[b] = sum_g p[b, g] * x[b*G + g]; p is B x G, x is (B*G) x w.
Var weighted_sum_groups(Var p, Var x);

/// Multi-head attention on grouped rows.
///
/// q is (B*Rq) x dq, k is (B*Rk) x dq, v is (B*Rk) x dv. Within each sample b
/// and head h (columns split evenly), out = softmax(scale * Q Kᵀ) V. Returns
/// (B*Rq) x dv. If `probs` is non-null it receives the attention matrices as a
/// (B*heads*Rq) x Rk matrix, ordered sample-major then head then query row.
Var grouped_attention(Var q, Var k, Var v, long rq, long rk, long heads, double scale,
                      Mat* probs = nullptr);

/// Mean binary cross-entropy of logits (B x 1) against labels in {0, 1}.
Var bce_with_logits(Var logits, std::span<const double> labels);

}  // namespace kser
