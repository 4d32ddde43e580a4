#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "claver/numerics/matrix.hpp"

// Minimal matrix-valued reverse-mode tape.
//
// Every op appends a node holding its value; nodes whose inputs need gradients
// also keep a closure that pushes the output adjoint back to the inputs.
// Nodes are appended after their inputs, so walking ids downwards is a
// reverse topological order.

namespace claver::ad {

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& out_grad)>;

  /// With recording off, no closures are kept; use for inference.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that receives a gradient.
  Var parameter(Matrix value);
  /// Leaf that never receives a gradient (inputs, masks).
  Var constant(Matrix value);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Adjoint of a node after backward(); a zero matrix if nothing reached it.
  const Matrix& grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

  /// Seeds d(output)/d(output) = 1 and propagates. output must be 1x1.
  void backward(Var output);

  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  void accumulate(std::size_t id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

// Linear algebra.
Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
/// Adds a constant (e.g. an additive -inf mask); no gradient flows into it.
Var add_constant(Var a, const Matrix& c);

// Row-wise nonlinearities.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// gain and bias are 1 x cols.
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
/// Exact (erf) GELU.
Var gelu(Var a);
/// Scales each row to unit L2 norm; a zero row throws NumericalError.
Var normalize_rows(Var a);

// Structural ops.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> indices);
/// Stacks `times` copies of a vertically.
Var tile_rows(Var a, std::size_t times);
/// Repeats each row `times` times in place (row r -> rows r*times .. r*times+times-1).
Var repeat_rows(Var a, std::size_t times);

// Reductions.
/// Column means as a 1 x cols row. Each column is summed in sorted order, so
/// the result does not depend on the order of the rows.
Var mean_rows(Var a);
Var sum_all(Var a);
/// -sum_r logprobs(r, targets[r]) as a 1x1.
Var nll_sum(Var logprobs, std::span<const std::size_t> targets);

}  // namespace claver::ad
