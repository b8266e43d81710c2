#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "updown/param_store.hpp"
#include "updown/tensor.hpp"

namespace updown {

enum class OpKind : std::uint8_t {
  constant,
  input,
  param,
  matmul,
  matmul_nt,
  affine,
  add,
  sub,
  tanh,
  sigmoid,
  softmax_row,
  log_softmax_row,
  hadamard,
  concat_rows,
  concat_cols,
  mean_rows,
  row_lookup,
  scalar_mul,
  slice_rows,
  slice_cols,
  tile_rows,
  sum,
  pick_sum,
  bce,
};

std::string_view op_name(OpKind kind);

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Extra arguments for the dispatching entry point Graph::apply.
struct OpArgs {
  double scalar = 1.0;
  std::vector<std::size_t> indices;
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction and backward is a single reverse sweep. A graph is
/// built fresh for every training step and discarded afterwards. Parameter
/// leaves alias the ParamStore tensors; their gradients accumulate directly
/// into Parameter::grad.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the graph (used by gradient checks).
  Var input(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward root w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const;
  OpKind kind(Var v) const { return nodes_[v.id].kind; }
  std::size_t size() const { return nodes_.size(); }

  // a (m x k) * b (k x n)
  Var matmul(Var a, Var b);
  // a (m x k) * b^T, b is (n x k)
  Var matmul_nt(Var a, Var b);
  // x (m x k) * w^T + bias, w is (n x k), bias is (1 x n)
  Var affine(Var x, Var w, Var bias);
  // b may be a single row broadcast over the rows of a
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softmax_row(Var a);
  Var log_softmax_row(Var a);
  Var hadamard(Var a, Var b);
  // vertical stack
  Var concat_rows(std::span<const Var> parts);
  // horizontal concatenation
  Var concat_cols(std::span<const Var> parts);
  Var mean_rows(Var a);
  Var row_lookup(Var table, std::vector<std::size_t> ids);
  Var scalar_mul(Var a, double s);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var tile_rows(Var a, std::size_t times);
  Var sum(Var a);
  /// sum_r weights[r] * a[r, cols[r]]
  Var pick_sum(Var a, std::vector<std::size_t> cols, std::vector<double> weights);
  /// Mean binary cross-entropy of probabilities against constant targets,
  /// probabilities clamped to [clamp, 1 - clamp].
  Var bce(Var probs, Tensor targets, double clamp = 1e-12);

  /// Dispatch by kind for the primitive set. Unary kinds use inputs[0];
  /// scalar_mul reads args.scalar, row_lookup reads args.indices.
  Var apply(OpKind kind, std::span<const Var> inputs, const OpArgs& args = {});

  /// Propagates d(root)/d(node) to every node reachable from `root`, which
  /// must be 1x1. A second call requires reset_grads() first.
  void backward(Var root);
  void reset_grads();

 private:
  struct Node {
    explicit Node(OpKind k) : kind(k) {}
    OpKind kind;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    double scalar = 0.0;
    std::vector<std::size_t> indices;
    std::vector<double> weights;
    Tensor aux;
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  Tensor& grad_slot(Node& n);
  void backward_node(Node& n);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace updown
