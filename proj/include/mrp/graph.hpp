#ifndef MRP_GRAPH_HPP
#define MRP_GRAPH_HPP

// Dense-tensor expression graph with reverse-mode differentiation.
//
// Every node holds a matrix-shaped value ([rows, cols]; column vectors are
// [n, 1], scalars [1, 1]). gradient() appends the adjoint computation to the
// same graph using only the primitive op set, so the returned gradient nodes
// are ordinary nodes and can be differentiated again. Nodes are appended in
// topological order; a node's parents always have smaller ids, which keeps
// the graph acyclic by construction.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrp/tensor.hpp"

namespace mrp::ad {

/// Smoothing constant of smooth_abs: |x| ~ sqrt(x^2 + eps).
inline constexpr double kSmoothAbsEps = 1e-8;

enum class Op : std::uint8_t {
  input,
  constant,
  matmul,
  add,
  subtract,
  scale,
  hadamard,
  concat,
  sum,
  mean,
  sigmoid,
  tanh,
  smooth_abs,
  exp,
  log,
  log_softmax,
  cosine_similarity,
  detach,
};

std::string_view op_name(Op op);

struct NodeId {
  std::uint32_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t numel() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(Shape s);

struct Node {
  Op op = Op::input;
  std::array<NodeId, 2> parents{};
  std::uint8_t arity = 0;
  Shape shape;
  double factor = 0.0;  // scale
  bool trans_a = false;  // matmul
  bool trans_b = false;
  std::string name;                      // input
  std::shared_ptr<const Tensor> value;  // constant
};

class Graph {
 public:
  NodeId input(Shape shape, std::string name);
  NodeId constant(Tensor value);
  /// Cached all-ones constant; used to express broadcasts and reductions.
  NodeId ones(Shape shape);

  /// op(a) * op(b) where op transposes when the flag is set.
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId subtract(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId hadamard(NodeId a, NodeId b);
  /// Row-wise stacking: [m1, n] and [m2, n] give [m1 + m2, n].
  NodeId concat(NodeId a, NodeId b);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId smooth_abs(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  /// Column-wise log-softmax of an [m, n] matrix.
  NodeId log_softmax(NodeId a);
  /// Pairwise cosine similarity of the columns: a [d, n], b [d, m] give
  /// [n, m] with entry (i, j) = cos(a_i, b_j).
  NodeId cosine_similarity(NodeId a, NodeId b);
  NodeId detach(NodeId a);

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  Shape shape(NodeId id) const { return node(id).shape; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  NodeId push(Node node);
  void check_id(NodeId id, std::string_view op) const;
  NodeId unary(Op op, NodeId a);
  NodeId elementwise(Op op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  std::map<std::pair<std::size_t, std::size_t>, NodeId> ones_cache_;
};

using Bindings = std::map<NodeId, Tensor>;

/// Values of every node of a graph after a forward pass.
class Values {
 public:
  explicit Values(std::vector<Tensor> values) : values_(std::move(values)) {}
  const Tensor& operator[](NodeId id) const { return values_.at(id.index); }
  double scalar(NodeId id) const { return values_.at(id.index)[0]; }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  std::vector<Tensor> values_;
};

/// Evaluates every node. Throws Error(unbound_input) for a missing binding,
/// Error(shape_mismatch) for a binding of the wrong shape, and
/// Error(non_finite / domain) naming the node where a finite input produced
/// a non-finite or undefined value.
Values forward(const Graph& graph, const Bindings& bindings);

/// Gradient expressions of a scalar output, one per requested node.
class GradientMap {
 public:
  NodeId at(NodeId wrt) const;
  std::size_t size() const noexcept { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  friend GradientMap gradient(Graph&, NodeId, const std::vector<NodeId>&);
  std::vector<std::pair<NodeId, NodeId>> entries_;
};

/// Appends reverse-mode gradient nodes of `output` with respect to `wrt`.
/// Nodes unreachable from the output (or cut off by detach) get a zero
/// constant. Throws Error(non_scalar_output) when `output` is not [1, 1].
GradientMap gradient(Graph& graph, NodeId output, const std::vector<NodeId>& wrt);

}  // namespace mrp::ad

#endif  // MRP_GRAPH_HPP
