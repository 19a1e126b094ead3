#include "mrp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "mrp/error.hpp"

namespace mrp::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::scale: return "scale";
    case Op::hadamard: return "hadamard";
    case Op::concat: return "concat";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::smooth_abs: return "smooth-abs";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::log_softmax: return "log-softmax";
    case Op::cosine_similarity: return "cosine-similarity";
    case Op::detach: return "detach";
  }
  return "?";
}

std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "," + std::to_string(s.cols) + "]";
}

namespace {

std::string describe(const Graph& g, NodeId id) {
  const Node& n = g.node(id);
  std::string out = "node " + std::to_string(id.index) + " (" + std::string(op_name(n.op));
  if (!n.name.empty()) out += " '" + n.name + "'";
  return out + " " + to_string(n.shape) + ")";
}

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw Error(ErrorCode::shape_mismatch, std::string(op) + ": " + detail);
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_id(NodeId id, std::string_view op) const {
  if (id.index >= nodes_.size()) {
    shape_error(op, "unknown parent node " + std::to_string(id.index));
  }
}

NodeId Graph::input(Shape shape, std::string name) {
  if (shape.rows == 0 || shape.cols == 0) shape_error("input", "extents must be positive");
  Node n;
  n.op = Op::input;
  n.shape = shape;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.shape = Shape{value.rows(), value.cols()};
  if (n.shape.numel() == 0) shape_error("constant", "empty tensor");
  n.value = std::make_shared<const Tensor>(
      Tensor({n.shape.rows, n.shape.cols}, std::vector<double>(value.values())));
  return push(std::move(n));
}

NodeId Graph::ones(Shape shape) {
  const auto key = std::make_pair(shape.rows, shape.cols);
  if (auto it = ones_cache_.find(key); it != ones_cache_.end()) return it->second;
  NodeId id = constant(Tensor::filled(shape.rows, shape.cols, 1.0));
  ones_cache_.emplace(key, id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  Shape sa = shape(a);
  Shape sb = shape(b);
  if (trans_a) std::swap(sa.rows, sa.cols);
  if (trans_b) std::swap(sb.rows, sb.cols);
  if (sa.cols != sb.rows) {
    shape_error("matmul", describe(*this, a) + (trans_a ? "^T" : "") + " x " +
                              describe(*this, b) + (trans_b ? "^T" : "") +
                              ": inner extents differ");
  }
  Node n;
  n.op = Op::matmul;
  n.parents = {a, b};
  n.arity = 2;
  n.shape = Shape{sa.rows, sb.cols};
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  return push(std::move(n));
}

NodeId Graph::elementwise(Op op, NodeId a, NodeId b) {
  check_id(a, op_name(op));
  check_id(b, op_name(op));
  if (shape(a) != shape(b)) {
    shape_error(op_name(op), describe(*this, a) + " vs " + describe(*this, b));
  }
  Node n;
  n.op = op;
  n.parents = {a, b};
  n.arity = 2;
  n.shape = shape(a);
  return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a) {
  check_id(a, op_name(op));
  Node n;
  n.op = op;
  n.parents = {a, NodeId{}};
  n.arity = 1;
  n.shape = shape(a);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return elementwise(Op::add, a, b); }
NodeId Graph::subtract(NodeId a, NodeId b) { return elementwise(Op::subtract, a, b); }
NodeId Graph::hadamard(NodeId a, NodeId b) { return elementwise(Op::hadamard, a, b); }

NodeId Graph::scale(NodeId a, double factor) {
  NodeId id = unary(Op::scale, a);
  nodes_.back().factor = factor;
  return id;
}

NodeId Graph::concat(NodeId a, NodeId b) {
  check_id(a, "concat");
  check_id(b, "concat");
  if (shape(a).cols != shape(b).cols) {
    shape_error("concat", describe(*this, a) + " and " + describe(*this, b) +
                              " have different column counts");
  }
  Node n;
  n.op = Op::concat;
  n.parents = {a, b};
  n.arity = 2;
  n.shape = Shape{shape(a).rows + shape(b).rows, shape(a).cols};
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
  NodeId id = unary(Op::sum, a);
  nodes_.back().shape = Shape{1, 1};
  return id;
}

NodeId Graph::mean(NodeId a) {
  NodeId id = unary(Op::mean, a);
  nodes_.back().shape = Shape{1, 1};
  return id;
}

NodeId Graph::sigmoid(NodeId a) { return unary(Op::sigmoid, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::tanh, a); }
NodeId Graph::smooth_abs(NodeId a) { return unary(Op::smooth_abs, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::log, a); }
NodeId Graph::log_softmax(NodeId a) { return unary(Op::log_softmax, a); }
NodeId Graph::detach(NodeId a) { return unary(Op::detach, a); }

NodeId Graph::cosine_similarity(NodeId a, NodeId b) {
  check_id(a, "cosine-similarity");
  check_id(b, "cosine-similarity");
  if (shape(a).rows != shape(b).rows) {
    shape_error("cosine-similarity", describe(*this, a) + " and " + describe(*this, b) +
                                         " have different vector lengths");
  }
  Node n;
  n.op = Op::cosine_similarity;
  n.parents = {a, b};
  n.arity = 2;
  n.shape = Shape{shape(a).cols, shape(b).cols};
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// forward

namespace {

Tensor make(Shape s) { return Tensor::zeros(s.rows, s.cols); }

Tensor eval_matmul(const Tensor& a, const Tensor& b, const Node& n) {
  Tensor out = make(n.shape);
  const std::size_t inner = n.trans_a ? a.rows() : a.cols();
  const std::size_t acols = a.cols();
  const std::size_t bcols = b.cols();
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n.shape.rows; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = n.trans_a ? ad[k * acols + i] : ad[i * acols + k];
      if (av == 0.0) continue;
      double* orow = od.data() + i * n.shape.cols;
      if (!n.trans_b) {
        const double* brow = bd.data() + k * bcols;
        for (std::size_t j = 0; j < n.shape.cols; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n.shape.cols; ++j) orow[j] += av * bd[j * bcols + k];
      }
    }
  }
  return out;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out = a;
  auto od = out.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(od[i], bd[i]);
  return out;
}

Tensor eval_log_softmax(const Tensor& a) {
  Tensor out = a;
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  for (std::size_t c = 0; c < n; ++c) {
    double mx = a(0, c);
    for (std::size_t r = 1; r < m; ++r) mx = std::max(mx, a(r, c));
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += std::exp(a(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t r = 0; r < m; ++r) out(r, c) = a(r, c) - lse;
  }
  return out;
}

}  // namespace

Values forward(const Graph& graph, const Bindings& bindings) {
  std::vector<Tensor> vals;
  vals.reserve(graph.size());
  for (std::uint32_t i = 0; i < graph.size(); ++i) {
    const NodeId id{i};
    const Node& n = graph.node(id);
    auto arg = [&](int k) -> const Tensor& { return vals[n.parents[k].index]; };
    Tensor out;
    switch (n.op) {
      case Op::input: {
        auto it = bindings.find(id);
        if (it == bindings.end()) {
          throw Error(ErrorCode::unbound_input, "forward: unbound " + describe(graph, id));
        }
        const Tensor& t = it->second;
        if (t.rows() != n.shape.rows || t.cols() != n.shape.cols) {
          std::ostringstream os;
          os << "forward: binding for " << describe(graph, id) << " has shape [";
          for (std::size_t k = 0; k < t.shape().size(); ++k) os << (k ? "," : "") << t.shape()[k];
          os << "]";
          throw Error(ErrorCode::shape_mismatch, os.str());
        }
        out = Tensor({n.shape.rows, n.shape.cols}, std::vector<double>(t.values()));
        break;
      }
      case Op::constant: out = *n.value; break;
      case Op::matmul: out = eval_matmul(arg(0), arg(1), n); break;
      case Op::add: out = map_binary(arg(0), arg(1), [](double x, double y) { return x + y; }); break;
      case Op::subtract:
        out = map_binary(arg(0), arg(1), [](double x, double y) { return x - y; });
        break;
      case Op::hadamard:
        out = map_binary(arg(0), arg(1), [](double x, double y) { return x * y; });
        break;
      case Op::scale: {
        const double f = n.factor;
        out = map_unary(arg(0), [f](double x) { return f * x; });
        break;
      }
      case Op::concat: {
        out = make(n.shape);
        const Tensor& a = arg(0);
        const Tensor& b = arg(1);
        std::copy(a.data().begin(), a.data().end(), out.data().begin());
        std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
        break;
      }
      case Op::sum:
      case Op::mean: {
        double s = 0.0;
        for (double v : arg(0).data()) s += v;
        if (n.op == Op::mean) s /= static_cast<double>(arg(0).size());
        out = Tensor::scalar(s);
        break;
      }
      case Op::sigmoid:
        out = map_unary(arg(0), [](double x) {
          if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        });
        break;
      case Op::tanh: out = map_unary(arg(0), [](double x) { return std::tanh(x); }); break;
      case Op::smooth_abs:
        out = map_unary(arg(0), [](double x) { return std::sqrt(x * x + kSmoothAbsEps); });
        break;
      case Op::exp: out = map_unary(arg(0), [](double x) { return std::exp(x); }); break;
      case Op::log: {
        for (double v : arg(0).data()) {
          if (!(v > 0.0)) {
            throw Error(ErrorCode::domain, "forward: " + describe(graph, id) +
                                               " received non-positive input " +
                                               std::to_string(v));
          }
        }
        out = map_unary(arg(0), [](double x) { return std::log(x); });
        break;
      }
      case Op::log_softmax: out = eval_log_softmax(arg(0)); break;
      case Op::cosine_similarity: {
        const Tensor& a = arg(0);
        const Tensor& b = arg(1);
        const std::size_t d = a.rows();
        auto norms = [&](const Tensor& t, const char* side) {
          std::vector<double> nr(t.cols());
          for (std::size_t c = 0; c < t.cols(); ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < d; ++r) s += t(r, c) * t(r, c);
            nr[c] = std::sqrt(s);
            if (!(nr[c] > 0.0)) {
              throw Error(ErrorCode::domain, "forward: " + describe(graph, id) + " " + side +
                                                 " column " + std::to_string(c) +
                                                 " has zero norm; cosine undefined");
            }
          }
          return nr;
        };
        const auto na = norms(a, "left");
        const auto nb = norms(b, "right");
        out = make(n.shape);
        for (std::size_t i = 0; i < a.cols(); ++i) {
          for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < d; ++r) s += a(r, i) * b(r, j);
            out(i, j) = s / (na[i] * nb[j]);
          }
        }
        break;
      }
      case Op::detach: out = arg(0); break;
    }
    if (!out.all_finite()) {
      throw Error(ErrorCode::non_finite, "forward: non-finite value at " + describe(graph, id));
    }
    vals.push_back(std::move(out));
  }
  return Values(std::move(vals));
}

// ---------------------------------------------------------------------------
// reverse mode

NodeId GradientMap::at(NodeId wrt) const {
  for (const auto& [k, v] : entries_) {
    if (k == wrt) return v;
  }
  throw Error(ErrorCode::invalid_argument,
              "gradient map has no entry for node " + std::to_string(wrt.index));
}

namespace {

// Selection matrix picking `count` rows starting at `offset` out of `total`.
Tensor row_selector(std::size_t offset, std::size_t count, std::size_t total) {
  Tensor s = Tensor::zeros(count, total);
  for (std::size_t i = 0; i < count; ++i) s(i, offset + i) = 1.0;
  return s;
}

// ones[m,1] * (ones[1,m] * x): column sums of x broadcast back over rows.
NodeId column_sum_broadcast(Graph& g, NodeId x) {
  const Shape s = g.shape(x);
  NodeId colsum = g.matmul(g.ones({1, s.rows}), x);
  return g.matmul(g.ones({s.rows, 1}), colsum);
}

// Column-normalised copy of x and the broadcast reciprocal norms.
std::pair<NodeId, NodeId> normalise_columns(Graph& g, NodeId x) {
  const Shape s = g.shape(x);
  NodeId sq = g.matmul(g.ones({1, s.rows}), g.hadamard(x, x));
  NodeId inv = g.exp(g.scale(g.log(sq), -0.5));
  NodeId inv_b = g.matmul(g.ones({s.rows, 1}), inv);
  return {g.hadamard(x, inv_b), inv_b};
}

// Adjoint of x given the adjoint of its normalised form.
NodeId normalise_backward(Graph& g, NodeId unit, NodeId inv_b, NodeId d_unit) {
  NodeId proj = column_sum_broadcast(g, g.hadamard(unit, d_unit));
  return g.hadamard(g.subtract(d_unit, g.hadamard(unit, proj)), inv_b);
}

}  // namespace

GradientMap gradient(Graph& g, NodeId output, const std::vector<NodeId>& wrt) {
  if (output.index >= g.size()) {
    throw Error(ErrorCode::invalid_argument, "gradient: unknown output node");
  }
  if (g.shape(output) != Shape{1, 1}) {
    throw Error(ErrorCode::non_scalar_output,
                "gradient: output " + describe(g, output) + " is not scalar");
  }

  std::vector<NodeId> targets;
  for (NodeId w : wrt) {
    if (w.index >= g.size()) {
      throw Error(ErrorCode::invalid_argument,
                  "gradient: unknown wrt node " + std::to_string(w.index));
    }
    if (std::find(targets.begin(), targets.end(), w) == targets.end()) targets.push_back(w);
  }

  // Which nodes lie downstream of a target without crossing a detach.
  const std::size_t n_fwd = output.index + 1;
  std::vector<char> depends(n_fwd, 0);
  for (NodeId w : targets) {
    if (w.index < n_fwd) depends[w.index] = 1;
  }
  for (std::uint32_t i = 0; i < n_fwd; ++i) {
    if (depends[i]) continue;
    const Node& n = g.node(NodeId{i});
    if (n.op == Op::detach || n.op == Op::input || n.op == Op::constant) continue;
    for (int k = 0; k < n.arity; ++k) {
      if (depends[n.parents[k].index]) {
        depends[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<NodeId>> adj(n_fwd);
  auto accumulate = [&](NodeId target, NodeId contribution) {
    auto& slot = adj[target.index];
    slot = slot ? g.add(*slot, contribution) : contribution;
  };

  if (depends[output.index]) adj[output.index] = g.ones({1, 1});

  for (std::int64_t i = output.index; i >= 0; --i) {
    const NodeId id{static_cast<std::uint32_t>(i)};
    if (!adj[id.index] || !depends[id.index]) continue;
    // Copy: g.* calls below may reallocate the node storage.
    const Node n = g.node(id);
    if (n.op == Op::input || n.op == Op::constant || n.op == Op::detach) continue;
    const NodeId G = *adj[id.index];
    const NodeId a = n.parents[0];
    const NodeId b = n.parents[1];
    const bool need_a = depends[a.index];
    const bool need_b = n.arity == 2 && depends[b.index];

    switch (n.op) {
      case Op::matmul: {
        const bool ta = n.trans_a;
        const bool tb = n.trans_b;
        if (need_a) {
          NodeId da;
          if (!ta && !tb) da = g.matmul(G, b, false, true);
          else if (ta && !tb) da = g.matmul(b, G, false, true);
          else if (!ta && tb) da = g.matmul(G, b, false, false);
          else da = g.matmul(b, G, true, true);
          accumulate(a, da);
        }
        if (need_b) {
          NodeId db;
          if (!ta && !tb) db = g.matmul(a, G, true, false);
          else if (ta && !tb) db = g.matmul(a, G, false, false);
          else if (!ta && tb) db = g.matmul(G, a, true, false);
          else db = g.matmul(G, a, true, true);
          accumulate(b, db);
        }
        break;
      }
      case Op::add:
        if (need_a) accumulate(a, G);
        if (need_b) accumulate(b, G);
        break;
      case Op::subtract:
        if (need_a) accumulate(a, G);
        if (need_b) accumulate(b, g.scale(G, -1.0));
        break;
      case Op::scale:
        if (need_a) accumulate(a, g.scale(G, n.factor));
        break;
      case Op::hadamard:
        if (need_a) accumulate(a, g.hadamard(G, b));
        if (need_b) accumulate(b, g.hadamard(G, a));
        break;
      case Op::concat: {
        const std::size_t ra = g.shape(a).rows;
        const std::size_t rb = g.shape(b).rows;
        if (need_a) accumulate(a, g.matmul(g.constant(row_selector(0, ra, ra + rb)), G));
        if (need_b) accumulate(b, g.matmul(g.constant(row_selector(ra, rb, ra + rb)), G));
        break;
      }
      case Op::sum:
      case Op::mean: {
        const Shape s = g.shape(a);
        NodeId spread = g.matmul(g.matmul(g.ones({s.rows, 1}), G), g.ones({1, s.cols}));
        if (n.op == Op::mean) spread = g.scale(spread, 1.0 / static_cast<double>(s.numel()));
        accumulate(a, spread);
        break;
      }
      case Op::sigmoid:
        accumulate(a, g.hadamard(G, g.subtract(id, g.hadamard(id, id))));
        break;
      case Op::tanh:
        accumulate(a, g.subtract(G, g.hadamard(G, g.hadamard(id, id))));
        break;
      case Op::smooth_abs: {
        NodeId inv = g.exp(g.scale(g.log(id), -1.0));
        accumulate(a, g.hadamard(G, g.hadamard(a, inv)));
        break;
      }
      case Op::exp: accumulate(a, g.hadamard(G, id)); break;
      case Op::log: accumulate(a, g.hadamard(G, g.exp(g.scale(id, -1.0)))); break;
      case Op::log_softmax:
        accumulate(a, g.subtract(G, g.hadamard(g.exp(id), column_sum_broadcast(g, G))));
        break;
      case Op::cosine_similarity: {
        auto [ua, inv_a] = normalise_columns(g, a);
        auto [ub, inv_b] = normalise_columns(g, b);
        if (need_a) accumulate(a, normalise_backward(g, ua, inv_a, g.matmul(ub, G, false, true)));
        if (need_b) accumulate(b, normalise_backward(g, ub, inv_b, g.matmul(ua, G)));
        break;
      }
      case Op::input:
      case Op::constant:
      case Op::detach: break;
    }
  }

  GradientMap result;
  for (NodeId w : targets) {
    std::optional<NodeId> grad = w.index < n_fwd ? adj[w.index] : std::nullopt;
    if (!grad) {
      const Shape s = g.shape(w);
      grad = g.constant(Tensor::zeros(s.rows, s.cols));
    }
    result.entries_.emplace_back(w, *grad);
  }
  return result;
}

}  // namespace mrp::ad
