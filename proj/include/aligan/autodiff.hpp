// Reverse-mode differentiation over small dense tensors.
//
// A Graph is a static, define-then-run program: nodes are appended in
// topological order while building expressions, and the same graph can be
// evaluated many times against different input bindings and parameter sets.
// Evaluation state lives in an Evaluation object, so one Graph may be shared
// read-only between threads.
//
// Tensors are row-major dense matrices. A scalar is a 1x1 tensor, a bias is a
// 1xN row, and a minibatch is a BxN matrix with one sample per row.

#ifndef ALIGAN_AUTODIFF_HPP
#define ALIGAN_AUTODIFF_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace aligan::ad {

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using FlatVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnboundInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

// ---------------------------------------------------------------------------
// ParameterSet: named trainable tensors, ordered by name.
// ---------------------------------------------------------------------------

template <typename Scalar>
class ParameterSet {
 public:
  using TensorType = Tensor<Scalar>;
  using Storage = std::map<std::string, TensorType, std::less<>>;

  ParameterSet() = default;

  void set(std::string name, TensorType value) { entries_[std::move(name)] = std::move(value); }

  [[nodiscard]] bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  [[nodiscard]] const TensorType& at(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  [[nodiscard]] TensorType& at(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }

  // Total number of scalar weights.
  [[nodiscard]] Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  // Entries whose names start with `prefix`.
  [[nodiscard]] ParameterSet filtered(std::string_view prefix) const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) {
      if (std::string_view(name).starts_with(prefix)) out.entries_.emplace(name, t);
    }
    return out;
  }

  [[nodiscard]] ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.entries_.emplace(name, TensorType::Zero(t.rows(), t.cols()));
    return out;
  }

  // Concatenation of all entries in name order.
  [[nodiscard]] FlatVector<Scalar> flatten() const {
    FlatVector<Scalar> out(parameter_count());
    Eigen::Index offset = 0;
    for (const auto& [name, t] : entries_) {
      out.segment(offset, t.size()) = t.template reshaped<Eigen::RowMajor>();
      offset += t.size();
    }
    return out;
  }

  void assign_flat(const FlatVector<Scalar>& flat) {
    if (flat.size() != parameter_count()) throw ShapeError("flat parameter vector has wrong length");
    Eigen::Index offset = 0;
    for (auto& [name, t] : entries_) {
      t.template reshaped<Eigen::RowMajor>() = flat.segment(offset, t.size());
      offset += t.size();
    }
  }

  // Flat indices -> (name, element) lookup, in flatten() order.
  [[nodiscard]] std::vector<std::pair<std::string, Eigen::Index>> flat_index() const {
    std::vector<std::pair<std::string, Eigen::Index>> out;
    out.reserve(static_cast<std::size_t>(parameter_count()));
    for (const auto& [name, t] : entries_) {
      for (Eigen::Index i = 0; i < t.size(); ++i) out.emplace_back(name, i);
    }
    return out;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& [name, t] : entries_) {
      if (!t.allFinite()) return false;
    }
    return true;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto ia = a.entries_.begin();
    auto ib = b.entries_.begin();
    for (; ia != a.entries_.end(); ++ia, ++ib) {
      if (ia->first != ib->first) return false;
      if (ia->second.rows() != ib->second.rows() || ia->second.cols() != ib->second.cols()) return false;
      if (ia->second != ib->second) return false;
    }
    return true;
  }

 private:
  Storage entries_;
};

// Union of two sets; names in `b` override names in `a`.
template <typename Scalar>
ParameterSet<Scalar> merged(const ParameterSet<Scalar>& a, const ParameterSet<Scalar>& b) {
  ParameterSet<Scalar> out = a;
  for (const auto& [name, t] : b) out.set(name, t);
  return out;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
  Input,
  Parameter,
  Constant,
  MatMul,    // a * b
  MatMulNT,  // a * b^T
  Add,       // a + b, b may be same shape, a 1xN row, or 1x1
  Sub,
  Mul,       // elementwise, same broadcasting as Add
  Scale,     // a * c
  AddScalar, // a + c
  Concat,    // column concatenation
  Slice,     // column block
  Relu,
  Sigmoid,
  Softmax,   // row-wise
  Log,       // optionally clamped
  Square,
  Sum,       // all elements -> 1x1
  Mean,      // all elements -> 1x1
  RowSum,    // BxN -> Bx1
  Attention, // per-row, per-head rank-one self-attention
};

[[nodiscard]] inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::Attention: return "attention";
  }
  return "?";
}

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Expr {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;
};

template <typename Scalar>
using Bindings = std::map<std::string, Tensor<Scalar>, std::less<>>;

template <typename Scalar>
class Evaluation {
 public:
  [[nodiscard]] const Tensor<Scalar>& operator[](Expr<Scalar> e) const { return values_.at(e.id); }
  [[nodiscard]] Scalar scalar(Expr<Scalar> e) const {
    const auto& t = values_.at(e.id);
    if (t.rows() != 1 || t.cols() != 1) throw ShapeError("value is not a scalar: " + shape_string(t));
    return t(0, 0);
  }
  [[nodiscard]] bool has(Expr<Scalar> e) const { return e.id < values_.size() && computed_[e.id]; }

 private:
  friend class Graph<Scalar>;
  std::vector<Tensor<Scalar>> values_;
  std::vector<char> computed_;
};

template <typename Scalar>
class Graph {
 public:
  using TensorType = Tensor<Scalar>;
  using ExprType = Expr<Scalar>;

  Graph() = default;
  // Expressions point back at their graph.
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  ExprType input(std::string name) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::Input && nodes_[i].name == name) return {this, i};
    }
    Node n;
    n.op = Op::Input;
    n.name = std::move(name);
    return push(std::move(n));
  }

  ExprType parameter(std::string name) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::Parameter && nodes_[i].name == name) return {this, i};
    }
    Node n;
    n.op = Op::Parameter;
    n.name = std::move(name);
    n.depends_on_parameter = true;
    return push(std::move(n));
  }

  ExprType constant(TensorType value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  ExprType apply(Op op, std::initializer_list<ExprType> parents, Scalar s0 = 0, Scalar s1 = 0,
                 Eigen::Index i0 = 0, Eigen::Index i1 = 0) {
    Node n;
    n.op = op;
    n.s0 = s0;
    n.s1 = s1;
    n.i0 = i0;
    n.i1 = i1;
    for (const auto& p : parents) {
      if (p.graph != this) throw std::invalid_argument("expression belongs to a different graph");
      n.in[n.arity++] = p.id;
      n.depends_on_parameter = n.depends_on_parameter || nodes_[p.id].depends_on_parameter;
    }
    return push(std::move(n));
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] Op op(ExprType e) const { return nodes_.at(e.id).op; }

  // Names of all parameter leaves referenced by the graph.
  [[nodiscard]] std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
      if (n.op == Op::Parameter) out.push_back(n.name);
    }
    return out;
  }

  // Evaluates every ancestor of `outputs`. Inputs that are not needed may be
  // left unbound.
  Evaluation<Scalar> forward(const Bindings<Scalar>& inputs, const ParameterSet<Scalar>& params,
                             std::span<const ExprType> outputs) const {
    Evaluation<Scalar> ev;
    ev.values_.resize(nodes_.size());
    ev.computed_.assign(nodes_.size(), 0);
    const auto needed = ancestors(outputs);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      // Every bound parameter leaf is materialised so backward() can report
      // zero gradients for leaves that do not reach the output.
      const bool leaf = nodes_[i].op == Op::Parameter && params.contains(nodes_[i].name);
      if (!needed[i] && !leaf) continue;
      ev.values_[i] = compute(i, ev, inputs, params);
      if (!ev.values_[i].allFinite()) {
        throw NonFiniteError("non-finite value produced by " + std::string(op_name(nodes_[i].op)) + " node " +
                             std::to_string(i) + (nodes_[i].name.empty() ? "" : " '" + nodes_[i].name + "'"));
      }
      ev.computed_[i] = 1;
    }
    return ev;
  }

  Evaluation<Scalar> forward(const Bindings<Scalar>& inputs, const ParameterSet<Scalar>& params,
                             std::initializer_list<ExprType> outputs) const {
    std::vector<ExprType> v(outputs);
    return forward(inputs, params, std::span<const ExprType>(v));
  }

  // Gradient of the scalar `output` w.r.t. every parameter leaf of the graph.
  // Leaves that do not influence `output` receive zero tensors.
  ParameterSet<Scalar> backward(const Evaluation<Scalar>& ev, ExprType output) const {
    const auto& out = ev.values_.at(output.id);
    if (!ev.computed_[output.id]) throw std::logic_error("backward on a node that was not evaluated");
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("backward requires a scalar output, got " + shape_string(out));

    std::vector<TensorType> adj(nodes_.size());
    std::vector<char> has_adj(nodes_.size(), 0);
    adj[output.id] = TensorType::Ones(1, 1);
    has_adj[output.id] = 1;

    ParameterSet<Scalar> grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::Parameter && ev.computed_[i]) {
        const auto& v = ev.values_[i];
        if (!grads.contains(nodes_[i].name)) grads.set(nodes_[i].name, TensorType::Zero(v.rows(), v.cols()));
      }
    }

    auto accumulate = [&](std::size_t id, TensorType g) {
      if (!nodes_[id].depends_on_parameter) return;
      if (has_adj[id]) {
        adj[id] += g;
      } else {
        adj[id] = std::move(g);
        has_adj[id] = 1;
      }
    };

    for (std::size_t i = output.id + 1; i-- > 0;) {
      if (!has_adj[i]) continue;
      const Node& n = nodes_[i];
      const TensorType& g = adj[i];
      if (n.op == Op::Parameter) {
        grads.at(n.name) += g;
        continue;
      }
      propagate(i, g, ev, accumulate);
    }
    return grads;
  }

 private:
  struct Node {
    Op op = Op::Input;
    std::array<std::size_t, 3> in{};
    std::uint8_t arity = 0;
    Scalar s0 = 0;
    Scalar s1 = 0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    bool depends_on_parameter = false;
    std::string name;
    TensorType value;
  };

  ExprType push(Node n) {
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<char> ancestors(std::span<const ExprType> outputs) const {
    std::vector<char> needed(nodes_.size(), 0);
    for (const auto& e : outputs) {
      if (e.graph != this) throw std::invalid_argument("output belongs to a different graph");
      needed.at(e.id) = 1;
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!needed[i]) continue;
      for (std::uint8_t k = 0; k < nodes_[i].arity; ++k) needed[nodes_[i].in[k]] = 1;
    }
    return needed;
  }

  enum class Broadcast { Same, Row, Uniform };

  static Broadcast broadcast_kind(const TensorType& a, const TensorType& b, Op op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Uniform;
    throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " + shape_string(b) + " onto " + shape_string(a));
  }

  static TensorType expand(const TensorType& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
    switch (kind) {
      case Broadcast::Same: return b;
      case Broadcast::Row: return b.replicate(rows, 1);
      case Broadcast::Uniform: return TensorType::Constant(rows, cols, b(0, 0));
    }
    return b;
  }

  static TensorType reduce(const TensorType& g, Broadcast kind) {
    switch (kind) {
      case Broadcast::Same: return g;
      case Broadcast::Row: return g.colwise().sum();
      case Broadcast::Uniform: return TensorType::Constant(1, 1, g.sum());
    }
    return g;
  }

  static Scalar sigmoid(Scalar z) {
    if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
    const Scalar e = std::exp(z);
    return e / (Scalar(1) + e);
  }

  TensorType compute(std::size_t i, const Evaluation<Scalar>& ev, const Bindings<Scalar>& inputs,
                     const ParameterSet<Scalar>& params) const {
    const Node& n = nodes_[i];
    auto arg = [&](int k) -> const TensorType& { return ev.values_[n.in[k]]; };
    switch (n.op) {
      case Op::Input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) throw UnboundInputError("input '" + n.name + "' is not bound");
        return it->second;
      }
      case Op::Parameter: {
        if (!params.contains(n.name)) throw UnboundInputError("parameter '" + n.name + "' is not bound");
        return params.at(n.name);
      }
      case Op::Constant: return n.value;
      case Op::MatMul: {
        if (arg(0).cols() != arg(1).rows())
          throw ShapeError("matmul: " + shape_string(arg(0)) + " * " + shape_string(arg(1)));
        return arg(0) * arg(1);
      }
      case Op::MatMulNT: {
        if (arg(0).cols() != arg(1).cols())
          throw ShapeError("matmul_nt: " + shape_string(arg(0)) + " * " + shape_string(arg(1)) + "^T");
        return arg(0) * arg(1).transpose();
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const auto& a = arg(0);
        const auto kind = broadcast_kind(a, arg(1), n.op);
        TensorType b = expand(arg(1), kind, a.rows(), a.cols());
        if (n.op == Op::Add) return a + b;
        if (n.op == Op::Sub) return a - b;
        return a.cwiseProduct(b);
      }
      case Op::Scale: return arg(0) * n.s0;
      case Op::AddScalar: return (arg(0).array() + n.s0).matrix();
      case Op::Concat: {
        const auto& a = arg(0);
        const auto& b = arg(1);
        if (a.rows() != b.rows()) throw ShapeError("concat: " + shape_string(a) + " | " + shape_string(b));
        TensorType out(a.rows(), a.cols() + b.cols());
        out << a, b;
        return out;
      }
      case Op::Slice: {
        const auto& a = arg(0);
        if (n.i0 < 0 || n.i1 < 0 || n.i0 + n.i1 > a.cols())
          throw ShapeError("slice: columns [" + std::to_string(n.i0) + ", +" + std::to_string(n.i1) + ") of " +
                           shape_string(a));
        return a.middleCols(n.i0, n.i1);
      }
      case Op::Relu: return arg(0).cwiseMax(Scalar(0));
      case Op::Sigmoid: return arg(0).unaryExpr([](Scalar z) { return sigmoid(z); });
      case Op::Softmax: {
        const auto& a = arg(0);
        TensorType out(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          const Scalar m = a.row(r).maxCoeff();
          out.row(r) = (a.row(r).array() - m).exp().matrix();
          out.row(r) /= out.row(r).sum();
        }
        return out;
      }
      case Op::Log: {
        if (n.s0 < n.s1) return arg(0).unaryExpr([lo = n.s0, hi = n.s1](Scalar z) { return std::log(std::clamp(z, lo, hi)); });
        return arg(0).array().log().matrix();
      }
      case Op::Square: return arg(0).array().square().matrix();
      case Op::Sum: return TensorType::Constant(1, 1, arg(0).sum());
      case Op::Mean: {
        if (arg(0).size() == 0) throw ShapeError("mean of an empty tensor");
        return TensorType::Constant(1, 1, arg(0).mean());
      }
      case Op::RowSum: return arg(0).rowwise().sum();
      case Op::Attention: return attention_forward(arg(0), arg(1), arg(2), n.i0, n.s0);
    }
    throw std::logic_error("unknown op");
  }

  // For each row b and head h, with q, k, v the head's d-dimensional slices:
  //   out[i] = sum_j softmax_j(scale * q[i] * k[j]) * v[j].
  static void check_attention(const TensorType& q, const TensorType& k, const TensorType& v, Eigen::Index heads) {
    if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols())
      throw ShapeError("attention: Q/K/V shapes differ: " + shape_string(q) + ", " + shape_string(k) + ", " +
                       shape_string(v));
    if (heads <= 0 || q.cols() % heads != 0) throw ShapeError("attention: width not divisible by head count");
  }

  static TensorType attention_forward(const TensorType& q, const TensorType& k, const TensorType& v,
                                      Eigen::Index heads, Scalar scale) {
    check_attention(q, k, v, heads);
    const Eigen::Index d = q.cols() / heads;
    TensorType out(q.rows(), q.cols());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row(d);
    for (Eigen::Index b = 0; b < q.rows(); ++b) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Eigen::Index o = h * d;
        for (Eigen::Index i = 0; i < d; ++i) {
          const Scalar qi = q(b, o + i) * scale;
          Scalar m = -std::numeric_limits<Scalar>::infinity();
          for (Eigen::Index j = 0; j < d; ++j) {
            row(j) = qi * k(b, o + j);
            m = std::max(m, row(j));
          }
          Scalar z = 0;
          Scalar acc = 0;
          for (Eigen::Index j = 0; j < d; ++j) {
            const Scalar e = std::exp(row(j) - m);
            z += e;
            acc += e * v(b, o + j);
          }
          out(b, o + i) = acc / z;
        }
      }
    }
    return out;
  }

  template <typename Accumulate>
  void propagate(std::size_t i, const TensorType& g, const Evaluation<Scalar>& ev, Accumulate& accumulate) const {
    const Node& n = nodes_[i];
    auto arg = [&](int k) -> const TensorType& { return ev.values_[n.in[k]]; };
    auto wants = [&](int k) { return nodes_[n.in[k]].depends_on_parameter; };
    const TensorType& y = ev.values_[i];

    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
      case Op::Constant: return;
      case Op::MatMul:
        if (wants(0)) accumulate(n.in[0], g * arg(1).transpose());
        if (wants(1)) accumulate(n.in[1], arg(0).transpose() * g);
        return;
      case Op::MatMulNT:
        if (wants(0)) accumulate(n.in[0], g * arg(1));
        if (wants(1)) accumulate(n.in[1], g.transpose() * arg(0));
        return;
      case Op::Add:
      case Op::Sub: {
        const auto kind = broadcast_kind(arg(0), arg(1), n.op);
        if (wants(0)) accumulate(n.in[0], g);
        if (wants(1)) accumulate(n.in[1], n.op == Op::Add ? reduce(g, kind) : TensorType(-reduce(g, kind)));
        return;
      }
      case Op::Mul: {
        const auto& a = arg(0);
        const auto kind = broadcast_kind(a, arg(1), n.op);
        if (wants(0)) accumulate(n.in[0], g.cwiseProduct(expand(arg(1), kind, a.rows(), a.cols())));
        if (wants(1)) accumulate(n.in[1], reduce(g.cwiseProduct(a), kind));
        return;
      }
      case Op::Scale: accumulate(n.in[0], g * n.s0); return;
      case Op::AddScalar: accumulate(n.in[0], g); return;
      case Op::Concat: {
        const Eigen::Index na = arg(0).cols();
        if (wants(0)) accumulate(n.in[0], g.leftCols(na));
        if (wants(1)) accumulate(n.in[1], g.rightCols(g.cols() - na));
        return;
      }
      case Op::Slice: {
        TensorType d = TensorType::Zero(arg(0).rows(), arg(0).cols());
        d.middleCols(n.i0, n.i1) = g;
        accumulate(n.in[0], std::move(d));
        return;
      }
      case Op::Relu:
        accumulate(n.in[0], (arg(0).array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
        return;
      case Op::Sigmoid: accumulate(n.in[0], (g.array() * y.array() * (Scalar(1) - y.array())).matrix()); return;
      case Op::Softmax: {
        TensorType d(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const Scalar dot = g.row(r).dot(y.row(r));
          d.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        accumulate(n.in[0], std::move(d));
        return;
      }
      case Op::Log: {
        const auto& a = arg(0);
        if (n.s0 < n.s1) {
          const Scalar lo = n.s0;
          const Scalar hi = n.s1;
          TensorType d(a.rows(), a.cols());
          for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < a.cols(); ++c)
              d(r, c) = (a(r, c) < lo || a(r, c) > hi) ? Scalar(0) : g(r, c) / a(r, c);
          accumulate(n.in[0], std::move(d));
        } else {
          accumulate(n.in[0], g.cwiseQuotient(a));
        }
        return;
      }
      case Op::Square: accumulate(n.in[0], (Scalar(2) * arg(0).array() * g.array()).matrix()); return;
      case Op::Sum: accumulate(n.in[0], TensorType::Constant(arg(0).rows(), arg(0).cols(), g(0, 0))); return;
      case Op::Mean:
        accumulate(n.in[0], TensorType::Constant(arg(0).rows(), arg(0).cols(),
                                                 g(0, 0) / static_cast<Scalar>(arg(0).size())));
        return;
      case Op::RowSum: accumulate(n.in[0], g.replicate(1, arg(0).cols())); return;
      case Op::Attention: attention_backward(n, g, ev, accumulate); return;
    }
  }

  template <typename Accumulate>
  void attention_backward(const Node& n, const TensorType& g, const Evaluation<Scalar>& ev,
                          Accumulate& accumulate) const {
    const TensorType& q = ev.values_[n.in[0]];
    const TensorType& k = ev.values_[n.in[1]];
    const TensorType& v = ev.values_[n.in[2]];
    const Eigen::Index heads = n.i0;
    const Scalar scale = n.s0;
    const Eigen::Index d = q.cols() / heads;
    TensorType dq = TensorType::Zero(q.rows(), q.cols());
    TensorType dk = TensorType::Zero(q.rows(), q.cols());
    TensorType dv = TensorType::Zero(q.rows(), q.cols());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> a(d);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> da(d);
    for (Eigen::Index b = 0; b < q.rows(); ++b) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Eigen::Index o = h * d;
        for (Eigen::Index i = 0; i < d; ++i) {
          const Scalar qi = q(b, o + i) * scale;
          Scalar m = -std::numeric_limits<Scalar>::infinity();
          for (Eigen::Index j = 0; j < d; ++j) {
            a(j) = qi * k(b, o + j);
            m = std::max(m, a(j));
          }
          Scalar z = 0;
          for (Eigen::Index j = 0; j < d; ++j) {
            a(j) = std::exp(a(j) - m);
            z += a(j);
          }
          a /= z;
          const Scalar gi = g(b, o + i);
          Scalar inner = 0;
          for (Eigen::Index j = 0; j < d; ++j) {
            dv(b, o + j) += a(j) * gi;
            da(j) = gi * v(b, o + j);
            inner += a(j) * da(j);
          }
          for (Eigen::Index j = 0; j < d; ++j) {
            const Scalar ds = a(j) * (da(j) - inner) * scale;
            dq(b, o + i) += ds * k(b, o + j);
            dk(b, o + j) += ds * q(b, o + i);
          }
        }
      }
    }
    if (nodes_[n.in[0]].depends_on_parameter) accumulate(n.in[0], std::move(dq));
    if (nodes_[n.in[1]].depends_on_parameter) accumulate(n.in[1], std::move(dk));
    if (nodes_[n.in[2]].depends_on_parameter) accumulate(n.in[2], std::move(dv));
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Expression-building free functions
// ---------------------------------------------------------------------------

template <typename Scalar>
Expr<Scalar> matmul(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::MatMul, {a, b}); }

// a * b^T; with b stored as (out x in) this is a dense layer.
template <typename Scalar>
Expr<Scalar> matmul_nt(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::MatMulNT, {a, b}); }

template <typename Scalar>
Expr<Scalar> operator+(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::Add, {a, b}); }

template <typename Scalar>
Expr<Scalar> operator-(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::Sub, {a, b}); }

template <typename Scalar>
Expr<Scalar> operator*(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::Mul, {a, b}); }

template <typename Scalar>
Expr<Scalar> operator*(Expr<Scalar> a, Scalar c) { return a.graph->apply(Op::Scale, {a}, c); }

template <typename Scalar>
Expr<Scalar> operator*(Scalar c, Expr<Scalar> a) { return a.graph->apply(Op::Scale, {a}, c); }

template <typename Scalar>
Expr<Scalar> operator+(Expr<Scalar> a, Scalar c) { return a.graph->apply(Op::AddScalar, {a}, c); }

template <typename Scalar>
Expr<Scalar> operator-(Expr<Scalar> a) { return a.graph->apply(Op::Scale, {a}, Scalar(-1)); }

template <typename Scalar>
Expr<Scalar> operator-(Scalar c, Expr<Scalar> a) { return (-a) + c; }

template <typename Scalar>
Expr<Scalar> operator-(Expr<Scalar> a, Scalar c) { return a + (-c); }

template <typename Scalar>
Expr<Scalar> concat(Expr<Scalar> a, Expr<Scalar> b) { return a.graph->apply(Op::Concat, {a, b}); }

template <typename Scalar>
Expr<Scalar> slice_cols(Expr<Scalar> a, Eigen::Index start, Eigen::Index count) {
  return a.graph->apply(Op::Slice, {a}, 0, 0, start, count);
}

template <typename Scalar>
Expr<Scalar> relu(Expr<Scalar> a) { return a.graph->apply(Op::Relu, {a}); }

template <typename Scalar>
Expr<Scalar> sigmoid(Expr<Scalar> a) { return a.graph->apply(Op::Sigmoid, {a}); }

template <typename Scalar>
Expr<Scalar> softmax_rows(Expr<Scalar> a) { return a.graph->apply(Op::Softmax, {a}); }

template <typename Scalar>
Expr<Scalar> log(Expr<Scalar> a) { return a.graph->apply(Op::Log, {a}); }

// log of the argument clamped to [lo, hi]; zero gradient where clamping is active.
template <typename Scalar>
Expr<Scalar> clamped_log(Expr<Scalar> a, Scalar lo, Scalar hi) { return a.graph->apply(Op::Log, {a}, lo, hi); }

template <typename Scalar>
Expr<Scalar> square(Expr<Scalar> a) { return a.graph->apply(Op::Square, {a}); }

template <typename Scalar>
Expr<Scalar> sum(Expr<Scalar> a) { return a.graph->apply(Op::Sum, {a}); }

template <typename Scalar>
Expr<Scalar> mean(Expr<Scalar> a) { return a.graph->apply(Op::Mean, {a}); }

template <typename Scalar>
Expr<Scalar> row_sum(Expr<Scalar> a) { return a.graph->apply(Op::RowSum, {a}); }

// Per-row multi-head attention where each head's query, key and value are
// d-vectors and the attention map is the d x d row-softmax of scale * q k^T.
template <typename Scalar>
Expr<Scalar> rank_one_attention(Expr<Scalar> q, Expr<Scalar> k, Expr<Scalar> v, Eigen::Index heads, Scalar scale) {
  return q.graph->apply(Op::Attention, {q, k, v}, scale, 0, heads);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdamConfig {
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig<Scalar> config = {}) : config_(config) {}

  // Applies one bias-corrected update to every parameter named in `grads`.
  // Nothing is modified when any gradient is non-finite.
  void step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, Scalar lr) {
    if (!(lr >= 0)) throw std::invalid_argument("Adam learning rate must be non-negative");
    for (const auto& [name, g] : grads) {
      const auto& p = params.at(name);
      if (p.rows() != g.rows() || p.cols() != g.cols())
        throw ShapeError("gradient for '" + name + "' has shape " + shape_string(g) + ", parameter " + shape_string(p));
      if (!g.allFinite()) throw NonFiniteError("non-finite gradient for parameter '" + name + "'");
    }
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(config_.beta1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(config_.beta2, static_cast<Scalar>(t_));
    for (const auto& [name, g] : grads) {
      auto& p = params.at(name);
      if (!m_.contains(name)) {
        m_.set(name, Tensor<Scalar>::Zero(g.rows(), g.cols()));
        v_.set(name, Tensor<Scalar>::Zero(g.rows(), g.cols()));
      }
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      m = config_.beta1 * m + (Scalar(1) - config_.beta1) * g;
      v = (config_.beta2 * v.array() + (Scalar(1) - config_.beta2) * g.array().square()).matrix();
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
    }
  }

  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const ParameterSet<Scalar>& first_moment() const { return m_; }
  [[nodiscard]] const ParameterSet<Scalar>& second_moment() const { return v_; }
  [[nodiscard]] const AdamConfig<Scalar>& config() const { return config_; }

  void reset() {
    m_ = {};
    v_ = {};
    t_ = 0;
  }

 private:
  AdamConfig<Scalar> config_;
  ParameterSet<Scalar> m_;
  ParameterSet<Scalar> v_;
  std::int64_t t_ = 0;
};

}  // namespace aligan::ad

#endif  // ALIGAN_AUTODIFF_HPP
