#pragma once

// Reverse-mode automatic differentiation on a linear tape.
//
// Forward values are computed eagerly when an operation is recorded. Nodes can
// only reference earlier nodes, so a single reverse sweep over the recording
// order is a valid topological traversal. The primitive set is fixed; anything
// that is not a composition of primitives (the manifold projection, the
// stabilization term, constraint residuals) is registered as a custom node
// carrying its own vector-Jacobian product.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pnode/error.hpp"
#include "pnode/numeric.hpp"

namespace pnode::ad {

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

enum class Primitive { constant, add, scale, matvec, tanh, dot, square };

// Given the cotangent of a custom node's output, returns one cotangent per input
// (in input order).
using CustomVjp = std::function<std::vector<Vector>(std::span<const double> cotangent)>;

class Adjoints;

class Tape {
 public:
  Tape() {
    nodes_.reserve(256);
    values_.reserve(4096);
  }

  // Leaf whose gradient is reported by backward (parameters, inputs).
  NodeId variable(std::span<const double> value, std::size_t rows, std::size_t cols = 1) {
    return push_leaf(Kind::variable, value, rows, cols);
  }
  NodeId variable(std::span<const double> value) { return variable(value, value.size(), 1); }

  NodeId constant(std::span<const double> value, std::size_t rows, std::size_t cols = 1) {
    return push_leaf(Kind::constant, value, rows, cols);
  }
  NodeId constant(std::span<const double> value) { return constant(value, value.size(), 1); }

  NodeId add(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) throw DimensionError("tape add: shape mismatch");
    const NodeId out = push(Kind::add, na.rows, na.cols, {a, b});
    double* o = data(out);
    const double* x = data(a);
    const double* y = data(b);
    for (std::size_t i = 0, n = size(out); i < n; ++i) o[i] = x[i] + y[i];
    return out;
  }

  NodeId scale(NodeId a, double factor) {
    const Node& na = node(a);
    const NodeId out = push(Kind::scale, na.rows, na.cols, {a});
    nodes_[out.index].scalar = factor;
    double* o = data(out);
    const double* x = data(a);
    for (std::size_t i = 0, n = size(out); i < n; ++i) o[i] = factor * x[i];
    return out;
  }

  // Matrix node (rows x cols) times vector node (cols).
  NodeId matvec(NodeId matrix, NodeId x) {
    const Node& nm = node(matrix);
    const Node& nx = node(x);
    if (nx.cols != 1 || nm.cols != nx.rows) throw DimensionError("tape matvec: shape mismatch");
    const std::size_t rows = nm.rows;
    const std::size_t cols = nm.cols;
    const NodeId out = push(Kind::matvec, rows, 1, {matrix, x});
    matvec_kernel(value(matrix), rows, cols, value(x), {data(out), rows});
    return out;
  }

  NodeId tanh(NodeId a) {
    const Node& na = node(a);
    const NodeId out = push(Kind::tanh, na.rows, na.cols, {a});
    double* o = data(out);
    const double* x = data(a);
    for (std::size_t i = 0, n = size(out); i < n; ++i) o[i] = std::tanh(x[i]);
    return out;
  }

  // Scalar (1x1) inner product.
  NodeId dot(NodeId a, NodeId b) {
    if (size(a) != size(b)) throw DimensionError("tape dot: length mismatch");
    const NodeId out = push(Kind::dot, 1, 1, {a, b});
    const double* x = data(a);
    const double* y = data(b);
    double s = 0.0;
    for (std::size_t i = 0, n = size(a); i < n; ++i) s += x[i] * y[i];
    *data(out) = s;
    return out;
  }

  // Elementwise square.
  NodeId square(NodeId a) {
    const Node& na = node(a);
    const NodeId out = push(Kind::square, na.rows, na.cols, {a});
    double* o = data(out);
    const double* x = data(a);
    for (std::size_t i = 0, n = size(out); i < n; ++i) o[i] = x[i] * x[i];
    return out;
  }

  // Generic entry point: dispatches on the primitive. `factor` is used by scale,
  // `constant_value` by constant.
  NodeId record(Primitive op, std::span<const NodeId> inputs, double factor = 1.0,
                std::span<const double> constant_value = {}) {
    auto need = [&](std::size_t k) {
      if (inputs.size() != k) throw DimensionError("tape record: wrong number of inputs");
      for (NodeId id : inputs)
        if (id.index >= nodes_.size()) throw Error("tape record: input does not exist");
    };
    switch (op) {
      case Primitive::constant: need(0); return constant(constant_value);
      case Primitive::add: need(2); return add(inputs[0], inputs[1]);
      case Primitive::scale: need(1); return scale(inputs[0], factor);
      case Primitive::matvec: need(2); return matvec(inputs[0], inputs[1]);
      case Primitive::tanh: need(1); return tanh(inputs[0]);
      case Primitive::dot: need(2); return dot(inputs[0], inputs[1]);
      case Primitive::square: need(1); return square(inputs[0]);
    }
    throw Error("tape record: unknown primitive");
  }

  NodeId custom(std::span<const NodeId> inputs, std::span<const double> value, CustomVjp vjp) {
    std::vector<NodeId> in(inputs.begin(), inputs.end());
    for (NodeId id : in)
      if (id.index >= nodes_.size()) throw Error("tape custom: input does not exist");
    const NodeId out = push(Kind::custom, value.size(), 1, std::move(in));
    std::copy(value.begin(), value.end(), data(out));
    nodes_[out.index].custom = static_cast<std::uint32_t>(customs_.size());
    customs_.push_back(std::move(vjp));
    return out;
  }

  std::span<const double> value(NodeId id) const {
    const Node& n = node(id);
    return {values_.data() + n.offset, n.rows * n.cols};
  }
  double scalar(NodeId id) const {
    if (size(id) != 1) throw DimensionError("tape scalar: node is not 1x1");
    return values_[node(id).offset];
  }
  std::size_t size(NodeId id) const {
    const Node& n = node(id);
    return n.rows * n.cols;
  }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }

  // Reverse sweep seeded with `cotangent` at `seed`.
  Adjoints backward(NodeId seed, std::span<const double> cotangent) const;
  Adjoints backward(NodeId seed) const;

 private:
  friend class Adjoints;

  enum class Kind : std::uint8_t { variable, constant, add, scale, matvec, tanh, dot, square, custom };

  struct Node {
    Kind kind;
    bool requires_grad;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;
    std::vector<NodeId> inputs;
    double scalar = 1.0;
    std::uint32_t custom = 0;
  };

  const Node& node(NodeId id) const {
    if (id.index >= nodes_.size()) throw Error("tape: node does not exist");
    return nodes_[id.index];
  }
  double* data(NodeId id) { return values_.data() + nodes_[id.index].offset; }
  const double* data(NodeId id) const { return values_.data() + nodes_[id.index].offset; }

  NodeId push_leaf(Kind kind, std::span<const double> value, std::size_t rows, std::size_t cols) {
    if (value.size() != rows * cols) throw DimensionError("tape leaf: value length does not match shape");
    const NodeId out = push(kind, rows, cols, {});
    std::copy(value.begin(), value.end(), data(out));
    return out;
  }

  NodeId push(Kind kind, std::size_t rows, std::size_t cols, std::vector<NodeId> inputs) {
    bool grad = kind == Kind::variable;
    for (NodeId id : inputs) grad = grad || nodes_[id.index].requires_grad;
    const std::size_t offset = values_.size();
    values_.resize(offset + rows * cols);
    nodes_.push_back(Node{kind, grad, offset, rows, cols, std::move(inputs)});
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  Vector values_;
  std::vector<CustomVjp> customs_;
};

// Cotangents for every node after a reverse sweep. Only nodes that depend on a
// variable receive non-zero entries.
class Adjoints {
 public:
  std::span<const double> wrt(NodeId id) const {
    const auto& n = tape_->node(id);
    return {adj_.data() + n.offset, n.rows * n.cols};
  }

 private:
  friend class Tape;
  Adjoints(const Tape& tape, Vector adj) : tape_(&tape), adj_(std::move(adj)) {}
  const Tape* tape_;
  Vector adj_;
};

inline Adjoints Tape::backward(NodeId seed, std::span<const double> cotangent) const {
  const Node& s = node(seed);
  if (cotangent.size() != s.rows * s.cols) throw DimensionError("backward: seed cotangent shape mismatch");
  if (!all_finite(cotangent)) throw NonFiniteError("backward: non-finite seed cotangent");
  Vector adj(values_.size(), 0.0);
  std::copy(cotangent.begin(), cotangent.end(), adj.begin() + static_cast<std::ptrdiff_t>(s.offset));

  for (std::size_t k = seed.index + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (!n.requires_grad) continue;
    const std::size_t len = n.rows * n.cols;
    const double* g = adj.data() + n.offset;
    const double* v = values_.data() + n.offset;
    auto in_adj = [&](std::size_t i) { return adj.data() + nodes_[n.inputs[i].index].offset; };
    auto in_val = [&](std::size_t i) { return values_.data() + nodes_[n.inputs[i].index].offset; };
    auto in_grad = [&](std::size_t i) { return nodes_[n.inputs[i].index].requires_grad; };

    switch (n.kind) {
      case Kind::variable:
      case Kind::constant:
        break;
      case Kind::add:
        for (std::size_t i = 0; i < 2; ++i)
          if (in_grad(i)) {
            double* a = in_adj(i);
            for (std::size_t j = 0; j < len; ++j) a[j] += g[j];
          }
        break;
      case Kind::scale: {
        double* a = in_adj(0);
        for (std::size_t j = 0; j < len; ++j) a[j] += n.scalar * g[j];
        break;
      }
      case Kind::matvec: {
        const Node& m = nodes_[n.inputs[0].index];
        const std::size_t cols = m.cols;
        const double* mv = in_val(0);
        const double* xv = in_val(1);
        if (in_grad(0)) {
          double* ma = in_adj(0);
          for (std::size_t i = 0; i < n.rows; ++i) {
            const double gi = g[i];
            double* row = ma + i * cols;
            for (std::size_t j = 0; j < cols; ++j) row[j] += gi * xv[j];
          }
        }
        if (in_grad(1)) {
          double* xa = in_adj(1);
          for (std::size_t i = 0; i < n.rows; ++i) {
            const double gi = g[i];
            const double* row = mv + i * cols;
            for (std::size_t j = 0; j < cols; ++j) xa[j] += row[j] * gi;
          }
        }
        break;
      }
      case Kind::tanh: {
        double* a = in_adj(0);
        for (std::size_t j = 0; j < len; ++j) a[j] += g[j] * (1.0 - v[j] * v[j]);
        break;
      }
      case Kind::dot: {
        const std::size_t m = nodes_[n.inputs[0].index].rows * nodes_[n.inputs[0].index].cols;
        const double* x = in_val(0);
        const double* y = in_val(1);
        if (in_grad(0)) {
          double* a = in_adj(0);
          for (std::size_t j = 0; j < m; ++j) a[j] += g[0] * y[j];
        }
        if (in_grad(1)) {
          double* a = in_adj(1);
          for (std::size_t j = 0; j < m; ++j) a[j] += g[0] * x[j];
        }
        break;
      }
      case Kind::square: {
        double* a = in_adj(0);
        const double* x = in_val(0);
        for (std::size_t j = 0; j < len; ++j) a[j] += 2.0 * x[j] * g[j];
        break;
      }
      case Kind::custom: {
        bool any = false;
        for (std::size_t j = 0; j < len && !any; ++j) any = g[j] != 0.0;
        if (!any) break;
        const auto contributions = customs_[n.custom](std::span<const double>(g, len));
        if (contributions.size() != n.inputs.size()) throw Error("backward: custom VJP returned wrong arity");
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          if (!in_grad(i)) continue;
          const Node& in = nodes_[n.inputs[i].index];
          if (contributions[i].size() != in.rows * in.cols)
            throw DimensionError("backward: custom VJP cotangent shape mismatch");
          double* a = in_adj(i);
          for (std::size_t j = 0; j < contributions[i].size(); ++j) a[j] += contributions[i][j];
        }
        break;
      }
    }
  }
  return Adjoints(*this, std::move(adj));
}

inline Adjoints Tape::backward(NodeId seed) const {
  Vector ones(size(seed), 1.0);
  return backward(seed, ones);
}

}  // namespace pnode::ad
