#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fluencygan/tensor.hpp"

namespace fluencygan {

template <typename Scalar>
class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; valid while the
/// graph is alive.
template <typename Scalar>
class Var {
 public:
  using Matrix = RowMatrix<Scalar>;

  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix& value() const { return graph_->value(id_); }
  const Shape& shape() const { return graph_->shape(id_); }
  bool requires_grad() const { return graph_->requires_grad(id_); }
  /// Gradient accumulated by the last backward pass (zeros if unreached).
  Matrix grad() const { return graph_->grad(id_); }
  /// Value of a one-element node.
  Scalar item() const;

  Tensor<Scalar> tensor() const { return Tensor<Scalar>(shape(), value()); }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename Scalar>
class Graph {
 public:
  using Matrix = RowMatrix<Scalar>;
  using BackwardFn = std::function<void(Graph&, const Matrix& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Tensor<Scalar> t);
  Var<Scalar> constant(Shape shape, Matrix value);
  /// Differentiable leaf owned by the graph; read its gradient via Var::grad.
  Var<Scalar> leaf(Tensor<Scalar> t);
  /// Leaf bound to a model parameter. The parameter's value is referenced,
  /// not copied, and backward adds into the parameter's grad slot. Repeated
  /// calls for the same tensor return the same node.
  Var<Scalar> param(Tensor<Scalar>& p);

  /// Append an op node. The node requires grad when gradients are enabled and
  /// any parent requires grad; otherwise the backward closure is dropped.
  Var<Scalar> record(Shape shape, Matrix value, std::initializer_list<int> parents,
                     BackwardFn backward);
  Var<Scalar> record(Shape shape, Matrix value, const std::vector<int>& parents,
                     BackwardFn backward);

  /// Reverse sweep from a one-element loss. Intermediate gradients are reset
  /// on each call; parameter gradients accumulate across calls.
  void backward(Var<Scalar> loss);

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  /// Parameters of a frozen set enter the graph as constants.
  void freeze(const ParameterSet<Scalar>& params);
  void unfreeze_all() { frozen_.clear(); }

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Shape& shape(int id) const { return nodes_[id].shape; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  Matrix grad(int id) const;

  /// Used by backward closures: adds expr into the parent's gradient when the
  /// parent participates in differentiation.
  template <typename Expr>
  void accumulate(int id, const Expr& expr) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = expr;
    } else {
      n.grad += expr;
    }
  }
  bool wants_grad(int id) const { return nodes_[id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    Matrix value;
    const Matrix* external = nullptr;
    Tensor<Scalar>* param = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<Scalar>*, int> param_ids_;
  std::unordered_set<const Tensor<Scalar>*> frozen_;
  bool grad_enabled_ = true;
};

template <typename Scalar>
Scalar Var<Scalar>::item() const {
  const auto& v = value();
  if (v.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return v(0, 0);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace fluencygan
