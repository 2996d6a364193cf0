#include "fluencygan/graph.hpp"

#include <sstream>

namespace fluencygan {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Tensor<Scalar> t) {
  Node n;
  n.shape = t.shape();
  n.value = std::move(t.matrix());
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Shape shape, Matrix value) {
  return constant(Tensor<Scalar>(std::move(shape), std::move(value)));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::leaf(Tensor<Scalar> t) {
  Node n;
  n.shape = t.shape();
  n.value = std::move(t.matrix());
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::param(Tensor<Scalar>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<Scalar>(this, it->second);
  Node n;
  n.shape = p.shape();
  n.external = &p.matrix();
  n.requires_grad = grad_enabled_ && p.requires_grad() && !frozen_.contains(&p);
  if (n.requires_grad) n.param = &p;
  auto v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

template <typename Scalar>
void Graph<Scalar>::freeze(const ParameterSet<Scalar>& params) {
  for (const auto& [name, t] : params.entries()) frozen_.insert(&t);
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Shape shape, Matrix value, const std::vector<int>& parents,
                                  BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (grad_enabled_) {
    for (int p : parents) {
      if (nodes_[p].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Shape shape, Matrix value, std::initializer_list<int> parents,
                                  BackwardFn backward) {
  return record(std::move(shape), std::move(value), std::vector<int>(parents),
                std::move(backward));
}

template <typename Scalar>
typename Graph<Scalar>::Matrix Graph<Scalar>::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const auto& v = value(id);
    return Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

template <typename Scalar>
void Graph<Scalar>::backward(Var<Scalar> loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  const int root = loss.id();
  if (value(root).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(shape(root)));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root].requires_grad) return;
  nodes_[root].grad = Matrix::Ones(1, 1);
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param) {
      n.param->grad() += n.grad;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace fluencygan
