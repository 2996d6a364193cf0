#include "fluencygan/optim.hpp"

#include <algorithm>
#include <cmath>

#include "fluencygan/errors.hpp"

namespace fluencygan {

template <typename S>
Adam<S>::Adam(ParameterSet<S>& params, AdamConfig config) : params_(&params), config_(config) {
  for (const auto& [name, t] : params.entries()) {
    m_.push_back(RowMatrix<S>::Zero(t.matrix().rows(), t.matrix().cols()));
    v_.push_back(RowMatrix<S>::Zero(t.matrix().rows(), t.matrix().cols()));
  }
}

template <typename S>
void Adam<S>::step(double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const S step_size = static_cast<S>(lr / c1);
  const S root_c2 = static_cast<S>(std::sqrt(c2));
  const S eps = static_cast<S>(config_.eps);
  std::size_t i = 0;
  for (auto& [name, t] : params_->entries()) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    m = static_cast<S>(b1) * m + static_cast<S>(1 - b1) * g;
    v = static_cast<S>(b2) * v + static_cast<S>(1 - b2) * g.cwiseProduct(g);
    t.matrix().array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + eps);
  }
}

double transformer_lr(std::int64_t step, int d, int warmup) {
  if (step < 1 || d < 1 || warmup < 1) {
    throw ParameterError("transformer_lr needs step, d and warmup >= 1");
  }
  const auto s = static_cast<double>(step);
  return std::pow(d, -0.5) * std::min(std::pow(s, -0.5), s * std::pow(warmup, -1.5));
}

template <typename S>
double clip_grad_norm(ParameterSet<S>& params, double max_norm) {
  double total = 0.0;
  for (const auto& [name, t] : params.entries()) {
    if (t.has_grad()) total += t.grad().template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const auto factor = static_cast<S>(max_norm / norm);
    for (auto& [name, t] : params.entries()) {
      if (t.has_grad()) t.grad() *= factor;
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);

}  // namespace fluencygan
