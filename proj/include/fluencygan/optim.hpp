#pragma once

#include <cstdint>
#include <vector>

#include "fluencygan/tensor.hpp"

namespace fluencygan {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// Adam with bias correction over a parameter set's accumulated gradients.
template <typename S>
class Adam {
 public:
  Adam(ParameterSet<S>& params, AdamConfig config);

  void step(double lr);
  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  // first and second moments, one per parameter entry; exposed for checkpoints
  std::vector<RowMatrix<S>>& first_moments() { return m_; }
  std::vector<RowMatrix<S>>& second_moments() { return v_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  ParameterSet<S>* params_;
  AdamConfig config_;
  std::vector<RowMatrix<S>> m_;
  std::vector<RowMatrix<S>> v_;
  std::int64_t steps_ = 0;
};

/// d^-0.5 * min(step^-0.5, step * warmup^-1.5) for step >= 1.
double transformer_lr(std::int64_t step, int d, int warmup);

/// Rescales gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
template <typename S>
double clip_grad_norm(ParameterSet<S>& params, double max_norm);

}  // namespace fluencygan
