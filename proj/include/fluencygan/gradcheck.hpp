#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fluencygan/generator.hpp"

namespace fluencygan::gradcheck {

/// Result of comparing reverse-mode gradients with central differences.
struct Report {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Builds a scalar loss from leaf variables holding the given inputs.
using LossBuilder =
    std::function<Var<double>(Graph<double>& graph, const std::vector<Var<double>>& inputs)>;

/// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-8) over
/// every input entry, with the numeric gradient from central differences of
/// step eps evaluated in double precision.
double relative_error(const std::vector<Tensor<double>>& inputs, const LossBuilder& loss,
                      double eps = 1e-3);

/// Every differentiable op, `instances` random instances each, tolerance 1e-3.
std::vector<Report> op_suite(std::uint64_t seed, int instances = 5);

/// Full generator + discriminator L_G on a 2-sentence batch for both
/// generator kinds, checked over every parameter entry; tolerance 1e-2.
std::vector<Report> composite_suite(std::uint64_t seed, int instances = 5);

}  // namespace fluencygan::gradcheck
