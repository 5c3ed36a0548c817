#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lktcn/tensor.hpp"

namespace lktcn {

using ScalarFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// Max over elements of |analytic - central difference| / max(1, |analytic|).
/// Each coordinate is perturbed by eps * max(1, |x_i|). `f` must be
/// deterministic and return a one-element tensor.
double finite_difference_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-6);

/// Reverse-mode gradient of a scalar function at x (x is copied).
Tensor<double> analytic_gradient(const ScalarFn& f, const Tensor<double>& x);

struct GradCheckEntry {
  std::string op;
  std::string case_name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_rel_error < threshold; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::vector<std::string> uncovered_ops;  // registered ops without a case
  bool passed() const;
};

inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;

/// Finite-difference checks for every registered differentiable op plus the
/// end-to-end model on a tiny configuration.
GradCheckReport run_gradient_suite(unsigned seed = 0);

}  // namespace lktcn
