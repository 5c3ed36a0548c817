#include "lktcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lktcn {

Tensor<double> analytic_gradient(const ScalarFn& f, const Tensor<double>& x) {
  Tensor<double> probe = x.detach();
  probe.set_requires_grad(true);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    Tensor<double> y = f(probe);
    if (y.numel() != 1) throw std::invalid_argument("finite_difference_check: function must be scalar-valued");
    if (!y.requires_grad()) return Tensor<double>(x.shape());
    tape.backward(y);
  }
  return probe.grad_tensor();
}

double finite_difference_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  const Tensor<double> analytic = analytic_gradient(f, x);
  const auto a = analytic.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double h = eps * std::max(1.0, std::abs(x[i]));
    Tensor<double> plus = x.detach();
    Tensor<double> minus = x.detach();
    plus.mutable_data()[i] += h;
    minus.mutable_data()[i] -= h;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * h);
    const double err = std::abs(a[i] - numeric) / std::max(1.0, std::abs(a[i]));
    if (!(err <= worst)) worst = err;  // propagates NaN
  }
  return worst;
}

bool GradCheckReport::passed() const {
  return uncovered_ops.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed(); });
}

}  // namespace lktcn
