#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace sgu {

// Central finite-difference gradient of f at x. Independent oracle for every
// analytic gradient in the project: it never touches the tape machinery.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + eps;
    const double fp = f(x);
    x[i] = xi - eps;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Largest relative discrepancy between two gradients, with the denominator
// floored so near-zero entries compare absolutely.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor_at = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor_at});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace sgu
