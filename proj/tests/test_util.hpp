#ifndef RLQ_TESTS_TEST_UTIL_HPP_
#define RLQ_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "rlq/rng.hpp"

namespace rlq::testutil {

// Central finite differences, h = 1e-5 in float64. `f` must re-evaluate the
// full expression from scratch for the perturbed inputs; it must not touch
// the implementation's analytic gradients.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0,
                                      double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random values bounded away from 0 so kinked ops (relu, abs) stay smooth
// within the finite-difference stencil.
inline std::vector<double> random_vec_away_from_zero(Rng& rng, std::size_t n,
                                                     double min_abs = 1e-3) {
  std::vector<double> v(n);
  for (auto& x : v) {
    double u = rng.uniform(-1.0, 1.0);
    if (std::fabs(u) < min_abs) u = u < 0.0 ? -min_abs : min_abs;
    x = u;
  }
  return v;
}

}  // namespace rlq::testutil

#endif  // RLQ_TESTS_TEST_UTIL_HPP_
