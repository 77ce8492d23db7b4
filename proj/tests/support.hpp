#ifndef MBMPO_TESTS_SUPPORT_HPP_
#define MBMPO_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <functional>

#include <Eigen/Dense>

#include "mbmpo/diffcore/parameter_vector.hpp"

namespace mbmpo::testing {

// Central finite differences, one coordinate at a time.
inline Eigen::VectorXd fd_gradient(const std::function<double(const ParameterVector&)>& f,
                                   const ParameterVector& p, double h) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Eigen::VectorXd plus = p.values();
    Eigen::VectorXd minus = p.values();
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(p.with_values(plus)) - f(p.with_values(minus))) / (2.0 * h);
  }
  return g;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                        double floor = 1e-8) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

}  // namespace mbmpo::testing

#endif  // MBMPO_TESTS_SUPPORT_HPP_
