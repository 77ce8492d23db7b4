#include "mbmpo/diffcore/adam.hpp"

#include <cmath>
#include <utility>

#include "mbmpo/errors.hpp"

namespace mbmpo {

Adam::Adam(Eigen::Index size, AdamConfig config)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

Adam::Adam(AdamState state, AdamConfig config)
    : config_(config), m_(std::move(state.m)), v_(std::move(state.v)), t_(state.t) {
  if (m_.size() != v_.size() || t_ < 0) throw ConfigError("adam: inconsistent saved state");
}

ParameterVector Adam::step(const ParameterVector& params, const ParameterVector& gradient) {
  if (gradient.size() != m_.size() || params.size() != m_.size()) {
    throw ConfigError("adam: parameter size does not match optimizer state");
  }
  ++t_;
  const auto& g = gradient.values();
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  Eigen::VectorXd update =
      (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
  return params.with_values(params.values() - config_.learning_rate * update);
}

}  // namespace mbmpo
