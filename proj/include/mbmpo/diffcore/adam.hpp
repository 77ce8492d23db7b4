#ifndef MBMPO_DIFFCORE_ADAM_HPP_
#define MBMPO_DIFFCORE_ADAM_HPP_

#include <Eigen/Dense>

#include "mbmpo/diffcore/parameter_vector.hpp"

namespace mbmpo {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates and the step count.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

// Adaptive-moment gradient descent over a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index size, AdamConfig config = {});
  // resumes from a saved state
  Adam(AdamState state, AdamConfig config);

  // returns params - lr * m_hat / (sqrt(v_hat) + eps)
  ParameterVector step(const ParameterVector& params, const ParameterVector& gradient);
  long steps_taken() const { return t_; }
  AdamState state() const { return {m_, v_, t_}; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace mbmpo

#endif  // MBMPO_DIFFCORE_ADAM_HPP_
