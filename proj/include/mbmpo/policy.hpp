#ifndef MBMPO_POLICY_HPP_
#define MBMPO_POLICY_HPP_

#include <Eigen/Dense>

#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/diffcore/parameter_vector.hpp"
#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/rng.hpp"

namespace mbmpo {

struct ActionSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

struct ActionBatch {
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_probs;
};

// Diagonal Gaussian policy: mean from an MLP over the raw state, plus a
// state-independent log standard deviation stored in the "log_std" block.
// The object describes structure only; parameters are passed explicitly.
class GaussianPolicy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  explicit GaussianPolicy(MlpSpec mean_spec);

  const MlpSpec& mean_spec() const { return mean_spec_; }
  const LayoutPtr& layout() const { return layout_; }
  int state_dim() const { return mean_spec_.input_dim; }
  int action_dim() const { return mean_spec_.output_dim; }

  ParameterVector initial_params(Rng& rng, double init_log_std = 0.0) const;
  // clamps log_std into [kLogStdMin, kLogStdMax]
  ParameterVector project(const ParameterVector& params) const;

  Eigen::MatrixXd mean(const ParameterVector& params, const Eigen::MatrixXd& states) const;
  Eigen::VectorXd mean(const ParameterVector& params, const Eigen::VectorXd& state) const;
  Eigen::VectorXd log_std(const ParameterVector& params) const;

  // action = mean + std * eps; log_prob is evaluated at the unclipped action
  ActionSample sample_action(const ParameterVector& params, const Eigen::VectorXd& state,
                             Rng& rng) const;
  ActionBatch sample_actions(const ParameterVector& params, const Eigen::MatrixXd& states,
                             Rng& rng) const;

  double log_prob(const ParameterVector& params, const Eigen::VectorXd& state,
                  const Eigen::VectorXd& action) const;
  Eigen::VectorXd log_prob(const ParameterVector& params, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& actions) const;
  // N x 1 node of per-sample log densities
  ad::Var log_prob(const ad::ParamVar& params, const Eigen::MatrixXd& states,
                   const Eigen::MatrixXd& actions) const;

  // mean over states of KL(p(.|s) || q(.|s)), closed form
  double mean_kl(const ParameterVector& p, const ParameterVector& q,
                 const Eigen::MatrixXd& states) const;
  // per-state KL(p || q)
  Eigen::VectorXd kl(const ParameterVector& p, const ParameterVector& q,
                     const Eigen::MatrixXd& states) const;
  // Same quantity with p frozen (given by its means and log-stds) and q on a
  // tape; differentiable with respect to q.
  ad::Var mean_kl(const Eigen::MatrixXd& p_means, const Eigen::VectorXd& p_log_std,
                  const ad::ParamVar& q, const Eigen::MatrixXd& states) const;

 private:
  void check_states(const Eigen::MatrixXd& states) const;

  MlpSpec mean_spec_;
  LayoutPtr layout_;
};

}  // namespace mbmpo

#endif  // MBMPO_POLICY_HPP_
