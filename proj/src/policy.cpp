#include "mbmpo/policy.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

constexpr const char* kMeanPrefix = "mean/";
constexpr const char* kLogStd = "log_std";

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

GaussianPolicy::GaussianPolicy(MlpSpec mean_spec) : mean_spec_(std::move(mean_spec)) {
  auto layout = std::make_shared<ParamLayout>();
  append_mlp_layout(*layout, mean_spec_, kMeanPrefix);
  layout->add(kLogStd, 1, mean_spec_.output_dim);
  layout_ = std::move(layout);
}

ParameterVector GaussianPolicy::initial_params(Rng& rng, double init_log_std) const {
  auto blocks = init_mlp_blocks(mean_spec_, kMeanPrefix, rng);
  blocks[kLogStd] = Eigen::MatrixXd::Constant(1, action_dim(), init_log_std);
  return ParameterVector::flatten(layout_, blocks);
}

ParameterVector GaussianPolicy::project(const ParameterVector& params) const {
  Eigen::MatrixXd ls = params.block(kLogStd);
  return params.with_block(kLogStd, ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax));
}

void GaussianPolicy::check_states(const Eigen::MatrixXd& states) const {
  if (states.cols() != state_dim()) {
    throw ConfigError("policy expects states of dimension " + std::to_string(state_dim()));
  }
}

Eigen::MatrixXd GaussianPolicy::mean(const ParameterVector& params,
                                     const Eigen::MatrixXd& states) const {
  check_states(states);
  return mlp_forward_batch(mean_spec_, params, states, kMeanPrefix);
}

Eigen::VectorXd GaussianPolicy::mean(const ParameterVector& params,
                                     const Eigen::VectorXd& state) const {
  return mlp_forward(mean_spec_, params, state, kMeanPrefix);
}

Eigen::VectorXd GaussianPolicy::log_std(const ParameterVector& params) const {
  return params.block(kLogStd).row(0).transpose();
}

ActionSample GaussianPolicy::sample_action(const ParameterVector& params,
                                           const Eigen::VectorXd& state, Rng& rng) const {
  Eigen::MatrixXd row = state.transpose();
  ActionBatch b = sample_actions(params, row, rng);
  return ActionSample{b.actions.row(0).transpose(), b.log_probs[0]};
}

ActionBatch GaussianPolicy::sample_actions(const ParameterVector& params,
                                           const Eigen::MatrixXd& states, Rng& rng) const {
  const Eigen::MatrixXd mu = mean(params, states);
  const Eigen::VectorXd ls = log_std(params);
  const Eigen::ArrayXd sigma = ls.array().exp();
  ActionBatch out;
  out.actions.resize(mu.rows(), mu.cols());
  out.log_probs.resize(mu.rows());
  const double base = -ls.sum() - static_cast<double>(action_dim()) * kHalfLog2Pi;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    double quad = 0.0;
    for (Eigen::Index j = 0; j < mu.cols(); ++j) {
      const double eps = standard_normal(rng);
      out.actions(i, j) = mu(i, j) + sigma[j] * eps;
      quad += eps * eps;
    }
    out.log_probs[i] = base - 0.5 * quad;
  }
  return out;
}

double GaussianPolicy::log_prob(const ParameterVector& params, const Eigen::VectorXd& state,
                                const Eigen::VectorXd& action) const {
  Eigen::MatrixXd s = state.transpose();
  Eigen::MatrixXd a = action.transpose();
  return log_prob(params, s, a)[0];
}

Eigen::VectorXd GaussianPolicy::log_prob(const ParameterVector& params,
                                         const Eigen::MatrixXd& states,
                                         const Eigen::MatrixXd& actions) const {
  if (actions.cols() != action_dim() || actions.rows() != states.rows()) {
    throw ConfigError("policy log_prob: action batch shape mismatch");
  }
  const Eigen::MatrixXd mu = mean(params, states);
  const Eigen::VectorXd ls = log_std(params);
  const Eigen::ArrayXd inv_sigma = (-ls.array()).exp();
  Eigen::MatrixXd z = (actions - mu).array().rowwise() * inv_sigma.transpose();
  return (-0.5 * z.rowwise().squaredNorm()).array() - ls.sum() -
         static_cast<double>(action_dim()) * kHalfLog2Pi;
}

ad::Var GaussianPolicy::log_prob(const ad::ParamVar& params, const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& actions) const {
  check_states(states);
  if (actions.cols() != action_dim() || actions.rows() != states.rows()) {
    throw ConfigError("policy log_prob: action batch shape mismatch");
  }
  ad::Tape& tape = params.tape();
  ad::Var mu = mlp_forward(mean_spec_, params, tape.constant(states), kMeanPrefix);
  ad::Var ls = params.block(kLogStd);
  ad::Var z = ad::mul_row(ad::sub(tape.constant(actions), mu), ad::exp(ad::scale(ls, -1.0)));
  ad::Var quad = ad::scale(ad::row_sum(ad::square(z)), -0.5);
  ad::Var norm = ad::add_scalar(ad::scale(ad::sum(ls), -1.0),
                                -static_cast<double>(action_dim()) * kHalfLog2Pi);
  return ad::add_row(quad, norm);
}

Eigen::VectorXd GaussianPolicy::kl(const ParameterVector& p, const ParameterVector& q,
                                   const Eigen::MatrixXd& states) const {
  const Eigen::MatrixXd mu_p = mean(p, states);
  const Eigen::MatrixXd mu_q = mean(q, states);
  const Eigen::ArrayXd ls_p = log_std(p).array();
  const Eigen::ArrayXd ls_q = log_std(q).array();
  const Eigen::ArrayXd var_p = (2.0 * ls_p).exp();
  const Eigen::ArrayXd inv_var_q = (-2.0 * ls_q).exp();
  const double log_ratio = (ls_q - ls_p).sum();
  Eigen::VectorXd out(states.rows());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Eigen::ArrayXd d2 = (mu_p.row(i) - mu_q.row(i)).array().square().transpose();
    out[i] = log_ratio + (0.5 * (var_p + d2) * inv_var_q).sum() -
             0.5 * static_cast<double>(action_dim());
  }
  return out;
}

double GaussianPolicy::mean_kl(const ParameterVector& p, const ParameterVector& q,
                               const Eigen::MatrixXd& states) const {
  if (states.rows() == 0) throw PreconditionError("mean_kl needs at least one state");
  return kl(p, q, states).mean();
}

ad::Var GaussianPolicy::mean_kl(const Eigen::MatrixXd& p_means,
                                const Eigen::VectorXd& p_log_std, const ad::ParamVar& q,
                                const Eigen::MatrixXd& states) const {
  check_states(states);
  if (states.rows() == 0) throw PreconditionError("mean_kl needs at least one state");
  ad::Tape& tape = q.tape();
  ad::Var mu_q = mlp_forward(mean_spec_, q, tape.constant(states), kMeanPrefix);
  ad::Var ls_q = q.block(kLogStd);
  const Eigen::MatrixXd var_p = (2.0 * p_log_std.array()).exp().matrix().transpose();
  ad::Var d2 = ad::square(ad::sub(mu_q, tape.constant(p_means)));
  ad::Var numer = ad::add_row(d2, tape.constant(var_p));
  ad::Var ratio = ad::mul_row(numer, ad::exp(ad::scale(ls_q, -2.0)));
  ad::Var quad = ad::scale(ad::mean(ad::row_sum(ratio)), 0.5);
  const double const_part = -p_log_std.sum() - 0.5 * static_cast<double>(action_dim());
  return ad::add_scalar(ad::add(quad, ad::sum(ls_q)), const_part);
}

}  // namespace mbmpo
