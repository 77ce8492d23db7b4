#include "mbmpo/metaopt.hpp"

#include <cmath>
#include <string>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

void require_tasks(const std::vector<ModelTask>& tasks) {
  if (tasks.empty()) throw PreconditionError("meta objective needs at least one model task");
}

// perturbation size of ~1e-5 relative to the parameter scale, whatever |v| is
double hvp_eps(const ParameterVector& at, const ParameterVector& v) {
  return ad::default_fd_eps(at) / std::max(v.norm(), 1e-12);
}

Eigen::MatrixXd strided_rows(const Eigen::MatrixXd& m, int stride) {
  if (stride <= 1) return m;
  const Eigen::Index n = (m.rows() + stride - 1) / stride;
  Eigen::MatrixXd out(n, m.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = m.row(i * stride);
  return out;
}

// (I + alpha H) v with H the Hessian of the inner objective at theta
ParameterVector inner_jacobian_transpose(const GaussianPolicy& policy,
                                         const ParameterVector& theta,
                                         const PolicyBatch& inner, double alpha,
                                         const ParameterVector& v) {
  if (alpha == 0.0) return v;
  auto g = [&](const ParameterVector& p) { return inner_gradient(policy, p, inner); };
  return v.axpy(alpha, ad::hvp_fd(g, theta, v, hvp_eps(theta, v)));
}

}  // namespace

void TrpoConfig::validate() const {
  if (!(kl_bound > 0.0)) throw ConfigError("trpo kl_bound must be positive");
  if (cg_iters < 1 || max_backtracks < 1) {
    throw ConfigError("trpo iteration counts must be positive");
  }
  if (cg_damping < 0.0) throw ConfigError("trpo cg_damping must be non-negative");
  if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0)) {
    throw ConfigError("trpo backtrack_ratio must lie in (0, 1)");
  }
}

// -- inner step -- //

ad::Var inner_objective(const GaussianPolicy& policy, const ad::ParamVar& params,
                        const PolicyBatch& batch) {
  if (batch.size() == 0) throw PreconditionError("inner objective needs a non-empty batch");
  ad::Var logp = policy.log_prob(params, batch.states, batch.actions);
  return ad::mean(ad::mul(logp, params.tape().constant(batch.advantages)));
}

ParameterVector inner_gradient(const GaussianPolicy& policy, const ParameterVector& theta,
                               const PolicyBatch& batch) {
  return ad::grad(
      [&](ad::Tape&, const ad::ParamVar& p) { return inner_objective(policy, p, batch); },
      theta);
}

ParameterVector inner_adapt(const GaussianPolicy& policy, const ParameterVector& theta,
                            const PolicyBatch& batch, double alpha, int model_index) {
  if (alpha < 0.0) throw ConfigError("inner step size must be non-negative");
  const ParameterVector g = inner_gradient(policy, theta, batch);
  if (!g.all_finite()) {
    throw NumericError("inner policy gradient is not finite for model " +
                       std::to_string(model_index));
  }
  return theta.axpy(alpha, g);
}

// -- outer objective -- //

ad::Var outer_surrogate(const GaussianPolicy& policy, const ad::ParamVar& params,
                        const PolicyBatch& batch) {
  if (batch.size() == 0) throw PreconditionError("outer surrogate needs a non-empty batch");
  ad::Tape& tape = params.tape();
  ad::Var logp = policy.log_prob(params, batch.states, batch.actions);
  ad::Var ratio = ad::exp(ad::sub(logp, tape.constant(batch.log_probs)));
  return ad::mean(ad::mul(ratio, tape.constant(batch.advantages)));
}

double outer_surrogate(const GaussianPolicy& policy, const ParameterVector& params,
                       const PolicyBatch& batch) {
  if (batch.size() == 0) throw PreconditionError("outer surrogate needs a non-empty batch");
  const Eigen::VectorXd logp = policy.log_prob(params, batch.states, batch.actions);
  return ((logp - batch.log_probs).array().exp() * batch.advantages.array()).mean();
}

double meta_surrogate(const GaussianPolicy& policy, const ParameterVector& theta,
                      const std::vector<ModelTask>& tasks, double alpha) {
  require_tasks(tasks);
  double total = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const ParameterVector adapted =
        inner_adapt(policy, theta, tasks[k].inner, alpha, static_cast<int>(k));
    total += outer_surrogate(policy, adapted, tasks[k].outer);
  }
  return total / static_cast<double>(tasks.size());
}

ParameterVector meta_gradient(const GaussianPolicy& policy, const ParameterVector& theta,
                              const std::vector<ModelTask>& tasks, double alpha) {
  require_tasks(tasks);
  ParameterVector total = ParameterVector::zeros(theta.layout());
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const ParameterVector adapted =
        inner_adapt(policy, theta, tasks[k].inner, alpha, static_cast<int>(k));
    const ParameterVector outer = ad::grad(
        [&](ad::Tape&, const ad::ParamVar& p) {
          return outer_surrogate(policy, p, tasks[k].outer);
        },
        adapted);
    total = total + inner_jacobian_transpose(policy, theta, tasks[k].inner, alpha, outer);
  }
  ParameterVector out = (1.0 / static_cast<double>(tasks.size())) * total;
  if (!out.all_finite()) throw NumericError("meta gradient is not finite");
  return out;
}

double meta_kl(const GaussianPolicy& policy, const ParameterVector& candidate,
               const std::vector<ModelTask>& tasks,
               const std::vector<ParameterVector>& adapted_old, double alpha) {
  require_tasks(tasks);
  if (adapted_old.size() != tasks.size()) {
    throw PreconditionError("meta_kl needs one old adapted policy per task");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const ParameterVector adapted =
        inner_adapt(policy, candidate, tasks[k].inner, alpha, static_cast<int>(k));
    total += policy.mean_kl(adapted_old[k], adapted, tasks[k].outer.states);
  }
  return total / static_cast<double>(tasks.size());
}

ParameterVector meta_kl_gradient(const GaussianPolicy& policy, const ParameterVector& candidate,
                                 const ParameterVector& theta,
                                 const std::vector<ModelTask>& tasks,
                                 const std::vector<ParameterVector>& adapted_old, double alpha,
                                 bool exact, int state_stride) {
  require_tasks(tasks);
  ParameterVector total = ParameterVector::zeros(candidate.layout());
  const ParameterVector shift = candidate - theta;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const Eigen::MatrixXd states = strided_rows(tasks[k].outer.states, state_stride);
    const Eigen::MatrixXd p_means = policy.mean(adapted_old[k], states);
    const Eigen::VectorXd p_log_std = policy.log_std(adapted_old[k]);
    const ParameterVector q =
        exact ? inner_adapt(policy, candidate, tasks[k].inner, alpha, static_cast<int>(k))
              : adapted_old[k] + shift;
    const ParameterVector gq = ad::grad(
        [&](ad::Tape&, const ad::ParamVar& p) {
          return policy.mean_kl(p_means, p_log_std, p, states);
        },
        q);
    total = total + (exact ? inner_jacobian_transpose(policy, candidate, tasks[k].inner,
                                                      alpha, gq)
                           : gq);
  }
  return (1.0 / static_cast<double>(tasks.size())) * total;
}

// -- trust-region step -- //

ParameterVector conjugate_gradient(
    const std::function<ParameterVector(const ParameterVector&)>& apply,
    const ParameterVector& b, int iterations, double residual_tol) {
  ParameterVector x = ParameterVector::zeros(b.layout());
  ParameterVector r = b;
  ParameterVector p = b;
  double rr = r.dot(r);
  for (int i = 0; i < iterations && rr > residual_tol; ++i) {
    const ParameterVector ap = apply(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap == 0.0) {
      throw NumericError("conjugate gradient broke down (p'Ap = " + std::to_string(pap) + ")");
    }
    const double step = rr / pap;
    x = x.axpy(step, p);
    r = r.axpy(-step, ap);
    const double rr_next = r.dot(r);
    if (!std::isfinite(rr_next)) throw NumericError("conjugate gradient residual is not finite");
    p = r.axpy(rr_next / rr, p);
    rr = rr_next;
  }
  return x;
}

TrpoResult trpo_step(const ParameterVector& theta, const ParameterVector& meta_grad,
                     const TrustRegionProblem& problem, const TrpoConfig& config) {
  config.validate();
  TrpoResult result;
  result.theta = theta;
  result.full_step = ParameterVector::zeros(theta.layout());
  const TrustRegionEval start = problem.evaluate(theta);
  result.surrogate_before = start.surrogate;
  result.surrogate_after = start.surrogate;
  if (meta_grad.norm() == 0.0) return result;

  auto fvp = [&](const ParameterVector& v) {
    return ad::hvp_fd(problem.kl_gradient, theta, v, hvp_eps(theta, v));
  };
  auto damped = [&](const ParameterVector& v) { return fvp(v).axpy(config.cg_damping, v); };
  const ParameterVector direction = conjugate_gradient(damped, meta_grad, config.cg_iters);
  const double shs = 0.5 * direction.dot(fvp(direction));
  if (!(shs > 0.0) || !std::isfinite(shs)) {
    // curvature estimate unusable; no step
    return result;
  }
  result.full_step = std::sqrt(config.kl_bound / shs) * direction;

  double fraction = 1.0;
  for (int i = 0; i <= config.max_backtracks; ++i, fraction *= config.backtrack_ratio) {
    const ParameterVector candidate = theta.axpy(fraction, result.full_step);
    const TrustRegionEval e = problem.evaluate(candidate);
    if (std::isfinite(e.surrogate) && std::isfinite(e.kl) &&
        e.surrogate > start.surrogate && e.kl <= config.kl_bound) {
      result.theta = candidate;
      result.accepted = true;
      result.backtracks = i;
      result.kl = e.kl;
      result.surrogate_after = e.surrogate;
      return result;
    }
  }
  result.backtracks = config.max_backtracks;
  return result;
}

MetaUpdateResult meta_update(const GaussianPolicy& policy, const MetaPolicyState& state,
                             const std::vector<ModelTask>& tasks,
                             const MetaUpdateConfig& config) {
  require_tasks(tasks);
  if (state.adapted.size() != tasks.size()) {
    throw PreconditionError("meta update needs one adapted policy per task");
  }
  const double alpha = config.alpha;
  MetaUpdateResult out;
  out.meta_grad = meta_gradient(policy, state.theta, tasks, alpha);

  TrustRegionProblem problem;
  problem.evaluate = [&](const ParameterVector& candidate) {
    TrustRegionEval e;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const ParameterVector adapted =
          inner_adapt(policy, candidate, tasks[k].inner, alpha, static_cast<int>(k));
      e.surrogate += outer_surrogate(policy, adapted, tasks[k].outer);
      e.kl += policy.mean_kl(state.adapted[k], adapted, tasks[k].outer.states);
    }
    e.surrogate /= static_cast<double>(tasks.size());
    e.kl /= static_cast<double>(tasks.size());
    return e;
  };
  problem.kl_gradient = [&](const ParameterVector& candidate) {
    return meta_kl_gradient(policy, candidate, state.theta, tasks, state.adapted, alpha,
                            config.exact_fisher, config.fisher_state_stride);
  };
  out.trpo = trpo_step(state.theta, out.meta_grad, problem, config.trpo);
  return out;
}

}  // namespace mbmpo
