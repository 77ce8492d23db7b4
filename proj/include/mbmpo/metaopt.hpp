#ifndef MBMPO_METAOPT_HPP_
#define MBMPO_METAOPT_HPP_

#include <functional>
#include <vector>

#include "mbmpo/diffcore/parameter_vector.hpp"
#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/policy.hpp"
#include "mbmpo/sampling.hpp"

namespace mbmpo {

struct TrpoConfig {
  double kl_bound = 0.01;
  int cg_iters = 10;
  double cg_damping = 1e-2;
  double backtrack_ratio = 0.8;
  int max_backtracks = 15;

  void validate() const;
};

// Imaginary data for one ensemble member: `inner` was sampled under the
// pre-update policy and drives the adaptation step; `outer` was sampled under
// the adapted policy and its log_probs are those of that adapted policy.
struct ModelTask {
  PolicyBatch inner;
  PolicyBatch outer;
};

// Pre-update parameters, the per-model adapted parameters and the inner
// gradients they were built from: adapted[k] == theta + alpha * inner_gradients[k].
struct MetaPolicyState {
  ParameterVector theta;
  std::vector<ParameterVector> adapted;
  std::vector<ParameterVector> inner_gradients;
  double alpha = 1e-3;
};

// -- inner step -- //

// mean over the batch of log pi(a|s) * A
ad::Var inner_objective(const GaussianPolicy& policy, const ad::ParamVar& params,
                        const PolicyBatch& batch);
// likelihood-ratio (VPG) gradient of the inner objective
ParameterVector inner_gradient(const GaussianPolicy& policy, const ParameterVector& theta,
                               const PolicyBatch& batch);
// theta + alpha * inner_gradient; `model_index` is only used for error messages
ParameterVector inner_adapt(const GaussianPolicy& policy, const ParameterVector& theta,
                            const PolicyBatch& batch, double alpha, int model_index = -1);

// -- outer objective -- //

// mean over the batch of exp(log pi(a|s) - log_prob_old) * A
ad::Var outer_surrogate(const GaussianPolicy& policy, const ad::ParamVar& params,
                        const PolicyBatch& batch);
double outer_surrogate(const GaussianPolicy& policy, const ParameterVector& params,
                       const PolicyBatch& batch);

// (1/K) sum_k outer_surrogate_k(theta + alpha * inner_gradient_k(theta))
double meta_surrogate(const GaussianPolicy& policy, const ParameterVector& theta,
                      const std::vector<ModelTask>& tasks, double alpha);

// Gradient of meta_surrogate through the inner step:
// (1/K) sum_k (I + alpha H_k) grad outer_k, with H_k v from hvp_fd.
ParameterVector meta_gradient(const GaussianPolicy& policy, const ParameterVector& theta,
                              const std::vector<ModelTask>& tasks, double alpha);

// Mean over models and outer states of KL(pi_{adapted_old[k]} || pi_{theta'_k(candidate)}).
double meta_kl(const GaussianPolicy& policy, const ParameterVector& candidate,
               const std::vector<ModelTask>& tasks,
               const std::vector<ParameterVector>& adapted_old, double alpha);

// Gradient of meta_kl. The exact form differentiates through the inner step;
// the first-order form treats d theta'_k / d theta as the identity.
// `state_stride` > 1 evaluates on every stride-th outer state only.
ParameterVector meta_kl_gradient(const GaussianPolicy& policy, const ParameterVector& candidate,
                                 const ParameterVector& theta,
                                 const std::vector<ModelTask>& tasks,
                                 const std::vector<ParameterVector>& adapted_old, double alpha,
                                 bool exact, int state_stride = 1);

// -- trust-region step -- //

struct TrustRegionEval {
  double surrogate = 0.0;
  double kl = 0.0;
};

struct TrustRegionProblem {
  // surrogate and KL at candidate parameters
  std::function<TrustRegionEval(const ParameterVector&)> evaluate;
  // gradient of the KL constraint; the Fisher-vector product is its hvp_fd
  ad::GradFn kl_gradient;
};

struct TrpoResult {
  ParameterVector theta;
  bool accepted = false;
  int backtracks = 0;
  double kl = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  ParameterVector full_step;
};

// Solves apply(x) = b by conjugate gradient.
ParameterVector conjugate_gradient(const std::function<ParameterVector(const ParameterVector&)>& apply,
                                   const ParameterVector& b, int iterations,
                                   double residual_tol = 1e-10);

// Natural-gradient step scaled so the quadratic KL model equals kl_bound,
// followed by a backtracking line search that requires surrogate improvement
// and measured KL <= kl_bound. On failure theta is returned unchanged.
TrpoResult trpo_step(const ParameterVector& theta, const ParameterVector& meta_grad,
                     const TrustRegionProblem& problem, const TrpoConfig& config);

// -- full meta update -- //

struct MetaUpdateConfig {
  double alpha = 1e-3;
  TrpoConfig trpo;
  bool exact_fisher = false;
  int fisher_state_stride = 1;
};

struct MetaUpdateResult {
  ParameterVector meta_grad;
  TrpoResult trpo;
};

// meta_gradient + trpo_step over the adapted-policy KL. Touches only the
// imaginary batches in `tasks`.
MetaUpdateResult meta_update(const GaussianPolicy& policy, const MetaPolicyState& state,
                             const std::vector<ModelTask>& tasks,
                             const MetaUpdateConfig& config);

}  // namespace mbmpo

#endif  // MBMPO_METAOPT_HPP_
