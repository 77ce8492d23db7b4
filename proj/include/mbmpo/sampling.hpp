#ifndef MBMPO_SAMPLING_HPP_
#define MBMPO_SAMPLING_HPP_

#include <Eigen/Dense>

#include <optional>
#include <ostream>
#include <vector>

#include "mbmpo/dynamics.hpp"
#include "mbmpo/envs.hpp"
#include "mbmpo/policy.hpp"
#include "mbmpo/rng.hpp"

namespace mbmpo {

enum class TrajectorySource { kReal, kModel };

// One episode. Actions are the raw policy samples (before clipping); the
// environment or rollout applies the action-box projection.
struct Trajectory {
  Eigen::MatrixXd states;     // (T + 1) x state_dim
  Eigen::MatrixXd actions;    // T x action_dim
  Eigen::VectorXd rewards;    // T
  Eigen::VectorXd log_probs;  // T
  TrajectorySource source = TrajectorySource::kReal;
  int model_index = -1;
  bool truncated = false;

  Eigen::Index length() const { return rewards.size(); }
  void validate() const;
};

struct TrajectoryBatch {
  std::vector<Trajectory> trajectories;
  TrajectorySource source = TrajectorySource::kReal;
  std::optional<int> model_index;

  Eigen::Index num_transitions() const;
  bool any_truncated() const;
  double mean_return() const;
};

// Round-robin collection in the real environment: trajectory j is generated
// by policies[j % policies.size()]. Output is ordered by (policy, trajectory).
TrajectoryBatch rollout_real(const Environment& env, const GaussianPolicy& policy,
                             const std::vector<ParameterVector>& policies, int n_transitions,
                             int horizon, Rng& rng);

// Uniform random controller over the action box.
TrajectoryBatch rollout_uniform(const Environment& env, int n_transitions, int horizon,
                                Rng& rng);

// Imaginary rollouts under model k: s0 from the task's initial law, states
// propagated by the model (plus its perturbation), rewards from the task's
// known reward. Trajectories whose state leaves |s|_inf <= kDivergenceLimit
// are truncated and flagged.
constexpr double kDivergenceLimit = 1e3;
TrajectoryBatch rollout_model(const ModelEnsemble& ensemble, int k, const GaussianPolicy& policy,
                              const ParameterVector& params, const TaskSpec& task,
                              int n_transitions, int horizon, Rng& rng);

// Appends every (s, clip(a), s') of a real batch to the buffer.
void append_to_buffer(const TrajectoryBatch& batch, const MdpSpec& spec,
                      TransitionBuffer& buffer);

Eigen::VectorXd discounted_returns(const Eigen::VectorXd& rewards, double discount);

// Linear value baseline over [s, s*s, t/H, (t/H)^2, (t/H)^3, 1].
struct LinearBaseline {
  Eigen::VectorXd weights;
  int horizon = 1;

  static Eigen::MatrixXd features(const Trajectory& traj, int horizon);
  Eigen::VectorXd predict(const Trajectory& traj) const;
};

// Ridge least squares of discounted returns-to-go on the feature map. The
// damping is raised tenfold while the solution is non-finite.
LinearBaseline fit_baseline(const TrajectoryBatch& batch, double discount, int horizon,
                            double damping = 1e-5);

// GAE per trajectory with V from the baseline and zero terminal value.
std::vector<Eigen::VectorXd> gae(const TrajectoryBatch& batch, const LinearBaseline& baseline,
                                 double discount, double lambda);

// Flattened view used by the policy-gradient objectives.
struct PolicyBatch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd advantages;

  Eigen::Index size() const { return states.rows(); }
};

struct AdvantageConfig {
  double discount = 0.99;
  double gae_lambda = 1.0;
  bool standardize = true;
  double baseline_damping = 1e-5;
};

Eigen::VectorXd standardize(const Eigen::VectorXd& x);

// baseline fit + GAE (+ optional standardization) + flattening
PolicyBatch make_policy_batch(const TrajectoryBatch& batch, const AdvantageConfig& config,
                              int horizon);

// CSV with columns traj_id,t,s0..,a0..,r,logp (one row per transition).
void write_trajectory_csv(const TrajectoryBatch& batch, std::ostream& out);

}  // namespace mbmpo

#endif  // MBMPO_SAMPLING_HPP_
