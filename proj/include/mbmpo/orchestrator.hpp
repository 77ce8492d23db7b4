#ifndef MBMPO_ORCHESTRATOR_HPP_
#define MBMPO_ORCHESTRATOR_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/dynamics.hpp"
#include "mbmpo/envs.hpp"
#include "mbmpo/metaopt.hpp"
#include "mbmpo/policy.hpp"
#include "mbmpo/sampling.hpp"

namespace mbmpo {

struct PerturbationConfig {
  bool enabled = false;
  double b_max = 0.0;
  double noise_std = 0.1;
};

struct RunConfig {
  std::string env_id = "point2d";
  int ensemble_size = 5;
  double alpha = 1e-3;
  TrpoConfig trpo;
  int meta_steps_per_iter = 30;
  int real_transitions_per_iter = 600;
  // total over the ensemble for one meta step; split evenly across models and
  // rounded down to whole episodes
  int imaginary_transitions = 6000;
  int n_iterations = 50;
  std::uint64_t seed = 0;
  bool tailored_collection = true;
  // false: one imaginary batch per iteration is reused by every meta step
  bool resample_imaginary = true;
  PerturbationConfig perturbation;
  // per-iteration evaluation episodes of the pre-update policy
  int eval_episodes = 10;

  std::vector<int> model_hidden = {64, 64};
  std::vector<int> policy_hidden = {32, 32};
  Activation policy_activation = Activation::kTanh;
  double init_log_std = 0.0;
  ModelTrainConfig model_train;
  AdvantageConfig advantages;
  bool exact_fisher = false;
  // Fisher-vector products use every n-th outer state; the line search uses all
  int fisher_state_stride = 4;

  // empty: no files are written
  std::string out_dir;
  int checkpoint_every = 10;

  void validate() const;
  int imaginary_per_model(int horizon) const;
};

struct TrpoStepLog {
  bool accepted = false;
  bool theta_changed = false;
  int backtracks = 0;
  double kl = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  long buffer_size = 0;
  long real_steps_total = 0;  // collected + evaluation
  double avg_return = 0.0;    // pre-update policy
  double std_return = 0.0;
  std::vector<double> model_val_losses;
  std::vector<ModelTrainStats> model_stats;
  std::vector<double> inner_kl;  // per model, mean over meta steps
  int meta_steps = 0;
  int trpo_accepted = 0;
  int truncated_rollouts = 0;
  std::vector<TrpoStepLog> trpo_steps;

  double mean_model_val_loss() const;
  double mean_inner_kl() const;
};

struct RunResult {
  std::vector<IterationRecord> records;
  ParameterVector theta;
  std::vector<ParameterVector> adapted;
  ModelEnsemble ensemble;
  long real_steps_collected = 0;
  long real_steps_eval = 0;
};

struct EvalStats {
  double mean = 0.0;
  double std = 0.0;
  int episodes = 0;
};

GaussianPolicy make_policy(const RunConfig& config, const MdpSpec& mdp);

// Monte-Carlo return of the stochastic policy pi_theta on the real
// environment over n_episodes full-horizon episodes. Nothing is stored.
EvalStats evaluate(const GaussianPolicy& policy, const ParameterVector& theta,
                   const Environment& env, int n_episodes, Rng& rng);

struct RunHooks {
  std::function<void(const IterationRecord&)> on_iteration;
};

// Full training loop. Iteration 0 collects with the uniform controller;
// later iterations with the adapted policies (or theta when
// tailored_collection is off). Each iteration: collect, retrain the
// ensemble, meta_steps_per_iter meta updates, evaluate theta.
// Errors are rethrown with the iteration index in the message.
RunResult run(const RunConfig& config, const RunHooks& hooks = {});

// Header and rows of progress.csv.
std::string progress_csv_header();
std::string progress_csv_row(const IterationRecord& record);

}  // namespace mbmpo

#endif  // MBMPO_ORCHESTRATOR_HPP_
