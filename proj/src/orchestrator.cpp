#include "mbmpo/orchestrator.hpp"

#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mbmpo/errors.hpp"
#include "mbmpo/harness/checkpoint.hpp"

namespace mbmpo {

namespace {

enum class Purpose : std::uint64_t {
  kInit = 1,
  kCollect,
  kTrain,
  kPerturb,
  kImagInner,
  kImagOuter,
  kEval,
};

// one rng stream per (iteration, meta step, model, purpose)
Rng stream_rng(std::uint64_t seed, int iteration, int step, int k, Purpose purpose) {
  const std::uint64_t id =
      ((static_cast<std::uint64_t>(iteration) * 4096 + static_cast<std::uint64_t>(step)) * 256 +
       static_cast<std::uint64_t>(k)) *
          16 +
      static_cast<std::uint64_t>(purpose);
  return derive_rng(seed, id);
}

struct ImaginaryTasks {
  std::vector<ModelTask> tasks;
  std::vector<ParameterVector> adapted;
  std::vector<ParameterVector> inner_gradients;
  std::vector<double> inner_kl;
  int truncated = 0;
};

// Inner batches under theta, adapted policies and (optionally) outer batches
// under the adapted policies, for every model.
ImaginaryTasks build_tasks(const RunConfig& config, const GaussianPolicy& policy,
                           const ParameterVector& theta, const ModelEnsemble& ensemble,
                           const TaskSpec& task, int iteration, int step, bool with_outer) {
  const int horizon = task.mdp.horizon;
  const int per_model = config.imaginary_per_model(horizon);
  ImaginaryTasks out;
  for (int k = 0; k < ensemble.size(); ++k) {
    Rng inner_rng = stream_rng(config.seed, iteration, step, k, Purpose::kImagInner);
    const TrajectoryBatch inner_traj =
        rollout_model(ensemble, k, policy, theta, task, per_model, horizon, inner_rng);
    ModelTask model_task;
    model_task.inner = make_policy_batch(inner_traj, config.advantages, horizon);
    const ParameterVector g = inner_gradient(policy, theta, model_task.inner);
    if (!g.all_finite()) {
      throw NumericError("inner policy gradient is not finite for model " + std::to_string(k));
    }
    const ParameterVector adapted = theta.axpy(config.alpha, g);
    out.inner_kl.push_back(policy.mean_kl(theta, adapted, model_task.inner.states));
    for (const auto& t : inner_traj.trajectories) out.truncated += t.truncated ? 1 : 0;

    if (with_outer) {
      Rng outer_rng = stream_rng(config.seed, iteration, step, k, Purpose::kImagOuter);
      const TrajectoryBatch outer_traj =
          rollout_model(ensemble, k, policy, adapted, task, per_model, horizon, outer_rng);
      model_task.outer = make_policy_batch(outer_traj, config.advantages, horizon);
      // same code path as the surrogate, so ratios are exactly 1 at theta
      model_task.outer.log_probs =
          policy.log_prob(adapted, model_task.outer.states, model_task.outer.actions);
      for (const auto& t : outer_traj.trajectories) out.truncated += t.truncated ? 1 : 0;
    }
    out.tasks.push_back(std::move(model_task));
    out.adapted.push_back(adapted);
    out.inner_gradients.push_back(g);
  }
  return out;
}

// The tape allocates and frees many same-sized blocks above the default mmap
// threshold; keeping them on the heap avoids a page-fault storm.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string format_double(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  make_environment(env_id);
  if (ensemble_size < 1) throw ConfigError("ensemble_size must be at least 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  trpo.validate();
  if (meta_steps_per_iter < 1 || real_transitions_per_iter < 1 || imaginary_transitions < 1 ||
      n_iterations < 1 || eval_episodes < 1 || checkpoint_every < 1 || fisher_state_stride < 1) {
    throw ConfigError("run counts must be positive");
  }
  if (perturbation.b_max < 0.0 || perturbation.noise_std < 0.0) {
    throw ConfigError("perturbation b_max and noise_std must be non-negative");
  }
  for (int h : model_hidden) {
    if (h < 1) throw ConfigError("model hidden sizes must be positive");
  }
  for (int h : policy_hidden) {
    if (h < 1) throw ConfigError("policy hidden sizes must be positive");
  }
  if (model_train.batch_size < 1 || model_train.max_epochs < 1 || model_train.patience < 1) {
    throw ConfigError("model training counts must be positive");
  }
  if (!(model_train.validation_fraction > 0.0 && model_train.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (!(advantages.discount > 0.0 && advantages.discount <= 1.0) ||
      !(advantages.gae_lambda >= 0.0 && advantages.gae_lambda <= 1.0)) {
    throw ConfigError("discount must lie in (0, 1] and gae_lambda in [0, 1]");
  }
}

int RunConfig::imaginary_per_model(int horizon) const {
  const int per_model = imaginary_transitions / ensemble_size / horizon * horizon;
  return std::max(per_model, horizon);
}

double IterationRecord::mean_model_val_loss() const { return mean_of(model_val_losses); }
double IterationRecord::mean_inner_kl() const { return mean_of(inner_kl); }

GaussianPolicy make_policy(const RunConfig& config, const MdpSpec& mdp) {
  MlpSpec spec;
  spec.input_dim = mdp.state_dim;
  spec.hidden_sizes = config.policy_hidden;
  spec.output_dim = mdp.action_dim;
  spec.activation = config.policy_activation;
  spec.weight_normalized = false;
  return GaussianPolicy(spec);
}

EvalStats evaluate(const GaussianPolicy& policy, const ParameterVector& theta,
                   const Environment& env, int n_episodes, Rng& rng) {
  if (n_episodes < 1) throw PreconditionError("evaluate needs at least one episode");
  const int horizon = env.spec().horizon;
  const TrajectoryBatch batch =
      rollout_real(env, policy, {theta}, n_episodes * horizon, horizon, rng);
  std::vector<double> returns;
  for (const auto& t : batch.trajectories) returns.push_back(t.rewards.sum());
  EvalStats stats;
  stats.episodes = n_episodes;
  stats.mean = mean_of(returns);
  double var = 0.0;
  for (double r : returns) var += (r - stats.mean) * (r - stats.mean);
  stats.std = std::sqrt(var / static_cast<double>(returns.size()));
  return stats;
}

std::string progress_csv_header() {
  return "iteration,real_env_samples_total,avg_return,std_return,mean_model_val_loss,"
         "mean_inner_kl,trpo_accepted";
}

std::string progress_csv_row(const IterationRecord& r) {
  return std::to_string(r.iteration) + "," + std::to_string(r.buffer_size) + "," +
         format_double(r.avg_return) + "," + format_double(r.std_return) + "," +
         format_double(r.mean_model_val_loss()) + "," + format_double(r.mean_inner_kl()) + "," +
         std::to_string(r.trpo_accepted);
}

RunResult run(const RunConfig& config, const RunHooks& hooks) {
  config.validate();
  tune_allocator();
  CountingEnvironment env(make_environment(config.env_id));
  const MdpSpec& mdp = env.spec();
  const int horizon = mdp.horizon;
  const TaskSpec task = env.task();
  const GaussianPolicy policy = make_policy(config, mdp);

  Rng init_rng = stream_rng(config.seed, 0, 0, 0, Purpose::kInit);
  RunResult result;
  result.theta = policy.initial_params(init_rng, config.init_log_std);
  result.ensemble = ModelEnsemble::create(config.ensemble_size, mdp.state_dim, mdp.action_dim,
                                          config.model_hidden, init_rng);
  if (config.perturbation.enabled) {
    Perturbation p;
    p.b_max = config.perturbation.b_max;
    p.noise_std = config.perturbation.noise_std;
    p.bias.assign(static_cast<std::size_t>(config.ensemble_size), 0.0);
    result.ensemble.perturbation = p;
  }
  TransitionBuffer buffer(mdp.state_dim, mdp.action_dim);

  MetaUpdateConfig meta_config;
  meta_config.alpha = config.alpha;
  meta_config.trpo = config.trpo;
  meta_config.exact_fisher = config.exact_fisher;
  meta_config.fisher_state_stride = config.fisher_state_stride;

  std::ofstream progress;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    progress.open(std::filesystem::path(config.out_dir) / "progress.csv");
    if (!progress) throw ConfigError("cannot write progress.csv in " + config.out_dir);
    progress << progress_csv_header() << "\n";
  }

  for (int it = 0; it < config.n_iterations; ++it) {
    try {
      IterationRecord record;
      record.iteration = it;

      Rng collect_rng = stream_rng(config.seed, it, 0, 0, Purpose::kCollect);
      const long before_collect = env.steps();
      TrajectoryBatch real;
      if (it == 0) {
        real = rollout_uniform(env, config.real_transitions_per_iter, horizon, collect_rng);
      } else if (config.tailored_collection) {
        real = rollout_real(env, policy, result.adapted, config.real_transitions_per_iter,
                            horizon, collect_rng);
      } else {
        real = rollout_real(env, policy, {result.theta}, config.real_transitions_per_iter,
                            horizon, collect_rng);
      }
      append_to_buffer(real, mdp, buffer);
      result.real_steps_collected += env.steps() - before_collect;

      Rng train_rng = stream_rng(config.seed, it, 0, 0, Purpose::kTrain);
      EnsembleTrainResult trained =
          train_ensemble(result.ensemble, buffer, config.model_train, train_rng);
      result.ensemble = std::move(trained.ensemble);
      record.model_stats = trained.stats;
      for (const auto& s : record.model_stats) {
        record.model_val_losses.push_back(s.final_validation_loss);
      }
      if (result.ensemble.perturbation) {
        Rng perturb_rng = stream_rng(config.seed, it, 0, 0, Purpose::kPerturb);
        result.ensemble = resample_perturbation(std::move(result.ensemble), perturb_rng);
      }

      std::vector<double> kl_sum(static_cast<std::size_t>(config.ensemble_size), 0.0);
      ImaginaryTasks tasks;
      for (int step = 0; step < config.meta_steps_per_iter; ++step) {
        if (step == 0 || config.resample_imaginary) {
          tasks = build_tasks(config, policy, result.theta, result.ensemble, task, it, step, true);
          record.truncated_rollouts += tasks.truncated;
        }
        MetaPolicyState state;
        state.theta = result.theta;
        state.adapted = tasks.adapted;
        state.inner_gradients = tasks.inner_gradients;
        state.alpha = config.alpha;
        const MetaUpdateResult update = meta_update(policy, state, tasks.tasks, meta_config);

        TrpoStepLog log;
        log.accepted = update.trpo.accepted;
        log.backtracks = update.trpo.backtracks;
        log.kl = update.trpo.kl;
        log.surrogate_before = update.trpo.surrogate_before;
        log.surrogate_after = update.trpo.surrogate_after;
        if (update.trpo.accepted) {
          result.theta = policy.project(update.trpo.theta);
          ++record.trpo_accepted;
        }
        log.theta_changed = result.theta.values() != state.theta.values();
        record.trpo_steps.push_back(log);
        for (std::size_t k = 0; k < kl_sum.size(); ++k) kl_sum[k] += tasks.inner_kl[k];
        ++record.meta_steps;
      }
      for (double s : kl_sum) record.inner_kl.push_back(s / config.meta_steps_per_iter);

      // most recent adaptation of the final theta; used for the next collection
      const ImaginaryTasks final_adapt = build_tasks(
          config, policy, result.theta, result.ensemble, task, it, config.meta_steps_per_iter,
          false);
      result.adapted = final_adapt.adapted;

      Rng eval_rng = stream_rng(config.seed, it, 0, 0, Purpose::kEval);
      const long before_eval = env.steps();
      const EvalStats eval = evaluate(policy, result.theta, env, config.eval_episodes, eval_rng);
      result.real_steps_eval += env.steps() - before_eval;
      record.avg_return = eval.mean;
      record.std_return = eval.std;
      record.buffer_size = static_cast<long>(buffer.size());
      record.real_steps_total = env.steps();

      if (progress.is_open()) progress << progress_csv_row(record) << "\n" << std::flush;
      if (!config.out_dir.empty() &&
          ((it + 1) % config.checkpoint_every == 0 || it + 1 == config.n_iterations)) {
        Checkpoint cp;
        cp.env_id = config.env_id;
        cp.iteration = it + 1;
        cp.seed = config.seed;
        cp.alpha = config.alpha;
        cp.policy_spec = policy.mean_spec();
        cp.theta = result.theta;
        cp.adapted = result.adapted;
        cp.ensemble = result.ensemble;
        const auto dir = std::filesystem::path(config.out_dir) / "checkpoints";
        std::filesystem::create_directories(dir);
        save_checkpoint(cp, (dir / ("iter_" + std::to_string(it + 1) + ".json")).string());
      }
      result.records.push_back(std::move(record));
      if (hooks.on_iteration) hooks.on_iteration(result.records.back());
    } catch (const Error& e) {
      rethrow_with_context(e, "iteration " + std::to_string(it));
    }
  }
  return result;
}

}  // namespace mbmpo
