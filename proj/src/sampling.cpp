#include "mbmpo/sampling.hpp"

#include <cmath>
#include <string>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

int trajectory_count(int n_transitions, int horizon, int env_horizon) {
  if (horizon < 1 || n_transitions < 1) {
    throw PreconditionError("n_transitions and horizon must be positive");
  }
  if (horizon > env_horizon) {
    throw PreconditionError("rollout horizon exceeds the environment horizon");
  }
  if (n_transitions % horizon != 0) {
    throw PreconditionError("n_transitions (" + std::to_string(n_transitions) +
                            ") must be a multiple of the horizon (" +
                            std::to_string(horizon) + ")");
  }
  return n_transitions / horizon;
}

Trajectory empty_trajectory(int horizon, int state_dim, int action_dim) {
  Trajectory t;
  t.states.resize(horizon + 1, state_dim);
  t.actions.resize(horizon, action_dim);
  t.rewards.resize(horizon);
  t.log_probs.resize(horizon);
  return t;
}

void shrink(Trajectory& t, int length) {
  t.states.conservativeResize(length + 1, Eigen::NoChange);
  t.actions.conservativeResize(length, Eigen::NoChange);
  t.rewards.conservativeResize(length);
  t.log_probs.conservativeResize(length);
}

}  // namespace

void Trajectory::validate() const {
  const Eigen::Index t = rewards.size();
  if (states.rows() != t + 1 || actions.rows() != t || log_probs.size() != t) {
    throw ConfigError("trajectory sequence lengths are inconsistent");
  }
  if (!rewards.allFinite()) throw NumericError("trajectory rewards are not finite");
}

Eigen::Index TrajectoryBatch::num_transitions() const {
  Eigen::Index n = 0;
  for (const auto& t : trajectories) n += t.length();
  return n;
}

bool TrajectoryBatch::any_truncated() const {
  for (const auto& t : trajectories) {
    if (t.truncated) return true;
  }
  return false;
}

double TrajectoryBatch::mean_return() const {
  if (trajectories.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : trajectories) total += t.rewards.sum();
  return total / static_cast<double>(trajectories.size());
}

TrajectoryBatch rollout_real(const Environment& env, const GaussianPolicy& policy,
                             const std::vector<ParameterVector>& policies, int n_transitions,
                             int horizon, Rng& rng) {
  if (policies.empty()) throw PreconditionError("rollout_real needs at least one policy");
  const MdpSpec& spec = env.spec();
  const int n_traj = trajectory_count(n_transitions, horizon, spec.horizon);
  const auto n_pol = static_cast<int>(policies.size());

  // initial states in trajectory order; each policy's group then advances in
  // lock step so the policy network runs once per time step
  std::vector<Eigen::VectorXd> starts;
  for (int j = 0; j < n_traj; ++j) starts.push_back(env.reset(rng));

  TrajectoryBatch batch;
  batch.source = TrajectorySource::kReal;
  for (int p = 0; p < n_pol; ++p) {
    std::vector<int> members;
    for (int j = p; j < n_traj; j += n_pol) members.push_back(j);
    if (members.empty()) continue;
    const auto m = static_cast<Eigen::Index>(members.size());
    std::vector<Trajectory> group;
    Eigen::MatrixXd s(m, spec.state_dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      s.row(i) = starts[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])].transpose();
      group.push_back(empty_trajectory(horizon, spec.state_dim, spec.action_dim));
      group.back().states.row(0) = s.row(i);
    }
    for (int t = 0; t < horizon; ++t) {
      const ActionBatch a = policy.sample_actions(policies[static_cast<std::size_t>(p)], s, rng);
      for (Eigen::Index i = 0; i < m; ++i) {
        Trajectory& traj = group[static_cast<std::size_t>(i)];
        StepResult r = env.step(s.row(i).transpose(), a.actions.row(i).transpose(), t);
        traj.actions.row(t) = a.actions.row(i);
        traj.log_probs[t] = a.log_probs[i];
        traj.rewards[t] = r.reward;
        s.row(i) = r.next_state.transpose();
        traj.states.row(t + 1) = s.row(i);
      }
    }
    for (auto& traj : group) batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

TrajectoryBatch rollout_uniform(const Environment& env, int n_transitions, int horizon,
                                Rng& rng) {
  const MdpSpec& spec = env.spec();
  const int n_traj = trajectory_count(n_transitions, horizon, spec.horizon);
  const double log_density = -(spec.action_high - spec.action_low).array().log().sum();
  TrajectoryBatch batch;
  batch.source = TrajectorySource::kReal;
  for (int j = 0; j < n_traj; ++j) {
    Trajectory traj = empty_trajectory(horizon, spec.state_dim, spec.action_dim);
    Eigen::VectorXd s = env.reset(rng);
    traj.states.row(0) = s.transpose();
    for (int t = 0; t < horizon; ++t) {
      Eigen::VectorXd a(spec.action_dim);
      for (int i = 0; i < spec.action_dim; ++i) {
        a[i] = uniform(rng, spec.action_low[i], spec.action_high[i]);
      }
      StepResult r = env.step(s, a, t);
      traj.actions.row(t) = a.transpose();
      traj.log_probs[t] = log_density;
      traj.rewards[t] = r.reward;
      s = std::move(r.next_state);
      traj.states.row(t + 1) = s.transpose();
    }
    batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

TrajectoryBatch rollout_model(const ModelEnsemble& ensemble, int k, const GaussianPolicy& policy,
                              const ParameterVector& params, const TaskSpec& task,
                              int n_transitions, int horizon, Rng& rng) {
  const MdpSpec& spec = task.mdp;
  const int n_traj = trajectory_count(n_transitions, horizon, spec.horizon);

  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<std::size_t>(n_traj));
  Eigen::MatrixXd s(n_traj, spec.state_dim);
  for (int j = 0; j < n_traj; ++j) {
    s.row(j) = task.reset(rng).transpose();
    trajs.push_back(empty_trajectory(horizon, spec.state_dim, spec.action_dim));
    trajs.back().states.row(0) = s.row(j);
  }
  std::vector<int> length(static_cast<std::size_t>(n_traj), horizon);
  std::vector<bool> alive(static_cast<std::size_t>(n_traj), true);

  // all trajectories advance in lock step; truncated rows keep being
  // propagated in the batch but are no longer recorded
  for (int t = 0; t < horizon; ++t) {
    const ActionBatch a = policy.sample_actions(params, s, rng);
    const Eigen::MatrixXd applied = spec.clip_rows(a.actions);
    const Eigen::VectorXd r = task.reward(s, applied);
    Eigen::MatrixXd next = ensemble.predict(k, s, applied, &rng);
    for (int j = 0; j < n_traj; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (!alive[ju]) continue;
      Trajectory& traj = trajs[ju];
      traj.actions.row(t) = a.actions.row(j);
      traj.log_probs[t] = a.log_probs[j];
      traj.rewards[t] = r[j];
      traj.states.row(t + 1) = next.row(j);
      if (next.row(j).cwiseAbs().maxCoeff() > kDivergenceLimit) {
        alive[ju] = false;
        length[ju] = t + 1;
        traj.truncated = true;
        next.row(j) = s.row(j);  // freeze the diverged row
      }
    }
    s = std::move(next);
  }

  TrajectoryBatch batch;
  batch.source = TrajectorySource::kModel;
  batch.model_index = k;
  for (int j = 0; j < n_traj; ++j) {
    Trajectory& traj = trajs[static_cast<std::size_t>(j)];
    if (traj.truncated) shrink(traj, length[static_cast<std::size_t>(j)]);
    traj.source = TrajectorySource::kModel;
    traj.model_index = k;
    batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

void append_to_buffer(const TrajectoryBatch& batch, const MdpSpec& spec,
                      TransitionBuffer& buffer) {
  if (batch.source != TrajectorySource::kReal) {
    throw PreconditionError("only real transitions may enter the buffer");
  }
  for (const auto& traj : batch.trajectories) {
    for (Eigen::Index t = 0; t < traj.length(); ++t) {
      buffer.append(traj.states.row(t).transpose(),
                    spec.clip(traj.actions.row(t).transpose()),
                    traj.states.row(t + 1).transpose());
    }
  }
}

Eigen::VectorXd discounted_returns(const Eigen::VectorXd& rewards, double discount) {
  Eigen::VectorXd out(rewards.size());
  double acc = 0.0;
  for (Eigen::Index t = rewards.size() - 1; t >= 0; --t) {
    acc = rewards[t] + discount * acc;
    out[t] = acc;
  }
  return out;
}

// -- baseline -- //

Eigen::MatrixXd LinearBaseline::features(const Trajectory& traj, int horizon) {
  const Eigen::Index n = traj.length();
  const Eigen::Index d = traj.states.cols();
  Eigen::MatrixXd f(n, 2 * d + 4);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(horizon);
    f.row(t).head(d) = traj.states.row(t);
    f.row(t).segment(d, d) = traj.states.row(t).array().square().matrix();
    f(t, 2 * d) = u;
    f(t, 2 * d + 1) = u * u;
    f(t, 2 * d + 2) = u * u * u;
    f(t, 2 * d + 3) = 1.0;
  }
  return f;
}

Eigen::VectorXd LinearBaseline::predict(const Trajectory& traj) const {
  return features(traj, horizon) * weights;
}

LinearBaseline fit_baseline(const TrajectoryBatch& batch, double discount, int horizon,
                            double damping) {
  const Eigen::Index n = batch.num_transitions();
  if (n == 0) throw PreconditionError("cannot fit a baseline on an empty batch");
  const Eigen::Index d = batch.trajectories.front().states.cols();
  Eigen::MatrixXd x(n, 2 * d + 4);
  Eigen::VectorXd y(n);
  Eigen::Index row = 0;
  for (const auto& traj : batch.trajectories) {
    const Eigen::Index len = traj.length();
    if (len == 0) continue;
    x.middleRows(row, len) = LinearBaseline::features(traj, horizon);
    y.segment(row, len) = discounted_returns(traj.rewards, discount);
    row += len;
  }
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xty = x.transpose() * y;
  LinearBaseline b;
  b.horizon = horizon;
  double reg = damping;
  for (int attempt = 0; attempt < 5; ++attempt) {
    const Eigen::MatrixXd a = xtx + reg * Eigen::MatrixXd::Identity(xtx.rows(), xtx.cols());
    b.weights = a.ldlt().solve(xty);
    if (b.weights.allFinite()) return b;
    reg *= 10.0;
  }
  throw NumericError("baseline fit stayed non-finite after increasing damping");
}

std::vector<Eigen::VectorXd> gae(const TrajectoryBatch& batch, const LinearBaseline& baseline,
                                 double discount, double lambda) {
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("gae lambda must lie in [0, 1]");
  std::vector<Eigen::VectorXd> out;
  out.reserve(batch.trajectories.size());
  for (const auto& traj : batch.trajectories) {
    const Eigen::Index n = traj.length();
    const Eigen::VectorXd v = baseline.predict(traj);
    Eigen::VectorXd adv(n);
    double acc = 0.0;
    for (Eigen::Index t = n - 1; t >= 0; --t) {
      const double next_v = t + 1 < n ? v[t + 1] : 0.0;
      const double delta = traj.rewards[t] + discount * next_v - v[t];
      acc = delta + discount * lambda * acc;
      adv[t] = acc;
    }
    out.push_back(std::move(adv));
  }
  return out;
}

Eigen::VectorXd standardize(const Eigen::VectorXd& x) {
  if (x.size() == 0) return x;
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  return (x.array() - mean) / std::max(sd, 1e-8);
}

PolicyBatch make_policy_batch(const TrajectoryBatch& batch, const AdvantageConfig& config,
                              int horizon) {
  const Eigen::Index n = batch.num_transitions();
  if (n == 0) throw PreconditionError("policy batch needs at least one transition");
  const LinearBaseline baseline =
      fit_baseline(batch, config.discount, horizon, config.baseline_damping);
  const auto advantages = gae(batch, baseline, config.discount, config.gae_lambda);

  const auto& first = batch.trajectories.front();
  PolicyBatch out;
  out.states.resize(n, first.states.cols());
  out.actions.resize(n, first.actions.cols());
  out.log_probs.resize(n);
  out.advantages.resize(n);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const auto& traj = batch.trajectories[i];
    const Eigen::Index len = traj.length();
    if (len == 0) continue;
    out.states.middleRows(row, len) = traj.states.topRows(len);
    out.actions.middleRows(row, len) = traj.actions;
    out.log_probs.segment(row, len) = traj.log_probs;
    out.advantages.segment(row, len) = advantages[i];
    row += len;
  }
  if (config.standardize) out.advantages = standardize(out.advantages);
  return out;
}

void write_trajectory_csv(const TrajectoryBatch& batch, std::ostream& out) {
  if (batch.trajectories.empty()) return;
  const Eigen::Index ds = batch.trajectories.front().states.cols();
  const Eigen::Index da = batch.trajectories.front().actions.cols();
  out << "traj_id,t";
  for (Eigen::Index i = 0; i < ds; ++i) out << ",s" << i;
  for (Eigen::Index i = 0; i < da; ++i) out << ",a" << i;
  out << ",r,logp\n";
  const auto old_precision = out.precision(17);
  for (std::size_t j = 0; j < batch.trajectories.size(); ++j) {
    const auto& traj = batch.trajectories[j];
    for (Eigen::Index t = 0; t < traj.length(); ++t) {
      out << j << ',' << t;
      for (Eigen::Index i = 0; i < ds; ++i) out << ',' << traj.states(t, i);
      for (Eigen::Index i = 0; i < da; ++i) out << ',' << traj.actions(t, i);
      out << ',' << traj.rewards[t] << ',' << traj.log_probs[t] << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace mbmpo
