#ifndef MBMPO_ENVS_HPP_
#define MBMPO_ENVS_HPP_

#include <Eigen/Dense>

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "mbmpo/rng.hpp"

namespace mbmpo {

struct MdpSpec {
  int state_dim = 1;
  int action_dim = 1;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  int horizon = 1;
  double discount = 0.99;

  void validate() const;
  // projection onto the action box
  Eigen::VectorXd clip(const Eigen::VectorXd& action) const;
  Eigen::MatrixXd clip_rows(const Eigen::MatrixXd& actions) const;
};

// Reward over a batch. Rows are samples; actions are the applied (clipped) ones.
using RewardFunction =
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions)>;
using InitialStateSampler = std::function<Eigen::VectorXd(Rng&)>;

// Everything an imaginary rollout may know about an environment: its spaces,
// the known reward and the initial-state law. No transition function.
struct TaskSpec {
  std::string id;
  MdpSpec mdp;
  RewardFunction reward;
  InitialStateSampler reset;
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;
};

// A real (ground-truth) environment. step() is a pure function of its inputs;
// only reset() consumes randomness.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view id() const = 0;
  virtual const MdpSpec& spec() const = 0;
  virtual Eigen::VectorXd reset(Rng& rng) const = 0;
  // `t` is the index of the step being taken; done once t + 1 reaches the horizon
  virtual StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                          int t) const = 0;
  virtual TaskSpec task() const = 0;
};

// S = R^2, A = [-0.1, 0.1]^2, s0 ~ U[-2, 2]^2, s' = s + a, r = -|s|^2, H = 30.
class Point2dEnv final : public Environment {
 public:
  Point2dEnv();

  std::string_view id() const override { return "point2d"; }
  const MdpSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset(Rng& rng) const override;
  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                  int t) const override;
  TaskSpec task() const override;

  static Eigen::VectorXd reward_batch(const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& actions);
  static Eigen::VectorXd sample_initial(Rng& rng);

 private:
  MdpSpec spec_;
};

// Damped double integrator. State (px, py, vx, vy), A = [-0.5, 0.5]^2,
// v' = 0.9 v + 0.1 a, p' = p + 0.1 v', r = -|p|^2 - 0.05 |a|^2, H = 50.
// Resets to p ~ U[-2, 2]^2 at rest.
class PointMassEnv final : public Environment {
 public:
  PointMassEnv();

  std::string_view id() const override { return "pointmass"; }
  const MdpSpec& spec() const override { return spec_; }
  Eigen::VectorXd reset(Rng& rng) const override;
  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                  int t) const override;
  TaskSpec task() const override;

  static Eigen::VectorXd reward_batch(const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& actions);
  static Eigen::VectorXd sample_initial(Rng& rng);

 private:
  MdpSpec spec_;
};

// Wraps an environment and counts every step() call. The orchestrator uses it
// as the real-world sample ledger.
class CountingEnvironment final : public Environment {
 public:
  explicit CountingEnvironment(std::unique_ptr<Environment> inner);

  std::string_view id() const override { return inner_->id(); }
  const MdpSpec& spec() const override { return inner_->spec(); }
  Eigen::VectorXd reset(Rng& rng) const override { return inner_->reset(rng); }
  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                  int t) const override;
  TaskSpec task() const override { return inner_->task(); }

  long steps() const { return steps_.load(); }

 private:
  std::unique_ptr<Environment> inner_;
  mutable std::atomic<long> steps_{0};
};

// "point2d" or "pointmass"; anything else is a configuration error
std::unique_ptr<Environment> make_environment(std::string_view id);

// Hand-coded greedy controller: for point2d, step toward the origin at the
// maximum clipped speed; for pointmass, PD control toward the origin.
Eigen::VectorXd scripted_action(std::string_view env_id, const Eigen::VectorXd& state);

// Return of one scripted episode from a given start state.
double scripted_episode_return(const Environment& env, const Eigen::VectorXd& start);

// Monte-Carlo average return of the scripted controller.
double scripted_oracle_return(const Environment& env, int n_episodes, Rng& rng);

}  // namespace mbmpo

#endif  // MBMPO_ENVS_HPP_
