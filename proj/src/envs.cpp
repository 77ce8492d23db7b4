#include "mbmpo/envs.hpp"

#include <string>
#include <utility>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

constexpr double kPointMassKp = 1.0;
constexpr double kPointMassKd = 1.5;

void require_finite(const Eigen::VectorXd& x, const char* what) {
  if (!x.allFinite()) throw NumericError(std::string(what) + " is not finite");
}

void require_size(const Eigen::VectorXd& x, int n, const char* what) {
  if (x.size() != n) {
    throw ConfigError(std::string(what) + " has length " + std::to_string(x.size()) +
                      ", expected " + std::to_string(n));
  }
}

}  // namespace

void MdpSpec::validate() const {
  if (state_dim <= 0 || action_dim <= 0) throw ConfigError("mdp dimensions must be positive");
  if (horizon < 1) throw ConfigError("mdp horizon must be at least 1");
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  if (action_low.size() != action_dim || action_high.size() != action_dim) {
    throw ConfigError("action bounds do not match action_dim");
  }
  if (!(action_low.array() < action_high.array()).all()) {
    throw ConfigError("action_low must be below action_high elementwise");
  }
}

Eigen::VectorXd MdpSpec::clip(const Eigen::VectorXd& action) const {
  return action.cwiseMax(action_low).cwiseMin(action_high);
}

Eigen::MatrixXd MdpSpec::clip_rows(const Eigen::MatrixXd& actions) const {
  Eigen::MatrixXd out = actions;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = out.col(j).cwiseMax(action_low[j]).cwiseMin(action_high[j]);
  }
  return out;
}

// -- point2d -- //

Point2dEnv::Point2dEnv() {
  spec_.state_dim = 2;
  spec_.action_dim = 2;
  spec_.action_low = Eigen::VectorXd::Constant(2, -0.1);
  spec_.action_high = Eigen::VectorXd::Constant(2, 0.1);
  spec_.horizon = 30;
  spec_.discount = 0.99;
}

Eigen::VectorXd Point2dEnv::sample_initial(Rng& rng) {
  Eigen::VectorXd s(2);
  s[0] = uniform(rng, -2.0, 2.0);
  s[1] = uniform(rng, -2.0, 2.0);
  return s;
}

Eigen::VectorXd Point2dEnv::reset(Rng& rng) const { return sample_initial(rng); }

Eigen::VectorXd Point2dEnv::reward_batch(const Eigen::MatrixXd& states,
                                         const Eigen::MatrixXd& /*actions*/) {
  return -states.rowwise().squaredNorm();
}

StepResult Point2dEnv::step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                            int t) const {
  require_size(state, 2, "state");
  require_size(action, 2, "action");
  require_finite(state, "state");
  StepResult r;
  r.reward = -state.squaredNorm();
  r.next_state = state + spec_.clip(action);
  r.done = t + 1 >= spec_.horizon;
  return r;
}

TaskSpec Point2dEnv::task() const {
  return TaskSpec{"point2d", spec_, &Point2dEnv::reward_batch, &Point2dEnv::sample_initial};
}

// -- pointmass -- //

PointMassEnv::PointMassEnv() {
  spec_.state_dim = 4;
  spec_.action_dim = 2;
  spec_.action_low = Eigen::VectorXd::Constant(2, -0.5);
  spec_.action_high = Eigen::VectorXd::Constant(2, 0.5);
  spec_.horizon = 50;
  spec_.discount = 0.99;
}

Eigen::VectorXd PointMassEnv::sample_initial(Rng& rng) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
  s[0] = uniform(rng, -2.0, 2.0);
  s[1] = uniform(rng, -2.0, 2.0);
  return s;
}

Eigen::VectorXd PointMassEnv::reset(Rng& rng) const { return sample_initial(rng); }

Eigen::VectorXd PointMassEnv::reward_batch(const Eigen::MatrixXd& states,
                                           const Eigen::MatrixXd& actions) {
  return -states.leftCols(2).rowwise().squaredNorm() -
         0.05 * actions.rowwise().squaredNorm();
}

StepResult PointMassEnv::step(const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                              int t) const {
  require_size(state, 4, "state");
  require_size(action, 2, "action");
  require_finite(state, "state");
  require_finite(action, "action");
  const Eigen::VectorXd a = spec_.clip(action);
  const Eigen::Vector2d p = state.head(2);
  const Eigen::Vector2d v = state.tail(2);
  const Eigen::Vector2d v_next = 0.9 * v + 0.1 * a;
  StepResult r;
  r.next_state.resize(4);
  r.next_state << p + 0.1 * v_next, v_next;
  r.reward = -p.squaredNorm() - 0.05 * a.squaredNorm();
  r.done = t + 1 >= spec_.horizon;
  return r;
}

TaskSpec PointMassEnv::task() const {
  return TaskSpec{"pointmass", spec_, &PointMassEnv::reward_batch,
                  &PointMassEnv::sample_initial};
}

// -- counting wrapper -- //

CountingEnvironment::CountingEnvironment(std::unique_ptr<Environment> inner)
    : inner_(std::move(inner)) {
  if (!inner_) throw ConfigError("counting environment needs an inner environment");
}

StepResult CountingEnvironment::step(const Eigen::VectorXd& state,
                                     const Eigen::VectorXd& action, int t) const {
  ++steps_;
  return inner_->step(state, action, t);
}

std::unique_ptr<Environment> make_environment(std::string_view id) {
  if (id == "point2d") return std::make_unique<Point2dEnv>();
  if (id == "pointmass") return std::make_unique<PointMassEnv>();
  throw ConfigError("unknown environment '" + std::string(id) + "'");
}

// -- scripted controllers -- //

Eigen::VectorXd scripted_action(std::string_view env_id, const Eigen::VectorXd& state) {
  if (env_id == "point2d") {
    return (-state).cwiseMax(-0.1).cwiseMin(0.1);
  }
  if (env_id == "pointmass") {
    Eigen::VectorXd a = -kPointMassKp * state.head(2) - kPointMassKd * state.tail(2);
    return a.cwiseMax(-0.5).cwiseMin(0.5);
  }
  throw ConfigError("no scripted controller for '" + std::string(env_id) + "'");
}

double scripted_episode_return(const Environment& env, const Eigen::VectorXd& start) {
  Eigen::VectorXd s = start;
  double total = 0.0;
  for (int t = 0; t < env.spec().horizon; ++t) {
    StepResult r = env.step(s, scripted_action(env.id(), s), t);
    total += r.reward;
    s = std::move(r.next_state);
    if (r.done) break;
  }
  return total;
}

double scripted_oracle_return(const Environment& env, int n_episodes, Rng& rng) {
  if (n_episodes <= 0) throw PreconditionError("n_episodes must be positive");
  double total = 0.0;
  for (int i = 0; i < n_episodes; ++i) total += scripted_episode_return(env, env.reset(rng));
  return total / static_cast<double>(n_episodes);
}

}  // namespace mbmpo
