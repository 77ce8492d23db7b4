#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mbmpo/errors.hpp"
#include "mbmpo/sampling.hpp"

using namespace mbmpo;

namespace {

GaussianPolicy linear_policy(int sd, int ad) {
  MlpSpec s;
  s.input_dim = sd;
  s.output_dim = ad;
  return GaussianPolicy(s);
}

// constant-mean policy with the given log std
ParameterVector constant_policy(const GaussianPolicy& pi, const Eigen::VectorXd& mu,
                                double log_std) {
  ParameterVector p = ParameterVector::zeros(pi.layout());
  p = p.with_block("mean/l0.b", mu.transpose());
  return p.with_block("log_std", Eigen::MatrixXd::Constant(1, pi.action_dim(), log_std));
}

ModelEnsemble zero_delta_ensemble(int k, int sd, int ad, Rng& rng) {
  ModelEnsemble e = ModelEnsemble::create(k, sd, ad, {8}, rng);
  for (auto& m : e.models) m.params = m.params.with_block("l1.g", Eigen::MatrixXd::Zero(1, sd));
  return e;
}

Trajectory hand_trajectory(const Eigen::VectorXd& rewards) {
  Trajectory t;
  const auto n = rewards.size();
  t.states = Eigen::MatrixXd::Zero(n + 1, 1);
  for (Eigen::Index i = 0; i <= n; ++i) t.states(i, 0) = 0.5 * static_cast<double>(i);
  t.actions = Eigen::MatrixXd::Zero(n, 1);
  t.rewards = rewards;
  t.log_probs = Eigen::VectorXd::Zero(n);
  return t;
}

}  // namespace

TEST_CASE("real rollouts: counts and round-robin assignment") {
  Point2dEnv env;
  const GaussianPolicy pi = linear_policy(2, 2);
  std::vector<ParameterVector> policies;
  const double c[3] = {0.05, -0.05, 0.02};
  for (double v : c) {
    policies.push_back(constant_policy(pi, Eigen::Vector2d(v, v), GaussianPolicy::kLogStdMin));
  }
  Rng rng(0);
  const TrajectoryBatch b = rollout_real(env, pi, policies, 600, 30, rng);
  REQUIRE(b.trajectories.size() == 20);
  CHECK(b.num_transitions() == 600);
  CHECK(b.source == TrajectorySource::kReal);
  // 20 trajectories over 3 policies: groups of 7, 7, 6 in policy order
  const int group_of[20] = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2};
  for (int j = 0; j < 20; ++j) {
    const Trajectory& t = b.trajectories[static_cast<std::size_t>(j)];
    t.validate();
    CHECK(t.length() == 30);
    CHECK(std::abs(t.actions(0, 0) - c[group_of[j]]) < 1e-6);
    // deterministic step s' = s + a and reward -|s|^2
    CHECK((t.states.row(1) - t.states.row(0) - t.actions.row(0)).norm() < 1e-12);
    CHECK(t.rewards[0] == doctest::Approx(-t.states.row(0).squaredNorm()));
  }
  CHECK_THROWS_AS(rollout_real(env, pi, policies, 601, 30, rng), PreconditionError);
  CHECK_THROWS_AS(rollout_real(env, pi, policies, 62, 31, rng), PreconditionError);
  CHECK_THROWS_AS(rollout_real(env, pi, {}, 60, 30, rng), PreconditionError);
}

TEST_CASE("uniform rollouts stay inside the action box") {
  PointMassEnv env;
  Rng rng(1);
  const TrajectoryBatch b = rollout_uniform(env, 500, 50, rng);
  CHECK(b.trajectories.size() == 10);
  for (const auto& t : b.trajectories) {
    CHECK(t.actions.cwiseAbs().maxCoeff() <= 0.5);
    CHECK(t.log_probs[0] == doctest::Approx(0.0));  // density 1 on [-0.5, 0.5]^2
  }
}

TEST_CASE("model rollouts under a zero-delta model hold the start state") {
  Rng rng(2);
  const ModelEnsemble e = zero_delta_ensemble(2, 2, 2, rng);
  const GaussianPolicy pi = linear_policy(2, 2);
  const ParameterVector p = constant_policy(pi, Eigen::Vector2d(0.1, -0.1), -1.0);
  const TaskSpec task = Point2dEnv().task();
  const TrajectoryBatch b = rollout_model(e, 1, pi, p, task, 300, 30, rng);
  CHECK(b.source == TrajectorySource::kModel);
  CHECK(b.model_index == 1);
  CHECK_FALSE(b.any_truncated());
  for (const auto& t : b.trajectories) {
    CHECK(t.model_index == 1);
    const double expected = -30.0 * t.states.row(0).squaredNorm();
    CHECK(t.rewards.sum() == doctest::Approx(expected).epsilon(1e-12));
    CHECK((t.states.rowwise() - t.states.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("diverging model rollouts are truncated and flagged") {
  Rng rng(3);
  ModelEnsemble e = zero_delta_ensemble(1, 2, 2, rng);
  e.models[0].out_norm.mean = Eigen::Vector2d(400.0, 0.0);
  const GaussianPolicy pi = linear_policy(2, 2);
  const ParameterVector p = constant_policy(pi, Eigen::Vector2d(0.0, 0.0), 0.0);
  const TrajectoryBatch b = rollout_model(e, 0, pi, p, Point2dEnv().task(), 150, 30, rng);
  CHECK(b.any_truncated());
  for (const auto& t : b.trajectories) {
    t.validate();
    CHECK(t.truncated);
    CHECK(t.length() == 3);  // 400, 800, then 1200 > 1000
    CHECK(t.states.rows() == 4);
  }
}

TEST_CASE("buffer accepts only real batches and stores clipped actions") {
  Point2dEnv env;
  const GaussianPolicy pi = linear_policy(2, 2);
  const ParameterVector p = constant_policy(pi, Eigen::Vector2d(1.0, -1.0), -3.0);
  Rng rng(4);
  const TrajectoryBatch real = rollout_real(env, pi, {p}, 60, 30, rng);
  TransitionBuffer buf(2, 2);
  append_to_buffer(real, env.spec(), buf);
  CHECK(buf.size() == 60);
  CHECK(buf.actions().cwiseAbs().maxCoeff() <= 0.1);
  CHECK((buf.next_states() - buf.states() - buf.actions()).cwiseAbs().maxCoeff() < 1e-12);

  const ModelEnsemble e = zero_delta_ensemble(1, 2, 2, rng);
  const TrajectoryBatch imag = rollout_model(e, 0, pi, p, env.task(), 60, 30, rng);
  CHECK_THROWS_AS(append_to_buffer(imag, env.spec(), buf), PreconditionError);
  CHECK(buf.size() == 60);
}

TEST_CASE("discounted returns and GAE worked example") {
  const Eigen::VectorXd r = Eigen::Vector3d(1.0, 1.0, 1.0);
  CHECK(discounted_returns(r, 0.99)[0] == doctest::Approx(2.9701).epsilon(1e-14));
  TrajectoryBatch b;
  b.trajectories.push_back(hand_trajectory(r));
  LinearBaseline zero;
  zero.weights = Eigen::VectorXd::Zero(6);
  zero.horizon = 3;
  const auto adv = gae(b, zero, 0.99, 1.0);
  CHECK(adv[0][0] == doctest::Approx(2.9701).epsilon(1e-14));
  CHECK(adv[0][2] == doctest::Approx(1.0));
  CHECK_THROWS_AS(gae(b, zero, 0.99, 1.5), ConfigError);
}

TEST_CASE("GAE with lambda one equals returns minus baseline") {
  Rng rng(5);
  Eigen::VectorXd r(7);
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = standard_normal(rng);
  TrajectoryBatch b;
  b.trajectories.push_back(hand_trajectory(r));
  LinearBaseline base;
  base.horizon = 10;
  base.weights = Eigen::VectorXd(6);
  for (Eigen::Index i = 0; i < 6; ++i) base.weights[i] = standard_normal(rng);
  const Eigen::VectorXd expected =
      discounted_returns(r, 0.95) - base.predict(b.trajectories.front());
  const auto adv = gae(b, base, 0.95, 1.0);
  CHECK((adv[0] - expected).cwiseAbs().maxCoeff() < 1e-12);
  // lambda = 0 gives one-step TD residuals
  const auto td = gae(b, base, 0.95, 0.0);
  const Eigen::VectorXd v = base.predict(b.trajectories.front());
  CHECK(td[0][2] == doctest::Approx(r[2] + 0.95 * v[3] - v[2]));
}

TEST_CASE("baseline solves the damped normal equations") {
  Point2dEnv env;
  Rng rng(6);
  const TrajectoryBatch b = rollout_uniform(env, 300, 30, rng);
  const double damping = 1e-5;
  const LinearBaseline base = fit_baseline(b, 0.99, 30, damping);
  Eigen::MatrixXd x(300, 8);
  Eigen::VectorXd y(300);
  Eigen::Index row = 0;
  for (const auto& t : b.trajectories) {
    x.middleRows(row, 30) = LinearBaseline::features(t, 30);
    y.segment(row, 30) = discounted_returns(t.rewards, 0.99);
    row += 30;
  }
  const Eigen::VectorXd residual =
      x.transpose() * (x * base.weights - y) + damping * base.weights;
  CHECK(residual.norm() < 1e-8 * (x.transpose() * y).norm());
  // features: [s, s^2, u, u^2, u^3, 1] with u = t / H
  const Eigen::MatrixXd f = LinearBaseline::features(b.trajectories.front(), 30);
  CHECK(f(3, 2) == doctest::Approx(f(3, 0) * f(3, 0)));
  CHECK(f(3, 4) == doctest::Approx(0.1));
  CHECK(f(3, 7) == 1.0);
}

TEST_CASE("policy batch flattens and standardizes") {
  Point2dEnv env;
  Rng rng(7);
  const TrajectoryBatch b = rollout_uniform(env, 300, 30, rng);
  const PolicyBatch pb = make_policy_batch(b, AdvantageConfig{}, 30);
  CHECK(pb.size() == 300);
  CHECK(pb.advantages.mean() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(std::sqrt(pb.advantages.squaredNorm() / 300.0) == doctest::Approx(1.0));
  CHECK(pb.states.row(31) == b.trajectories[1].states.row(1));
  CHECK_THROWS_AS(make_policy_batch(TrajectoryBatch{}, AdvantageConfig{}, 30), PreconditionError);
}

TEST_CASE("trajectory csv has one row per transition") {
  Point2dEnv env;
  Rng rng(8);
  const TrajectoryBatch b = rollout_uniform(env, 60, 30, rng);
  std::ostringstream out;
  write_trajectory_csv(b, out);
  const std::string text = out.str();
  CHECK(text.rfind("traj_id,t,s0,s1,a0,a1,r,logp\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 61);
}
