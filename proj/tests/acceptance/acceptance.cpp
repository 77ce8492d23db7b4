#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/dynamics.hpp"
#include "mbmpo/envs.hpp"
#include "mbmpo/harness/checkpoint.hpp"
#include "mbmpo/harness/experiments.hpp"
#include "mbmpo/harness/stats.hpp"
#include "mbmpo/metaopt.hpp"
#include "mbmpo/orchestrator.hpp"
#include "mbmpo/sampling.hpp"

using namespace mbmpo;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// -- pinned tolerances and budgets -- //

constexpr int kGradModels = 50;
constexpr int kGradMaxParams = 500;
constexpr double kGradTol = 1e-5;
constexpr double kGradFdStep = 1e-6;

constexpr int kMetaConfigs = 10;
constexpr int kMetaMaxParams = 50;
constexpr double kMetaAlpha = 1e-3;
constexpr double kMetaTol = 1e-3;
constexpr double kMetaFdStep = 1e-5;

constexpr double kRuntimeLimitSeconds = 60.0;

constexpr int kOracleEpisodes = 10000;
constexpr std::uint64_t kOracleSeed = 2024;
constexpr double kOracleFraction = 0.9;
constexpr int kLearningSeeds = 3;
constexpr int kLearningIterations = 50;
constexpr long kMaxRealTransitions = 30000;
constexpr double kSeedRuntimeLimitSeconds = 15.0 * 60.0;
constexpr int kFinalEvalEpisodes = 500;

constexpr int kMapResolution = 20;
constexpr double kSpearmanThreshold = 0.3;
constexpr int kSpearmanSeedsRequired = 2;

constexpr int kRobustnessIterations = 20;
constexpr double kRobustnessNoiseStd = 0.1;
constexpr int kUniformEpisodes = 10000;

constexpr double kKlSlack = 1.5;

constexpr int kGaeBatches = 100;
constexpr double kGaeTol = 1e-10;

constexpr int kEnsembleSize = 5;
constexpr int kEnsembleTransitions = 6000;
constexpr int kEnsembleRounds = 5;
constexpr double kEnsembleMseTol = 1e-3;
constexpr int kEarlyStopRequired = 4;

constexpr int kLedgerIterations = 3;
constexpr int kDeterminismIterations = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

Eigen::VectorXd fd_gradient(const std::function<double(const ParameterVector&)>& f,
                            const ParameterVector& p, double h) {
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Eigen::VectorXd plus = p.values();
    Eigen::VectorXd minus = p.values();
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(p.with_values(plus)) - f(p.with_values(minus))) / (2.0 * h);
  }
  return g;
}

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = standard_normal(rng);
  return m;
}

// -- 1: gradient fidelity -- //

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  int built = 0;
  while (built < kGradModels) {
    MlpSpec spec;
    spec.input_dim = 1 + static_cast<int>(rng() % 5);
    const int layers = static_cast<int>(rng() % 3);
    for (int l = 0; l < layers; ++l) spec.hidden_sizes.push_back(2 + static_cast<int>(rng() % 12));
    spec.output_dim = 1 + static_cast<int>(rng() % 4);
    spec.activation = rng() % 2 == 0 ? Activation::kTanh : Activation::kRelu;
    spec.weight_normalized = rng() % 2 == 0;
    if (spec.num_params() > kGradMaxParams) continue;
    ++built;
    // Gaussian parameters including biases; zero biases can place relu units
    // exactly on their kink, where central differences are not a gradient
    const LayoutPtr layout = make_mlp_layout(spec);
    const ParameterVector theta(layout, 0.5 * normal_matrix(layout->size(), 1, rng).col(0));
    const Eigen::MatrixXd x = normal_matrix(6, spec.input_dim, rng);
    const Eigen::MatrixXd c = normal_matrix(6, spec.output_dim, rng);
    const int kind = static_cast<int>(rng() % 3);
    const ad::Objective f = [&](ad::Tape& tape, const ad::ParamVar& p) {
      const ad::Var out = mlp_forward(spec, p, tape.constant(x));
      const ad::Var w = tape.constant(c);
      switch (kind) {
        case 0:
          return ad::sum(ad::mul(w, out));
        case 1:
          return ad::mean(ad::square(ad::sub(out, w)));
        default:
          return ad::sum(ad::mul(w, ad::tanh(out))) + ad::log(ad::add_scalar(ad::mean(ad::exp(ad::scale(out, 0.3))), 1.0));
      }
    };
    const ad::ValueAndGrad vg = ad::value_and_grad(f, theta);
    const Eigen::VectorXd fd = fd_gradient(
        [&](const ParameterVector& p) { return ad::value_and_grad(f, p).value; }, theta,
        kGradFdStep);
    worst = std::max(worst, rel_error(vg.gradient.values(), fd));
  }
  const double t = seconds_since(start);
  return {worst <= kGradTol && t <= kRuntimeLimitSeconds,
          "models=" + std::to_string(kGradModels) + " max_rel_err=" + num(worst) +
              " tol=" + num(kGradTol) + " runtime_s=" + num(t)};
}

// -- 2: meta-gradient fidelity -- //

PolicyBatch random_batch(const GaussianPolicy& pi, const ParameterVector& params, int n,
                         Rng& rng) {
  PolicyBatch b;
  b.states = normal_matrix(n, pi.state_dim(), rng);
  const ActionBatch a = pi.sample_actions(params, b.states, rng);
  b.actions = a.actions;
  b.log_probs = a.log_probs;
  b.advantages = standardize(normal_matrix(n, 1, rng).col(0));
  return b;
}

Outcome meta_gradient_fidelity() {
  const auto start = Clock::now();
  Rng rng(202);
  double worst = 0.0;
  bool bit_exact = true;
  for (int c = 0; c < kMetaConfigs; ++c) {
    MlpSpec spec;
    spec.input_dim = 2;
    spec.output_dim = 1 + c % 2;
    if (c % 3 != 0) spec.hidden_sizes = {4 + c % 3};
    const GaussianPolicy pi(spec);
    if (pi.layout()->size() > kMetaMaxParams) {
      return {false, "config " + std::to_string(c) + " exceeds the parameter budget"};
    }
    const ParameterVector theta = pi.initial_params(rng, -0.5);
    const int k = 1 + c % 3;
    std::vector<ModelTask> tasks;
    for (int i = 0; i < k; ++i) {
      ModelTask t;
      t.inner = random_batch(pi, theta, 40, rng);
      const ParameterVector adapted = inner_adapt(pi, theta, t.inner, kMetaAlpha);
      t.outer = random_batch(pi, adapted, 40, rng);
      tasks.push_back(std::move(t));
    }
    const ParameterVector g = meta_gradient(pi, theta, tasks, kMetaAlpha);
    const Eigen::VectorXd fd = fd_gradient(
        [&](const ParameterVector& p) { return meta_surrogate(pi, p, tasks, kMetaAlpha); }, theta,
        kMetaFdStep);
    worst = std::max(worst, rel_error(g.values(), fd));

    ParameterVector plain = ParameterVector::zeros(theta.layout());
    for (const auto& t : tasks) {
      plain = plain + ad::grad([&](ad::Tape&, const ad::ParamVar& v) {
        return outer_surrogate(pi, v, t.outer);
      }, theta);
    }
    plain = (1.0 / static_cast<double>(k)) * plain;
    bit_exact = bit_exact && meta_gradient(pi, theta, tasks, 0.0).values() == plain.values();
  }
  const double t = seconds_since(start);
  return {worst <= kMetaTol && bit_exact && t <= kRuntimeLimitSeconds,
          "configs=" + std::to_string(kMetaConfigs) + " max_rel_err=" + num(worst) +
              " tol=" + num(kMetaTol) + " alpha0_bit_exact=" + (bit_exact ? "yes" : "no") +
              " runtime_s=" + num(t)};
}

// -- 3, 4, 6: learning runs on point2d -- //

struct LearningRun {
  RunConfig config;
  RunResult result;
  EvalStats final_eval;
  double seconds = 0.0;
};

std::vector<LearningRun>& learning_runs(const fs::path& out_dir) {
  static std::vector<LearningRun> runs;
  if (!runs.empty()) return runs;
  for (int s = 0; s < kLearningSeeds; ++s) {
    LearningRun lr;
    lr.config.env_id = "point2d";
    lr.config.n_iterations = kLearningIterations;
    lr.config.seed = static_cast<std::uint64_t>(s);
    lr.config.out_dir = (out_dir / "learning" / ("seed_" + std::to_string(s))).string();
    const auto start = Clock::now();
    RunHooks hooks;
    hooks.on_iteration = [&](const IterationRecord& r) {
      std::cerr << "  learning seed " << s << " iter " << r.iteration << " return "
                << r.avg_return << "\n";
    };
    lr.result = run(lr.config, hooks);
    lr.seconds = seconds_since(start);
    lr.final_eval = final_evaluation(lr.config, lr.result.theta, kFinalEvalEpisodes, lr.config.seed);
    runs.push_back(std::move(lr));
  }
  return runs;
}

Outcome learning(const fs::path& out_dir) {
  Point2dEnv env;
  Rng oracle_rng(kOracleSeed);
  const double oracle = scripted_oracle_return(env, kOracleEpisodes, oracle_rng);
  // returns are costs (negative): reaching a fraction f of the oracle means
  // a cost at most oracle_cost / f
  const double threshold = oracle / kOracleFraction;
  const auto& runs = learning_runs(out_dir);
  std::vector<double> finals;
  double slowest = 0.0;
  long most_samples = 0;
  for (const auto& r : runs) {
    finals.push_back(r.final_eval.mean);
    slowest = std::max(slowest, r.seconds);
    most_samples = std::max(most_samples, r.result.real_steps_collected);
  }
  const double m = mean(finals);
  std::string per_seed;
  for (double f : finals) per_seed += num(f) + " ";
  return {m >= threshold && slowest <= kSeedRuntimeLimitSeconds &&
              most_samples <= kMaxRealTransitions,
          "mean_final_return=" + num(m) + " threshold=" + num(threshold) + " oracle=" +
              num(oracle) + " per_seed=[ " + per_seed + "] real_transitions=" +
              std::to_string(most_samples) + " max_seed_runtime_s=" + num(slowest)};
}

Checkpoint checkpoint_of(const LearningRun& r) {
  Checkpoint ck;
  ck.env_id = r.config.env_id;
  ck.iteration = r.config.n_iterations;
  ck.seed = r.config.seed;
  ck.alpha = r.config.alpha;
  ck.policy_spec = make_policy(r.config, Point2dEnv().spec()).mean_spec();
  ck.theta = r.result.theta;
  ck.adapted = r.result.adapted;
  ck.ensemble = r.result.ensemble;
  return ck;
}

Outcome plasticity_map(const fs::path& out_dir) {
  const auto& runs = learning_runs(out_dir);
  int passing = 0;
  std::string rhos;
  for (const auto& r : runs) {
    const GridMap map = uncertainty_map(checkpoint_of(r), kMapResolution);
    std::ofstream csv(out_dir / ("grid_seed_" + std::to_string(r.config.seed) + ".csv"));
    write_grid_csv(map, csv);
    if (map.spearman && *map.spearman > kSpearmanThreshold) ++passing;
    rhos += (map.spearman ? num(*map.spearman) : std::string("undefined")) + " ";
  }
  return {passing >= kSpearmanSeedsRequired,
          "spearman=[ " + rhos + "] threshold=" + num(kSpearmanThreshold) + " seeds_passing=" +
              std::to_string(passing) + "/" + std::to_string(runs.size())};
}

Outcome trpo_contract(const fs::path& out_dir) {
  const auto& runs = learning_runs(out_dir);
  const double bound = kKlSlack * RunConfig{}.trpo.kl_bound;
  int accepted = 0, rejected = 0, violations = 0;
  double max_kl = 0.0;
  for (const auto& r : runs) {
    for (const auto& rec : r.result.records) {
      for (const auto& s : rec.trpo_steps) {
        if (s.accepted) {
          ++accepted;
          max_kl = std::max(max_kl, s.kl);
          if (s.kl > bound || s.surrogate_after < s.surrogate_before) ++violations;
        } else {
          ++rejected;
          if (s.theta_changed) ++violations;
        }
      }
    }
  }
  return {violations == 0 && accepted > 0,
          "accepted=" + std::to_string(accepted) + " rejected=" + std::to_string(rejected) +
              " max_kl=" + num(max_kl) + " bound=" + num(bound) +
              " violations=" + std::to_string(violations)};
}

// -- 5: robustness to biased models -- //

Outcome robustness(const fs::path& out_dir) {
  RunConfig base;
  base.env_id = "point2d";
  base.n_iterations = kRobustnessIterations;
  base.perturbation.enabled = true;
  base.perturbation.noise_std = kRobustnessNoiseStd;
  ExperimentOptions opts;
  opts.seeds = kLearningSeeds;
  opts.final_eval_episodes = kFinalEvalEpisodes;
  opts.out_dir = (out_dir / "robustness").string();
  opts.on_iteration = [](const std::string& label, std::uint64_t seed, const IterationRecord& r) {
    std::cerr << "  " << label << " seed " << seed << " iter " << r.iteration << " return "
              << r.avg_return << "\n";
  };

  RunConfig half = base;
  half.perturbation.b_max = 0.5;
  const CurveSet adaptive_half = run_seeds(half, "adaptive_bmax_0.5", opts);
  half.alpha = 0.0;
  const CurveSet frozen_half = run_seeds(half, "alpha0_bmax_0.5", opts);
  RunConfig full = base;
  full.perturbation.b_max = 1.0;
  const CurveSet adaptive_full = run_seeds(full, "adaptive_bmax_1", opts);
  const double uniform = uniform_policy_return("point2d", kUniformEpisodes, 0);

  const double a = adaptive_half.mean_final_return();
  const double z = frozen_half.mean_final_return();
  const double f = adaptive_full.mean_final_return();
  return {a > z && f > uniform,
          "bmax0.5_adaptive=" + num(a) + " bmax0.5_alpha0=" + num(z) + " bmax1_adaptive=" +
              num(f) + " uniform=" + num(uniform) +
              " iterations=" + std::to_string(kRobustnessIterations)};
}

// -- 7: GAE identity -- //

Outcome gae_identity() {
  Rng rng(707);
  double worst = 0.0;
  for (int b = 0; b < kGaeBatches; ++b) {
    TrajectoryBatch batch;
    const int n_traj = 1 + static_cast<int>(rng() % 6);
    const int horizon = 5 + static_cast<int>(rng() % 40);
    const int dim = 1 + static_cast<int>(rng() % 4);
    for (int j = 0; j < n_traj; ++j) {
      Trajectory t;
      const int len = 1 + static_cast<int>(rng() % static_cast<unsigned>(horizon));
      t.states = normal_matrix(len + 1, dim, rng);
      t.actions = normal_matrix(len, 1, rng);
      t.rewards = 3.0 * normal_matrix(len, 1, rng).col(0);
      t.log_probs = Eigen::VectorXd::Zero(len);
      batch.trajectories.push_back(std::move(t));
    }
    const double discount = uniform(rng, 0.9, 1.0);
    const LinearBaseline base = fit_baseline(batch, discount, horizon);
    const auto adv = gae(batch, base, discount, 1.0);
    for (std::size_t j = 0; j < batch.trajectories.size(); ++j) {
      const auto& t = batch.trajectories[j];
      const Eigen::VectorXd expected = discounted_returns(t.rewards, discount) - base.predict(t);
      worst = std::max(worst, (adv[j] - expected).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= kGaeTol, "batches=" + std::to_string(kGaeBatches) +
                                " max_abs_err=" + num(worst) + " tol=" + num(kGaeTol)};
}

// -- 8: ensemble training -- //

Outcome ensemble_training() {
  Rng rng(808);
  Point2dEnv env;  // s' = s + a
  auto sample = [&](int n, TransitionBuffer* buf, Eigen::MatrixXd* s, Eigen::MatrixXd* a,
                    Eigen::MatrixXd* s2) {
    s->resize(n, 2);
    a->resize(n, 2);
    s2->resize(n, 2);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd st = env.reset(rng);
      Eigen::VectorXd ac(2);
      ac << uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1);
      const StepResult r = env.step(st, ac, 0);
      s->row(i) = st.transpose();
      a->row(i) = ac.transpose();
      s2->row(i) = r.next_state.transpose();
      if (buf != nullptr) buf->append(st, ac, r.next_state);
    }
  };
  // the buffer grows over rounds as in a run: round 1 trains fresh models,
  // later rounds retrain from the previous round's warm start; the criterion
  // is assessed on the final round
  TransitionBuffer buf(2, 2);
  Eigen::MatrixXd s, a, s2;
  const RunConfig defaults;
  ModelEnsemble ensemble =
      ModelEnsemble::create(kEnsembleSize, 2, 2, defaults.model_hidden, rng);
  std::vector<EnsembleTrainResult> rounds;
  for (int r = 0; r < kEnsembleRounds; ++r) {
    sample(kEnsembleTransitions / kEnsembleRounds, &buf, &s, &a, &s2);
    rounds.push_back(train_ensemble(ensemble, buf, defaults.model_train, rng));
    ensemble = rounds.back().ensemble;
  }
  const EnsembleTrainResult& trained = rounds.back();
  Eigen::MatrixXd ts, ta, ts2;
  sample(2000, nullptr, &ts, &ta, &ts2);

  double worst = 0.0;
  int early = 0;
  for (int k = 0; k < kEnsembleSize; ++k) {
    worst = std::max(worst, one_step_mse(trained.ensemble.models[k], ts, ta, ts2));
    if (trained.stats[k].stopped_early && !trained.stats[k].hit_max_epochs) ++early;
  }
  bool distinct = true;
  for (int i = 0; i < kEnsembleSize; ++i) {
    for (int j = i + 1; j < kEnsembleSize; ++j) {
      distinct = distinct && trained.ensemble.models[i].params.values() !=
                                 trained.ensemble.models[j].params.values();
    }
  }
  std::string epochs;
  for (const auto& r : rounds) {
    epochs += "[";
    for (const auto& st : r.stats) epochs += " " + std::to_string(st.epochs);
    epochs += " ]";
  }
  return {worst <= kEnsembleMseTol && early >= kEarlyStopRequired && distinct,
          "max_heldout_mse=" + num(worst) + " tol=" + num(kEnsembleMseTol) +
              " final_round_early_stopped=" + std::to_string(early) + "/" +
              std::to_string(kEnsembleSize) + " epochs_per_round=" + epochs + " max_epochs=" +
              std::to_string(defaults.model_train.max_epochs) +
              " pairwise_distinct=" + (distinct ? "yes" : "no")};
}

// -- 9: sample ledger -- //

RunConfig short_config(std::uint64_t seed) {
  RunConfig c;
  c.env_id = "point2d";
  c.n_iterations = kLedgerIterations;
  c.meta_steps_per_iter = 5;
  c.seed = seed;
  return c;
}

Outcome sample_ledger() {
  const RunConfig c = short_config(909);
  const RunResult r = run(c);
  const int horizon = Point2dEnv().spec().horizon;
  const long budget = static_cast<long>(c.n_iterations) * c.real_transitions_per_iter;
  const long eval = static_cast<long>(c.n_iterations) * c.eval_episodes * horizon;
  bool per_iter = true;
  for (const auto& rec : r.records) {
    const long n = rec.iteration + 1;
    per_iter = per_iter && rec.buffer_size == n * c.real_transitions_per_iter &&
               rec.real_steps_total == n * (c.real_transitions_per_iter +
                                            static_cast<long>(c.eval_episodes) * horizon);
  }
  const bool ok = r.real_steps_collected == budget && r.real_steps_eval == eval &&
                  r.records.back().real_steps_total == budget + eval && per_iter;
  return {ok, "iterations=" + std::to_string(c.n_iterations) + " collected=" +
                  std::to_string(r.real_steps_collected) + " expected=" + std::to_string(budget) +
                  " eval=" + std::to_string(r.real_steps_eval) + " expected_eval=" +
                  std::to_string(eval)};
}

// -- 10: determinism -- //

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const fs::path& out_dir) {
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    RunConfig c = short_config(1010);
    c.n_iterations = kDeterminismIterations;
    const fs::path dir = out_dir / "determinism" / ("run_" + std::to_string(i));
    fs::remove_all(dir);
    c.out_dir = dir.string();
    run(c);
    files[i] = read_file(dir / "progress.csv");
  }
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, "bytes=" + std::to_string(files[0].size()) + " identical=" + (same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string out_dir = "acceptance_runs";
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--out-dir", out_dir, "directory for run artifacts");
  CLI11_PARSE(app, argc, argv);

  const fs::path out(out_dir);
  fs::create_directories(out);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"meta-gradient fidelity", meta_gradient_fidelity},
      {"learning on point2d", [&] { return learning(out); }},
      {"uncertainty vs plasticity", [&] { return plasticity_map(out); }},
      {"robustness to model bias", [&] { return robustness(out); }},
      {"trust-region contract", [&] { return trpo_contract(out); }},
      {"GAE identity", gae_identity},
      {"ensemble training", ensemble_training},
      {"sample ledger", sample_ledger},
      {"determinism", [&] { return determinism(out); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome o;
    const auto start = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
