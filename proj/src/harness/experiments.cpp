#include "mbmpo/harness/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mbmpo/errors.hpp"
#include "mbmpo/harness/stats.hpp"
#include "mbmpo/policy.hpp"

namespace mbmpo {

namespace {

constexpr std::uint64_t kFinalEvalStream = 0xfe11;
constexpr std::uint64_t kUniformStream = 0xa11f;

std::string fmt(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

std::string setting_label(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

// -- uncertainty / plasticity map -- //

std::vector<Eigen::VectorXd> default_probe_actions() {
  std::vector<Eigen::VectorXd> probes;
  for (const auto& [x, y] : std::vector<std::pair<double, double>>{
           {0.0, 0.0}, {0.1, 0.0}, {-0.1, 0.0}, {0.0, 0.1}, {0.0, -0.1}}) {
    Eigen::VectorXd a(2);
    a << x, y;
    probes.push_back(a);
  }
  return probes;
}

GridMap uncertainty_map(const Checkpoint& checkpoint, int resolution,
                        const std::vector<Eigen::VectorXd>& probe_actions) {
  if (checkpoint.env_id != "point2d") {
    throw ConfigError("uncertainty map needs a point2d checkpoint, got '" + checkpoint.env_id +
                      "'");
  }
  if (resolution < 2) throw ConfigError("map resolution must be at least 2");
  if (checkpoint.adapted.empty()) throw ConfigError("checkpoint has no adapted policies");
  const std::vector<Eigen::VectorXd> probes =
      probe_actions.empty() ? default_probe_actions() : probe_actions;
  const int n_probe = static_cast<int>(probes.size());
  Eigen::MatrixXd actions(n_probe, 2);
  for (int p = 0; p < n_probe; ++p) {
    if (probes[p].size() != 2) throw ConfigError("probe actions must be 2-dimensional");
    actions.row(p) = probes[p].transpose();
  }

  const GaussianPolicy policy(checkpoint.policy_spec);
  GridMap map;
  map.resolution = resolution;
  for (int i = 0; i < resolution; ++i) {
    map.coords.push_back(map.low + (map.high - map.low) * i / (resolution - 1));
  }
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      Eigen::MatrixXd state(1, 2);
      state << map.coords[i], map.coords[j];
      const Eigen::MatrixXd states = state.replicate(n_probe, 1);
      map.ensemble_std.push_back(ensemble_std(checkpoint.ensemble, states, actions).mean());
      double kl = 0.0;
      for (const auto& adapted : checkpoint.adapted) {
        kl += policy.mean_kl(checkpoint.theta, adapted, state);
      }
      map.kl.push_back(kl / static_cast<double>(checkpoint.adapted.size()));
    }
  }
  map.spearman = spearman(map.ensemble_std, map.kl);
  return map;
}

void write_grid_csv(const GridMap& map, std::ostream& out) {
  out << "x,y,ensemble_std,kl\n";
  for (int i = 0; i < map.resolution; ++i) {
    for (int j = 0; j < map.resolution; ++j) {
      const std::size_t c = static_cast<std::size_t>(i * map.resolution + j);
      out << fmt(map.coords[i]) << "," << fmt(map.coords[j]) << "," << fmt(map.ensemble_std[c])
          << "," << fmt(map.kl[c]) << "\n";
    }
  }
}

// -- multi-seed runs -- //

std::vector<double> CurveSet::final_returns() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.final_eval.mean);
  return out;
}

double CurveSet::mean_final_return() const { return mean(final_returns()); }

ExperimentOptions experiment_options(const HarnessConfig& config, const std::string& out_dir) {
  ExperimentOptions options;
  options.seeds = config.experiment.seeds;
  options.final_eval_episodes = config.experiment.final_eval_episodes;
  options.out_dir = out_dir;
  return options;
}

EvalStats final_evaluation(const RunConfig& config, const ParameterVector& theta, int episodes,
                           std::uint64_t seed) {
  const auto env = make_environment(config.env_id);
  const GaussianPolicy policy = make_policy(config, env->spec());
  Rng rng = derive_rng(seed, kFinalEvalStream);
  return evaluate(policy, theta, *env, episodes, rng);
}

double uniform_policy_return(const std::string& env_id, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw PreconditionError("uniform baseline needs at least one episode");
  const auto env = make_environment(env_id);
  const int horizon = env->spec().horizon;
  Rng rng = derive_rng(seed, kUniformStream);
  return rollout_uniform(*env, episodes * horizon, horizon, rng).mean_return();
}

CurveSet run_seeds(const RunConfig& base, const std::string& label,
                   const ExperimentOptions& options) {
  if (options.seeds < 1) throw ConfigError("experiments need at least one seed");
  CurveSet set;
  set.label = label;
  set.config = base;
  for (int s = 0; s < options.seeds; ++s) {
    RunConfig config = base;
    config.seed = base.seed + static_cast<std::uint64_t>(s);
    config.out_dir = options.out_dir.empty()
                         ? std::string()
                         : (std::filesystem::path(options.out_dir) / label /
                            ("seed_" + std::to_string(config.seed)))
                               .string();
    RunHooks hooks;
    if (options.on_iteration) {
      hooks.on_iteration = [&](const IterationRecord& r) {
        options.on_iteration(label, config.seed, r);
      };
    }
    SeedRun run;
    run.seed = config.seed;
    run.result = mbmpo::run(config, hooks);
    run.final_eval =
        final_evaluation(config, run.result.theta, options.final_eval_episodes, config.seed);
    set.runs.push_back(std::move(run));
  }
  return set;
}

std::vector<RobustnessEntry> robustness_sweep(const RunConfig& base,
                                              const std::vector<double>& b_max_list,
                                              const ExperimentOptions& options) {
  if (b_max_list.empty()) throw ConfigError("robustness sweep needs at least one b_max");
  std::vector<RobustnessEntry> out;
  for (double b_max : b_max_list) {
    if (b_max < 0.0) throw ConfigError("b_max must be non-negative");
    RunConfig config = base;
    config.perturbation.enabled = true;
    config.perturbation.b_max = b_max;
    RobustnessEntry entry;
    entry.b_max = b_max;
    entry.adaptive = run_seeds(config, "adaptive_bmax_" + setting_label(b_max), options);
    config.alpha = 0.0;
    entry.non_adaptive = run_seeds(config, "alpha0_bmax_" + setting_label(b_max), options);
    out.push_back(std::move(entry));
  }
  return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "alpha") return SweepAxis::kAlpha;
  if (name == "ensemble_size") return SweepAxis::kEnsembleSize;
  if (name == "meta_steps") return SweepAxis::kMetaSteps;
  throw ConfigError("unknown sweep axis '" + name + "' (alpha, ensemble_size, meta_steps)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kAlpha:
      return "alpha";
    case SweepAxis::kEnsembleSize:
      return "ensemble_size";
    case SweepAxis::kMetaSteps:
      return "meta_steps";
  }
  return "unknown";
}

std::vector<CurveSet> sweep(const RunConfig& base, SweepAxis axis,
                            const std::vector<double>& values, const ExperimentOptions& options) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<CurveSet> out;
  for (double v : values) {
    RunConfig config = base;
    switch (axis) {
      case SweepAxis::kAlpha:
        config.alpha = v;
        break;
      case SweepAxis::kEnsembleSize:
      case SweepAxis::kMetaSteps:
        if (v != std::floor(v) || v < 1) {
          throw ConfigError(sweep_axis_name(axis) + " values must be positive integers");
        }
        (axis == SweepAxis::kEnsembleSize ? config.ensemble_size : config.meta_steps_per_iter) =
            static_cast<int>(v);
        break;
    }
    out.push_back(run_seeds(config, sweep_axis_name(axis) + "_" + setting_label(v), options));
  }
  return out;
}

ExplorationAblation ablate_exploration(const RunConfig& base, const ExperimentOptions& options) {
  ExplorationAblation out;
  RunConfig config = base;
  config.tailored_collection = true;
  out.tailored = run_seeds(config, "tailored", options);
  config.tailored_collection = false;
  out.non_tailored = run_seeds(config, "non_tailored", options);
  // returns are costs here (negative); ratio of magnitudes, > 1 favours tailored
  const double t = out.tailored.mean_final_return();
  const double n = out.non_tailored.mean_final_return();
  out.final_return_ratio = t < 0.0 && n < 0.0 ? n / t : t / n;
  return out;
}

void write_summary_csv(const std::vector<std::pair<std::string, const CurveSet*>>& sets,
                       std::ostream& out) {
  out << "label,setting,seed,final_return,final_return_std,real_steps_collected\n";
  for (const auto& [setting, set] : sets) {
    for (const auto& r : set->runs) {
      out << set->label << "," << setting << "," << r.seed << "," << fmt(r.final_eval.mean) << ","
          << fmt(r.final_eval.std) << "," << r.result.real_steps_collected << "\n";
    }
  }
}

}  // namespace mbmpo
