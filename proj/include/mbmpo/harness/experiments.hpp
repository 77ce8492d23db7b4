#ifndef MBMPO_HARNESS_EXPERIMENTS_HPP_
#define MBMPO_HARNESS_EXPERIMENTS_HPP_

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbmpo/harness/checkpoint.hpp"
#include "mbmpo/harness/config.hpp"
#include "mbmpo/orchestrator.hpp"

namespace mbmpo {

// -- uncertainty / plasticity map -- //

struct GridMap {
  int resolution = 0;
  double low = -2.0;
  double high = 2.0;
  // cell (i, j) is state (coords[i], coords[j]); series are indexed i * resolution + j
  std::vector<double> coords;
  std::vector<double> ensemble_std;
  std::vector<double> kl;
  std::optional<double> spearman;
};

// (0,0), (+-0.1,0), (0,+-0.1)
std::vector<Eigen::VectorXd> default_probe_actions();

// Per-cell ensemble std (mean over coordinates and probe actions) and mean
// over k of KL(pi_theta || pi_theta'_k). Requires a point2d checkpoint.
GridMap uncertainty_map(const Checkpoint& checkpoint, int resolution,
                        const std::vector<Eigen::VectorXd>& probe_actions = {});

// columns x,y,ensemble_std,kl
void write_grid_csv(const GridMap& map, std::ostream& out);

// -- multi-seed runs -- //

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
  EvalStats final_eval;  // theta* on a separate environment instance
};

struct CurveSet {
  std::string label;
  RunConfig config;
  std::vector<SeedRun> runs;

  std::vector<double> final_returns() const;
  double mean_final_return() const;
};

struct ExperimentOptions {
  int seeds = 3;
  int final_eval_episodes = 500;
  // root for per-run directories; empty writes nothing
  std::string out_dir;
  std::function<void(const std::string& label, std::uint64_t seed, const IterationRecord&)>
      on_iteration;
};

ExperimentOptions experiment_options(const HarnessConfig& config, const std::string& out_dir);

// Seeds base.seed, base.seed + 1, ...; each run writes its curve to
// out_dir/label/seed_<s>/progress.csv.
CurveSet run_seeds(const RunConfig& base, const std::string& label,
                   const ExperimentOptions& options);

// Monte-Carlo return of theta on a fresh environment, seeded from `seed`.
EvalStats final_evaluation(const RunConfig& config, const ParameterVector& theta, int episodes,
                           std::uint64_t seed);

// Average return of the uniform random controller.
double uniform_policy_return(const std::string& env_id, int episodes, std::uint64_t seed);

struct RobustnessEntry {
  double b_max = 0.0;
  CurveSet adaptive;
  CurveSet non_adaptive;  // alpha = 0
};

std::vector<RobustnessEntry> robustness_sweep(const RunConfig& base,
                                              const std::vector<double>& b_max_list,
                                              const ExperimentOptions& options);

enum class SweepAxis { kAlpha, kEnsembleSize, kMetaSteps };
SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

std::vector<CurveSet> sweep(const RunConfig& base, SweepAxis axis,
                            const std::vector<double>& values, const ExperimentOptions& options);

struct ExplorationAblation {
  CurveSet tailored;
  CurveSet non_tailored;
  // mean final return of tailored over non-tailored
  double final_return_ratio = 0.0;
};

ExplorationAblation ablate_exploration(const RunConfig& base, const ExperimentOptions& options);

// label,setting,seed,final_return,final_return_std,real_steps_collected
void write_summary_csv(const std::vector<std::pair<std::string, const CurveSet*>>& sets,
                       std::ostream& out);

}  // namespace mbmpo

#endif  // MBMPO_HARNESS_EXPERIMENTS_HPP_
