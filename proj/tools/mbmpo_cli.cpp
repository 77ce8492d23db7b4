#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mbmpo/errors.hpp"
#include "mbmpo/harness/checkpoint.hpp"
#include "mbmpo/harness/config.hpp"
#include "mbmpo/harness/experiments.hpp"
#include "mbmpo/harness/stats.hpp"
#include "mbmpo/orchestrator.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = "runs";
  bool quiet = false;
  std::string config_path;
  std::vector<std::string> overrides;
};

mbmpo::HarnessConfig load_config(const GlobalOptions& g) {
  mbmpo::HarnessConfig config;
  if (!g.config_path.empty()) mbmpo::apply_ini_file(config, g.config_path);
  for (const auto& o : g.overrides) mbmpo::apply_override(config, o);
  if (g.seed_given) config.run.seed = g.seed;
  config.run.validate();
  return config;
}

void print_record(const GlobalOptions& g, const std::string& label, std::uint64_t seed,
                  const mbmpo::IterationRecord& r) {
  if (g.quiet) return;
  std::cerr << (label.empty() ? "" : label + " ") << "seed " << seed << " iter " << r.iteration
            << " samples " << r.buffer_size << " return " << r.avg_return << " val_loss "
            << r.mean_model_val_loss() << " inner_kl " << r.mean_inner_kl() << " accepted "
            << r.trpo_accepted << "/" << r.meta_steps << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw mbmpo::ConfigError("cannot write " + path.string());
  out << text;
}

json curve_json(const mbmpo::CurveSet& set) {
  return json{{"label", set.label},
              {"final_returns", set.final_returns()},
              {"mean_final_return", set.mean_final_return()}};
}

void write_summary(const fs::path& dir,
                   const std::vector<std::pair<std::string, const mbmpo::CurveSet*>>& sets) {
  fs::create_directories(dir);
  std::ofstream out(dir / "summary.csv");
  if (!out) throw mbmpo::ConfigError("cannot write summary.csv in " + dir.string());
  mbmpo::write_summary_csv(sets, out);
}

mbmpo::ExperimentOptions options_for(const GlobalOptions& g, const mbmpo::HarnessConfig& c) {
  mbmpo::ExperimentOptions options = mbmpo::experiment_options(c, g.out_dir);
  options.on_iteration = [&g](const std::string& label, std::uint64_t seed,
                              const mbmpo::IterationRecord& r) { print_record(g, label, seed, r); };
  return options;
}

int cmd_train(const GlobalOptions& g) {
  mbmpo::HarnessConfig c = load_config(g);
  c.run.out_dir = g.out_dir;
  write_text(fs::path(g.out_dir) / "config.ini", mbmpo::to_ini(c));
  mbmpo::RunHooks hooks;
  hooks.on_iteration = [&](const mbmpo::IterationRecord& r) { print_record(g, "", c.run.seed, r); };
  const mbmpo::RunResult result = mbmpo::run(c.run, hooks);
  const mbmpo::EvalStats eval = mbmpo::final_evaluation(
      c.run, result.theta, c.experiment.final_eval_episodes, c.run.seed);
  std::cout << json{{"command", "train"},
                    {"iterations", result.records.size()},
                    {"real_steps_collected", result.real_steps_collected},
                    {"real_steps_eval", result.real_steps_eval},
                    {"final_return", eval.mean},
                    {"final_return_std", eval.std},
                    {"out_dir", g.out_dir}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& checkpoint_path, int episodes) {
  const mbmpo::Checkpoint cp = mbmpo::load_checkpoint(checkpoint_path);
  const auto env = mbmpo::make_environment(cp.env_id);
  const mbmpo::GaussianPolicy policy(cp.policy_spec);
  mbmpo::Rng rng = mbmpo::derive_rng(g.seed, 0xe7a1);
  const mbmpo::EvalStats eval = mbmpo::evaluate(policy, cp.theta, *env, episodes, rng);
  std::cout << json{{"command", "eval"},
                    {"checkpoint", checkpoint_path},
                    {"episodes", episodes},
                    {"mean_return", eval.mean},
                    {"std_return", eval.std}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_uncertainty_map(const GlobalOptions& g, const std::string& checkpoint_path,
                        int resolution) {
  mbmpo::HarnessConfig c = load_config(g);
  if (resolution <= 0) resolution = c.experiment.map_resolution;
  const mbmpo::Checkpoint cp = mbmpo::load_checkpoint(checkpoint_path);
  const mbmpo::GridMap map = mbmpo::uncertainty_map(cp, resolution, c.experiment.probe_actions);
  const fs::path path = fs::path(g.out_dir) / "uncertainty_map.csv";
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw mbmpo::ConfigError("cannot write " + path.string());
  mbmpo::write_grid_csv(map, out);
  json j{{"command", "uncertainty-map"}, {"cells", map.kl.size()}, {"csv", path.string()}};
  j["spearman"] = map.spearman ? json(*map.spearman) : json("undefined");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_robustness(const GlobalOptions& g, const std::vector<double>& b_max_cli) {
  mbmpo::HarnessConfig c = load_config(g);
  const std::vector<double> b_max = b_max_cli.empty() ? c.experiment.b_max_list : b_max_cli;
  const auto entries = mbmpo::robustness_sweep(c.run, b_max, options_for(g, c));
  std::vector<std::pair<std::string, const mbmpo::CurveSet*>> sets;
  json settings = json::array();
  for (const auto& e : entries) {
    sets.emplace_back(std::to_string(e.b_max), &e.adaptive);
    sets.emplace_back(std::to_string(e.b_max), &e.non_adaptive);
    settings.push_back(json{{"b_max", e.b_max},
                            {"adaptive", curve_json(e.adaptive)},
                            {"alpha0", curve_json(e.non_adaptive)}});
  }
  write_summary(g.out_dir, sets);
  std::cout << json{{"command", "robustness"}, {"settings", settings}}.dump() << "\n";
  return 0;
}

int cmd_sweep(const GlobalOptions& g, const std::string& axis_name,
              const std::vector<double>& values) {
  mbmpo::HarnessConfig c = load_config(g);
  const mbmpo::SweepAxis axis = mbmpo::parse_sweep_axis(axis_name);
  const auto sets = mbmpo::sweep(c.run, axis, values, options_for(g, c));
  std::vector<std::pair<std::string, const mbmpo::CurveSet*>> rows;
  json out = json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    rows.emplace_back(std::to_string(values[i]), &sets[i]);
    out.push_back(curve_json(sets[i]));
  }
  write_summary(g.out_dir, rows);
  std::cout << json{{"command", "sweep"}, {"axis", axis_name}, {"curves", out}}.dump() << "\n";
  return 0;
}

int cmd_ablate(const GlobalOptions& g) {
  mbmpo::HarnessConfig c = load_config(g);
  const auto ablation = mbmpo::ablate_exploration(c.run, options_for(g, c));
  write_summary(g.out_dir, {{"tailored", &ablation.tailored},
                            {"non_tailored", &ablation.non_tailored}});
  std::cout << json{{"command", "ablate-exploration"},
                    {"tailored", curve_json(ablation.tailored)},
                    {"non_tailored", curve_json(ablation.non_tailored)},
                    {"final_return_ratio", ablation.final_return_ratio}}
                   .dump()
            << "\n";
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based meta-policy optimization on analytic environments"};
  app.require_subcommand(1);
  GlobalOptions g;
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "suppress per-iteration progress on stderr");
  app.add_option("--config", g.config_path, "INI configuration file");
  app.add_option("--set", g.overrides, "override, section.key=value (repeatable)");

  auto* train = app.add_subcommand("train", "single training run");
  std::string checkpoint_path;
  int episodes = 100;
  auto* eval = app.add_subcommand("eval", "evaluate the pre-update policy of a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--episodes", episodes)->capture_default_str();

  int resolution = 0;
  auto* umap = app.add_subcommand("uncertainty-map", "ensemble std vs adaptation KL grid");
  umap->add_option("--checkpoint", checkpoint_path)->required();
  umap->add_option("--resolution", resolution, "cells per side (default from config)");

  std::vector<double> b_max;
  auto* robust = app.add_subcommand("robustness", "adaptive vs alpha=0 under biased models");
  robust->add_option("--b-max", b_max, "b_max values (default from config)")->delimiter(',');

  std::string axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "one-axis hyperparameter sweep");
  sweep->add_option("--axis", axis, "alpha | ensemble_size | meta_steps")->required();
  sweep->add_option("--values", values)->required()->delimiter(',');

  auto* ablate =
      app.add_subcommand("ablate-exploration", "tailored vs pre-update data collection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) return cmd_eval(g, checkpoint_path, episodes);
    if (umap->parsed()) return cmd_uncertainty_map(g, checkpoint_path, resolution);
    if (robust->parsed()) return cmd_robustness(g, b_max);
    if (sweep->parsed()) return cmd_sweep(g, axis, values);
    if (ablate->parsed()) return cmd_ablate(g);
  } catch (const mbmpo::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
