#ifndef MBMPO_HARNESS_CONFIG_HPP_
#define MBMPO_HARNESS_CONFIG_HPP_

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbmpo/orchestrator.hpp"

namespace mbmpo {

struct ExperimentConfig {
  int seeds = 3;
  int map_resolution = 20;
  std::vector<Eigen::VectorXd> probe_actions;  // empty: the default five-action set
  int final_eval_episodes = 500;
  std::vector<double> b_max_list = {0.0, 0.5, 1.0};
};

struct HarnessConfig {
  RunConfig run;
  ExperimentConfig experiment;
};

// Applies one "section.key" = value assignment. Unknown keys and unparsable
// values are configuration errors.
void apply_setting(HarnessConfig& config, const std::string& key, const std::string& value);

// "section.key=value"
void apply_override(HarnessConfig& config, const std::string& assignment);

// INI document: [section] headers with key = value lines.
void apply_ini_file(HarnessConfig& config, const std::string& path);
void apply_ini_string(HarnessConfig& config, const std::string& text);

// Every recognized key, in "section.key" form.
std::vector<std::string> known_setting_keys();

// Current values as an INI document that apply_ini_string reads back.
std::string to_ini(const HarnessConfig& config);

}  // namespace mbmpo

#endif  // MBMPO_HARNESS_CONFIG_HPP_
