#ifndef MBMPO_HARNESS_CHECKPOINT_HPP_
#define MBMPO_HARNESS_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/diffcore/parameter_vector.hpp"
#include "mbmpo/dynamics.hpp"

namespace mbmpo {

// Policy, adapted policies and ensemble after a given iteration. Doubles are
// stored in shortest round-trip form, so load(save(c)) is exact.
struct Checkpoint {
  int format_version = 1;
  std::string env_id;
  int iteration = 0;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  MlpSpec policy_spec;
  ParameterVector theta;
  std::vector<ParameterVector> adapted;
  ModelEnsemble ensemble;
};

std::string checkpoint_to_string(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
// ConfigError on unreadable or malformed files
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mbmpo

#endif  // MBMPO_HARNESS_CHECKPOINT_HPP_
