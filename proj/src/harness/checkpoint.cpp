#include "mbmpo/harness/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mbmpo/errors.hpp"
#include "mbmpo/policy.hpp"

namespace mbmpo {

namespace {

using nlohmann::json;

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json spec_json(const MlpSpec& spec) {
  return json{{"input_dim", spec.input_dim},
              {"hidden_sizes", spec.hidden_sizes},
              {"output_dim", spec.output_dim},
              {"activation", std::string(activation_name(spec.activation))},
              {"weight_normalized", spec.weight_normalized}};
}

MlpSpec spec_from(const json& j) {
  MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.activation = parse_activation(j.at("activation").get<std::string>());
  spec.weight_normalized = j.at("weight_normalized").get<bool>();
  spec.validate();
  return spec;
}

ParameterVector params_from(const LayoutPtr& layout, const json& j) {
  Eigen::VectorXd values = vector_from(j);
  if (values.size() != layout->size()) {
    throw ConfigError("checkpoint parameter count does not match its network spec");
  }
  return ParameterVector(layout, std::move(values));
}

json normalizer_json(const Normalizer& n) {
  return json{{"mean", vector_json(n.mean)}, {"std", vector_json(n.std)}};
}

Normalizer normalizer_from(const json& j) {
  Normalizer n;
  n.mean = vector_from(j.at("mean"));
  n.std = vector_from(j.at("std"));
  return n;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& c) {
  json j;
  j["format_version"] = c.format_version;
  j["env_id"] = c.env_id;
  j["iteration"] = c.iteration;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["policy"] = json{{"spec", spec_json(c.policy_spec)}, {"theta", vector_json(c.theta.values())}};
  json adapted = json::array();
  for (const auto& a : c.adapted) adapted.push_back(vector_json(a.values()));
  j["policy"]["adapted"] = adapted;

  json models = json::array();
  for (const auto& m : c.ensemble.models) {
    models.push_back(json{{"spec", spec_json(m.spec)},
                          {"params", vector_json(m.params.values())},
                          {"in_norm", normalizer_json(m.in_norm)},
                          {"out_norm", normalizer_json(m.out_norm)}});
  }
  j["ensemble"]["models"] = models;
  if (c.ensemble.perturbation) {
    const Perturbation& p = *c.ensemble.perturbation;
    j["ensemble"]["perturbation"] =
        json{{"b_max", p.b_max}, {"noise_std", p.noise_std}, {"bias", p.bias}};
  }
  return j.dump(1);
}

Checkpoint checkpoint_from_string(const std::string& text) {
  try {
    const json j = json::parse(text);
    Checkpoint c;
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != 1) {
      throw ConfigError("unsupported checkpoint format version " +
                        std::to_string(c.format_version));
    }
    c.env_id = j.at("env_id").get<std::string>();
    c.iteration = j.at("iteration").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.alpha = j.at("alpha").get<double>();
    const json& pj = j.at("policy");
    c.policy_spec = spec_from(pj.at("spec"));
    const GaussianPolicy policy(c.policy_spec);
    c.theta = params_from(policy.layout(), pj.at("theta"));
    for (const auto& a : pj.at("adapted")) c.adapted.push_back(params_from(policy.layout(), a));

    for (const auto& mj : j.at("ensemble").at("models")) {
      DynamicsModel m;
      m.spec = spec_from(mj.at("spec"));
      m.params = params_from(make_mlp_layout(m.spec), mj.at("params"));
      m.in_norm = normalizer_from(mj.at("in_norm"));
      m.out_norm = normalizer_from(mj.at("out_norm"));
      c.ensemble.models.push_back(std::move(m));
    }
    if (j.at("ensemble").contains("perturbation")) {
      const json& p = j["ensemble"]["perturbation"];
      Perturbation pert;
      pert.b_max = p.at("b_max").get<double>();
      pert.noise_std = p.at("noise_std").get<double>();
      pert.bias = p.at("bias").get<std::vector<double>>();
      c.ensemble.perturbation = pert;
    }
    c.ensemble.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  out << checkpoint_to_string(checkpoint) << "\n";
  if (!out) throw ConfigError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_string(buffer.str());
}

}  // namespace mbmpo
