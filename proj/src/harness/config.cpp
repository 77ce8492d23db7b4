#include "mbmpo/harness/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <type_traits>

#include "mbmpo/errors.hpp"

namespace mbmpo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!trim(item).empty()) out.push_back(trim(item));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split(text, ',')) out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw ConfigError(key + ": expected a non-empty list");
  return out;
}

// "a b; c d; ..." -> one vector per ';'-separated group
std::vector<Eigen::VectorXd> parse_vector_list(const std::string& key, const std::string& text) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& group : split(text, ';')) {
    std::vector<double> values;
    std::stringstream in(group);
    std::string tok;
    while (in >> tok) values.push_back(parse_double(key, tok));
    out.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                    static_cast<Eigen::Index>(values.size())));
  }
  if (out.empty()) throw ConfigError(key + ": expected at least one vector");
  return out;
}

std::string fmt(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

template <typename T>
std::string join(const std::vector<T>& v, const std::string& sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << sep;
    if constexpr (std::is_floating_point_v<T>) {
      out << fmt(v[i]);
    } else {
      out << v[i];
    }
  }
  return out.str();
}

using Setter = std::function<void(HarnessConfig&, const std::string& key, const std::string&)>;
using Getter = std::function<std::string(const HarnessConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

#define MBMPO_DOUBLE(path)                                                                \
  Field {                                                                                 \
    [](HarnessConfig& c, const std::string& k, const std::string& v) {                    \
      c.path = parse_double(k, v);                                                        \
    },                                                                                    \
        [](const HarnessConfig& c) { return fmt(c.path); }                                \
  }
#define MBMPO_INT(path)                                                                   \
  Field {                                                                                 \
    [](HarnessConfig& c, const std::string& k, const std::string& v) {                    \
      c.path = static_cast<decltype(c.path)>(parse_int(k, v));                            \
    },                                                                                    \
        [](const HarnessConfig& c) { return std::to_string(c.path); }                     \
  }
#define MBMPO_BOOL(path)                                                                  \
  Field {                                                                                 \
    [](HarnessConfig& c, const std::string& k, const std::string& v) {                    \
      c.path = parse_bool(k, v);                                                          \
    },                                                                                    \
        [](const HarnessConfig& c) { return std::string(c.path ? "true" : "false"); }     \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"run.env",
       {[](HarnessConfig& c, const std::string&, const std::string& v) { c.run.env_id = trim(v); },
        [](const HarnessConfig& c) { return c.run.env_id; }}},
      {"run.ensemble_size", MBMPO_INT(run.ensemble_size)},
      {"run.alpha", MBMPO_DOUBLE(run.alpha)},
      {"run.meta_steps", MBMPO_INT(run.meta_steps_per_iter)},
      {"run.real_transitions", MBMPO_INT(run.real_transitions_per_iter)},
      {"run.imaginary_transitions", MBMPO_INT(run.imaginary_transitions)},
      {"run.iterations", MBMPO_INT(run.n_iterations)},
      {"run.seed", MBMPO_INT(run.seed)},
      {"run.tailored_collection", MBMPO_BOOL(run.tailored_collection)},
      {"run.resample_imaginary", MBMPO_BOOL(run.resample_imaginary)},
      {"run.eval_episodes", MBMPO_INT(run.eval_episodes)},
      {"run.checkpoint_every", MBMPO_INT(run.checkpoint_every)},
      {"run.exact_fisher", MBMPO_BOOL(run.exact_fisher)},
      {"run.fisher_state_stride", MBMPO_INT(run.fisher_state_stride)},
      {"trpo.kl_bound", MBMPO_DOUBLE(run.trpo.kl_bound)},
      {"trpo.cg_iters", MBMPO_INT(run.trpo.cg_iters)},
      {"trpo.cg_damping", MBMPO_DOUBLE(run.trpo.cg_damping)},
      {"trpo.backtrack_ratio", MBMPO_DOUBLE(run.trpo.backtrack_ratio)},
      {"trpo.max_backtracks", MBMPO_INT(run.trpo.max_backtracks)},
      {"model.hidden",
       {[](HarnessConfig& c, const std::string& k, const std::string& v) {
          c.run.model_hidden = parse_int_list(k, v);
        },
        [](const HarnessConfig& c) { return join(c.run.model_hidden, ","); }}},
      {"model.batch_size", MBMPO_INT(run.model_train.batch_size)},
      {"model.max_epochs", MBMPO_INT(run.model_train.max_epochs)},
      {"model.learning_rate", MBMPO_DOUBLE(run.model_train.adam.learning_rate)},
      {"model.validation_fraction", MBMPO_DOUBLE(run.model_train.validation_fraction)},
      {"model.persistence", MBMPO_DOUBLE(run.model_train.persistence)},
      {"model.patience", MBMPO_INT(run.model_train.patience)},
      {"model.min_rel_improvement", MBMPO_DOUBLE(run.model_train.min_rel_improvement)},
      {"policy.hidden",
       {[](HarnessConfig& c, const std::string& k, const std::string& v) {
          c.run.policy_hidden = parse_int_list(k, v);
        },
        [](const HarnessConfig& c) { return join(c.run.policy_hidden, ","); }}},
      {"policy.activation",
       {[](HarnessConfig& c, const std::string&, const std::string& v) {
          c.run.policy_activation = parse_activation(trim(v));
        },
        [](const HarnessConfig& c) { return std::string(activation_name(c.run.policy_activation)); }}},
      {"policy.init_log_std", MBMPO_DOUBLE(run.init_log_std)},
      {"perturbation.enabled", MBMPO_BOOL(run.perturbation.enabled)},
      {"perturbation.b_max", MBMPO_DOUBLE(run.perturbation.b_max)},
      {"perturbation.noise_std", MBMPO_DOUBLE(run.perturbation.noise_std)},
      {"advantages.discount", MBMPO_DOUBLE(run.advantages.discount)},
      {"advantages.gae_lambda", MBMPO_DOUBLE(run.advantages.gae_lambda)},
      {"advantages.standardize", MBMPO_BOOL(run.advantages.standardize)},
      {"experiment.seeds", MBMPO_INT(experiment.seeds)},
      {"experiment.map_resolution", MBMPO_INT(experiment.map_resolution)},
      {"experiment.final_eval_episodes", MBMPO_INT(experiment.final_eval_episodes)},
      {"experiment.b_max_list",
       {[](HarnessConfig& c, const std::string& k, const std::string& v) {
          c.experiment.b_max_list = parse_double_list(k, v);
        },
        [](const HarnessConfig& c) { return join(c.experiment.b_max_list, ","); }}},
      {"experiment.probe_actions",
       {[](HarnessConfig& c, const std::string& k, const std::string& v) {
          c.experiment.probe_actions =
              trim(v).empty() ? std::vector<Eigen::VectorXd>{} : parse_vector_list(k, v);
        },
        [](const HarnessConfig& c) {
          std::vector<std::string> groups;
          for (const auto& a : c.experiment.probe_actions) {
            groups.push_back(join(std::vector<double>(a.data(), a.data() + a.size()), " "));
          }
          return join(groups, "; ");
        }}},
  };
  return table;
}

#undef MBMPO_DOUBLE
#undef MBMPO_INT
#undef MBMPO_BOOL

void apply_tree(HarnessConfig& config, const boost::property_tree::ptree& tree) {
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("setting '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      apply_setting(config, section + "." + key, value.get_value<std::string>());
    }
  }
}

}  // namespace

void apply_setting(HarnessConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(trim(key));
  if (it == fields().end()) throw ConfigError("unknown setting '" + key + "'");
  it->second.set(config, it->first, value);
}

void apply_override(HarnessConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_ini_file(HarnessConfig& config, const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  apply_tree(config, tree);
}

void apply_ini_string(HarnessConfig& config, const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  apply_tree(config, tree);
}

std::vector<std::string> known_setting_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

std::string to_ini(const HarnessConfig& config) {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << field.get(config) << "\n";
  }
  return out.str();
}

}  // namespace mbmpo
