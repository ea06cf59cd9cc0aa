#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dde/mdp.hpp"

namespace dde {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of an experiment. Sections in the config file group the keys;
/// key names are unique across sections so a bare `key=value` override works.
struct ExperimentConfig {
  // [mdp]
  std::string mdp_kind = "chain";  // chain | gridworld | random | reference
  std::size_t n_states = 10;
  std::size_t n_actions = 2;
  double gamma = 0.9;
  std::string reward_kind = "point_mass";  // random MDPs: point_mass | continuous
  std::uint64_t mdp_seed = 1;
  double safe_reward = 0.1;
  double advance_prob = 0.8;
  double tail_prob = 0.05;
  double tail_loss = 3.0;
  double tail_gain = 3.0;
  double goal_reward = 1.0;
  std::size_t grid_width = 5;
  std::size_t grid_height = 3;
  bool cliff = true;
  double slip = 0.1;

  // [dataset]
  std::string dataset_mode = "iid";  // iid | trajectories
  std::size_t dataset_size = 20000;
  std::size_t trajectory_horizon = 50;
  std::size_t favored_action = 0;
  double favored_prob = 0.9;
  std::string dataset_file;

  // [algorithm]
  std::size_t members = 10;
  std::size_t atoms = 32;
  double beta = 0.5;
  double learning_rate = 0.05;
  double kappa_huber = 1.0;
  double kappa_polyak = 0.005;
  double epsilon = 0.1;
  std::size_t steps = 20000;
  std::size_t batch_size = 64;
  std::size_t eval_every = 1000;
  std::size_t eval_episodes = 1000;
  std::size_t eval_horizon = 0;  // 0: chosen from a 1e-3 truncation error
  bool enumerate_actions = false;
  bool bootstrap = false;
  std::string penalty = "quantile";  // quantile | uniform
  std::string greedy = "mean";       // mean | cvar
  double risk_level = 0.1;

  // [evaluate]
  std::string eval_source = "dataset";  // dataset | model
  std::string target_policy = "uniform";  // uniform | behavior
  double distortion = 0.0;
  double fixed_point_tol = 1e-9;
  std::size_t max_iter = 0;  // 0: 10 log(tol) / log(gamma)
  std::string missing_data = "worst_case_clamp";  // worst_case_clamp | error

  // [theory]
  std::size_t contraction_pairs = 200;
  std::size_t contraction_states = 5;
  std::size_t contraction_actions = 3;
  std::size_t contraction_atoms = 16;
  std::size_t sandwich_instances = 20;
  std::size_t sandwich_states = 4;
  std::size_t sandwich_actions = 2;
  std::size_t sandwich_atoms = 128;
  double sandwich_tol = 1e-6;
  double sandwich_phi_max = 0.2;
  std::size_t reference_atoms = 32;
  std::vector<double> clt_taus{0.1, 0.5, 0.9};
  std::size_t clt_n = 4096;
  std::size_t clt_replicates = 5000;
  double concentration_tau = 0.5;
  std::size_t concentration_n = 1000;
  double concentration_delta = 0.1;
  std::size_t concentration_replicates = 1000;
  std::size_t oracle_instances = 5;
  std::size_t oracle_states = 3;
  std::size_t oracle_actions = 2;
  std::size_t oracle_rollouts = 100000;
  double oracle_truncation = 1e-4;

  // [compare]
  std::size_t seeds = 10;
};

namespace detail {

struct ConfigField {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
T parse_value(const std::string& text) {
  std::size_t used = 0;
  try {
    if constexpr (std::is_same_v<T, double>) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else if constexpr (std::is_same_v<T, std::size_t>) {
      if (!text.empty() && text[0] != '-') {
        const auto v = std::stoull(text, &used);
        if (used == text.size()) return static_cast<T>(v);
      }
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> out;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(parse_value<double>(item));
      if (!out.empty()) return out;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("cannot parse value '" + text + "'");
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, double>) return fmt_double(v);
  else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_same_v<T, std::string>) return v;
  else if constexpr (std::is_same_v<T, std::vector<double>>) {
    std::string out;
    for (double x : v) out += (out.empty() ? "" : ",") + fmt_double(x);
    return out;
  } else {
    return std::to_string(v);
  }
}

template <class T>
ConfigField bind(const char* section, const char* key, T ExperimentConfig::*member,
                 std::vector<std::string> choices = {}) {
  return {section, key,
          [member, choices, key](ExperimentConfig& c, const std::string& text) {
            if (!choices.empty() && std::find(choices.begin(), choices.end(), text) == choices.end())
              throw ConfigError(std::string("invalid value '") + text + "' for " + key);
            c.*member = parse_value<T>(text);
          },
          [member](const ExperimentConfig& c) { return format_value(c.*member); }};
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline const std::vector<detail::ConfigField>& config_schema() {
  using C = ExperimentConfig;
  using detail::bind;
  static const std::vector<detail::ConfigField> fields = {
      bind("mdp", "kind", &C::mdp_kind, {"chain", "gridworld", "random", "reference"}),
      bind("mdp", "n_states", &C::n_states),
      bind("mdp", "n_actions", &C::n_actions),
      bind("mdp", "gamma", &C::gamma),
      bind("mdp", "reward_kind", &C::reward_kind, {"point_mass", "continuous"}),
      bind("mdp", "mdp_seed", &C::mdp_seed),
      bind("mdp", "safe_reward", &C::safe_reward),
      bind("mdp", "advance_prob", &C::advance_prob),
      bind("mdp", "tail_prob", &C::tail_prob),
      bind("mdp", "tail_loss", &C::tail_loss),
      bind("mdp", "tail_gain", &C::tail_gain),
      bind("mdp", "goal_reward", &C::goal_reward),
      bind("mdp", "grid_width", &C::grid_width),
      bind("mdp", "grid_height", &C::grid_height),
      bind("mdp", "cliff", &C::cliff),
      bind("mdp", "slip", &C::slip),
      bind("dataset", "mode", &C::dataset_mode, {"iid", "trajectories"}),
      bind("dataset", "size", &C::dataset_size),
      bind("dataset", "trajectory_horizon", &C::trajectory_horizon),
      bind("dataset", "favored_action", &C::favored_action),
      bind("dataset", "favored_prob", &C::favored_prob),
      bind("dataset", "file", &C::dataset_file),
      bind("algorithm", "L", &C::members),
      bind("algorithm", "M", &C::atoms),
      bind("algorithm", "beta", &C::beta),
      bind("algorithm", "learning_rate", &C::learning_rate),
      bind("algorithm", "kappa_huber", &C::kappa_huber),
      bind("algorithm", "kappa_polyak", &C::kappa_polyak),
      bind("algorithm", "epsilon", &C::epsilon),
      bind("algorithm", "steps", &C::steps),
      bind("algorithm", "batch_size", &C::batch_size),
      bind("algorithm", "eval_every", &C::eval_every),
      bind("algorithm", "eval_episodes", &C::eval_episodes),
      bind("algorithm", "eval_horizon", &C::eval_horizon),
      bind("algorithm", "enumerate_actions", &C::enumerate_actions),
      bind("algorithm", "bootstrap", &C::bootstrap),
      bind("algorithm", "penalty", &C::penalty, {"quantile", "uniform"}),
      bind("algorithm", "greedy", &C::greedy, {"mean", "cvar"}),
      bind("algorithm", "risk_level", &C::risk_level),
      bind("evaluate", "source", &C::eval_source, {"dataset", "model"}),
      bind("evaluate", "target_policy", &C::target_policy, {"uniform", "behavior"}),
      bind("evaluate", "distortion", &C::distortion),
      bind("evaluate", "fixed_point_tol", &C::fixed_point_tol),
      bind("evaluate", "max_iter", &C::max_iter),
      bind("evaluate", "missing_data", &C::missing_data, {"worst_case_clamp", "error"}),
      bind("theory", "contraction_pairs", &C::contraction_pairs),
      bind("theory", "contraction_states", &C::contraction_states),
      bind("theory", "contraction_actions", &C::contraction_actions),
      bind("theory", "contraction_atoms", &C::contraction_atoms),
      bind("theory", "sandwich_instances", &C::sandwich_instances),
      bind("theory", "sandwich_states", &C::sandwich_states),
      bind("theory", "sandwich_actions", &C::sandwich_actions),
      bind("theory", "sandwich_atoms", &C::sandwich_atoms),
      bind("theory", "sandwich_tol", &C::sandwich_tol),
      bind("theory", "sandwich_phi_max", &C::sandwich_phi_max),
      bind("theory", "reference_atoms", &C::reference_atoms),
      bind("theory", "clt_taus", &C::clt_taus),
      bind("theory", "clt_n", &C::clt_n),
      bind("theory", "clt_replicates", &C::clt_replicates),
      bind("theory", "concentration_tau", &C::concentration_tau),
      bind("theory", "concentration_n", &C::concentration_n),
      bind("theory", "concentration_delta", &C::concentration_delta),
      bind("theory", "concentration_replicates", &C::concentration_replicates),
      bind("theory", "oracle_instances", &C::oracle_instances),
      bind("theory", "oracle_states", &C::oracle_states),
      bind("theory", "oracle_actions", &C::oracle_actions),
      bind("theory", "oracle_rollouts", &C::oracle_rollouts),
      bind("theory", "oracle_truncation", &C::oracle_truncation),
      bind("compare", "seeds", &C::seeds),
  };
  return fields;
}

namespace detail {

/// Finds a field by `section.key`, by `key` inside `section`, or by bare key.
inline const ConfigField* find_field(const std::string& section, const std::string& name) {
  const auto& schema = config_schema();
  std::string sec = section, key = name;
  if (const auto dot = name.find('.'); dot != std::string::npos) {
    sec = name.substr(0, dot);
    key = name.substr(dot + 1);
  }
  for (const auto& f : schema)
    if (f.key == key && (sec.empty() || f.section == sec)) return &f;
  return nullptr;
}

}  // namespace detail

/// Applies one `key=value` assignment (key may be `section.key`).
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const auto* field = detail::find_field("", key);
  if (field == nullptr) throw ConfigError("unknown key '" + key + "'");
  try {
    field->set(cfg, detail::trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (override " + key + ")");
  }
}

/// Flat `key = value` lines under optional `[section]` headers; `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::string line, section;
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      const auto& schema = config_schema();
      if (std::none_of(schema.begin(), schema.end(), [&](const auto& f) { return f.section == section; }))
        fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const auto* field = detail::find_field(section, key);
    if (field == nullptr) fail("unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
    try {
      field->set(cfg, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

/// One `section.key=value` line per field in schema order.
inline std::string canonical_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : config_schema()) out += f.section + "." + f.key + "=" + f.get(cfg) + "\n";
  return out;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return to_hex(fnv1a64(canonical_text(cfg))); }

}  // namespace dde
