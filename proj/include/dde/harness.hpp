#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "json.hpp"

#include "dde/benchmarks.hpp"
#include "dde/config.hpp"
#include "dde/control.hpp"
#include "dde/dataset.hpp"
#include "dde/distortion.hpp"
#include "dde/ensemble.hpp"
#include "dde/mdp.hpp"
#include "dde/parallel.hpp"
#include "dde/random.hpp"
#include "dde/theory.hpp"

namespace dde {

namespace fs = std::filesystem;

inline FiniteMdp build_mdp(const ExperimentConfig& cfg) {
  FiniteMdp mdp;
  if (cfg.mdp_kind == "chain") {
    ChainSpec spec;
    spec.n_states = cfg.n_states;
    spec.gamma = cfg.gamma;
    spec.safe_reward = cfg.safe_reward;
    spec.advance_prob = cfg.advance_prob;
    spec.tail_prob = cfg.tail_prob;
    spec.tail_loss = cfg.tail_loss;
    spec.tail_gain = cfg.tail_gain;
    spec.goal_reward = cfg.goal_reward;
    mdp = chain_mdp(spec);
  } else if (cfg.mdp_kind == "gridworld") {
    GridSpec spec;
    spec.width = cfg.grid_width;
    spec.height = cfg.grid_height;
    spec.cliff = cfg.cliff;
    spec.gamma = cfg.gamma;
    spec.slip = cfg.slip;
    mdp = gridworld_mdp(spec);
  } else if (cfg.mdp_kind == "random") {
    Rng rng = make_rng(cfg.mdp_seed, role::mdp);
    mdp = random_mdp(cfg.n_states, cfg.n_actions, cfg.gamma,
                     cfg.reward_kind == "continuous" ? RewardKind::continuous : RewardKind::point_mass, rng);
  } else {
    mdp = reference_mdp();
  }
  validate_mdp(mdp);
  return mdp;
}

inline Policy behavior_policy(const ExperimentConfig& cfg, const FiniteMdp& mdp) {
  if (cfg.favored_action >= mdp.n_actions) throw ConfigError("favored_action out of range");
  return biased_policy(mdp.n_states, mdp.n_actions, cfg.favored_action, cfg.favored_prob);
}

/// Loads `dataset.file` when set (its MDP hash must match), otherwise generates
/// from the behaviour policy with the dataset stream of `seed`.
inline OfflineDataset make_dataset(const ExperimentConfig& cfg, const FiniteMdp& mdp, std::uint64_t seed) {
  if (!cfg.dataset_file.empty()) {
    std::ifstream in(cfg.dataset_file);
    if (!in) throw std::runtime_error("missing dataset file '" + cfg.dataset_file + "'");
    auto file = read_dataset(in, mdp.n_states, mdp.n_actions);
    if (!file.mdp_hash.empty() && file.mdp_hash != mdp_hash(mdp))
      throw std::runtime_error("dataset '" + cfg.dataset_file + "' was generated for a different mdp");
    return std::move(file.dataset);
  }
  const auto behavior = behavior_policy(cfg, mdp);
  Rng rng = make_rng(seed, role::dataset);
  if (cfg.dataset_mode == "trajectories")
    return generate_offline_dataset(mdp, behavior, cfg.dataset_size, Trajectories{cfg.trajectory_horizon}, rng);
  return generate_offline_dataset(mdp, behavior, cfg.dataset_size, IidFromWeights{behavior_pair_weights(behavior)},
                                  rng);
}

inline std::size_t evaluation_horizon(const ExperimentConfig& cfg, const FiniteMdp& mdp) {
  return cfg.eval_horizon > 0 ? cfg.eval_horizon : horizon_for_truncation(mdp, 1e-3);
}

inline GreedyMode greedy_mode(const ExperimentConfig& cfg) {
  return cfg.greedy == "cvar" ? GreedyMode::cvar(cfg.risk_level) : GreedyMode::mean();
}

inline DdacConfig ddac_config(const ExperimentConfig& cfg, const FiniteMdp& mdp, std::uint64_t seed) {
  DdacConfig d;
  d.members = cfg.members;
  d.atoms = cfg.atoms;
  d.gamma = mdp.gamma;
  d.beta = cfg.beta;
  d.learning_rate = cfg.learning_rate;
  d.kappa_huber = cfg.kappa_huber;
  d.kappa_polyak = cfg.kappa_polyak;
  d.epsilon = cfg.epsilon;
  d.steps = cfg.steps;
  d.batch_size = cfg.batch_size;
  d.eval_every = cfg.eval_every;
  d.penalty = cfg.penalty == "uniform" ? PenaltyShape::uniform : PenaltyShape::quantile;
  d.mode = greedy_mode(cfg);
  d.enumerate_actions = cfg.enumerate_actions;
  d.bootstrap = cfg.bootstrap;
  d.value_range = mdp.return_range();
  d.eval_mdp = &mdp;
  d.eval_episodes = cfg.eval_episodes;
  d.eval_horizon = evaluation_horizon(cfg, mdp);
  d.eval_seed = seed;
  return d;
}

/// out/<config-hash>/<seed>
inline fs::path run_directory(const fs::path& out, const ExperimentConfig& cfg, std::uint64_t seed) {
  return out / config_hash(cfg) / std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Theorem checks
// ---------------------------------------------------------------------------

/// Runs every theorem check configured under [theory]; one report per check.
inline std::vector<TheoremReport> verify_theory(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t jobs) {
  std::vector<TheoremReport> reports;
  {
    Rng rng = make_rng(seed, role::theory, 1);
    const auto mdp = random_mdp(cfg.contraction_states, cfg.contraction_actions, cfg.gamma, RewardKind::point_mass, rng);
    const auto pi = Policy::uniform(mdp.n_states, mdp.n_actions);
    reports.push_back(contraction_check(mdp, pi, cfg.contraction_atoms, cfg.contraction_pairs, 1.0, rng));
  }
  {
    std::vector<TheoremReport> parts(cfg.sandwich_instances);
    parallel_for(cfg.sandwich_instances, jobs, [&](std::size_t i) {
      Rng rng = make_rng(seed, role::instance, i + 1);
      const auto mdp = random_mdp(cfg.sandwich_states, cfg.sandwich_actions, cfg.gamma, RewardKind::point_mass, rng);
      const TableShape shape{mdp.n_states, mdp.n_actions, cfg.sandwich_atoms};
      std::vector<double> phi(shape.size());
      for (double& v : phi) v = uniform(rng, 0.0, cfg.sandwich_phi_max);
      parts[i] = sandwich_check(mdp, Policy::uniform(mdp.n_states, mdp.n_actions), DistortionTable(shape, phi),
                                cfg.sandwich_tol);
    });
    TheoremReport r;
    r.name = "sandwich";
    r.statistic = -kInfinity;
    r.passed = true;
    for (const auto& p : parts) {
      r.statistic = std::max(r.statistic, p.statistic);
      r.tolerance = std::max(r.tolerance, p.tolerance);
      r.replicates += p.replicates;
      r.passed = r.passed && p.passed;
    }
    r.add("instances", static_cast<double>(parts.size()));
    reports.push_back(r);
  }
  const auto ref = reference_mdp();
  const auto ref_pi = Policy::uniform(1, 1);
  const auto eta = exact_fixed_point(ref, ref_pi, cfg.reference_atoms, 1e-11);
  {
    const auto support = exact_bellman_support(ref, ref_pi, eta, 0, 0);
    double lowest = kInfinity;
    const std::size_t grid = 10000;
    for (std::size_t i = 0; i < grid; ++i) {
      const double z = support.lo + (static_cast<double>(i) + 0.5) * support.width() / static_cast<double>(grid);
      lowest = std::min(lowest, target_density(ref, ref_pi, eta, 0, 0, z));
    }
    TheoremReport r;
    r.name = "density_positive";
    r.statistic = lowest;
    r.replicates = grid;
    r.passed = lowest > 0.0;
    reports.push_back(r);
  }
  {
    CltConfig clt;
    clt.taus = cfg.clt_taus;
    clt.n = cfg.clt_n;
    clt.replicates = cfg.clt_replicates;
    clt.seed = derive_seed(seed, role::theory, 2);
    clt.jobs = jobs;
    for (auto& r : clt_experiment(ref, ref_pi, eta, 0, 0, clt)) reports.push_back(std::move(r));
  }
  {
    ConcentrationConfig conc;
    conc.tau = cfg.concentration_tau;
    conc.n = cfg.concentration_n;
    conc.delta = cfg.concentration_delta;
    conc.replicates = cfg.concentration_replicates;
    conc.seed = derive_seed(seed, role::theory, 3);
    conc.jobs = jobs;
    reports.push_back(concentration_experiment(ref, ref_pi, eta, conc));
  }
  {
    TheoremReport r;
    r.name = "oracle_equivalence";
    r.statistic = -kInfinity;
    r.passed = true;
    for (std::size_t i = 0; i < cfg.oracle_instances; ++i) {
      Rng rng = make_rng(seed, role::instance, 1000 + i);
      const auto mdp = random_mdp(cfg.oracle_states, cfg.oracle_actions, cfg.gamma, RewardKind::point_mass, rng);
      const auto part = oracle_check(mdp, Policy::uniform(mdp.n_states, mdp.n_actions), cfg.reference_atoms,
                                     cfg.oracle_rollouts, cfg.oracle_truncation, derive_seed(seed, role::theory, 10 + i),
                                     jobs);
      r.statistic = std::max(r.statistic, part.statistic);
      r.tolerance = part.tolerance;
      r.replicates = part.replicates;
      r.passed = r.passed && part.passed;
    }
    r.add("instances", static_cast<double>(cfg.oracle_instances));
    reports.push_back(r);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Quantile-shaped versus uniform pessimism
// ---------------------------------------------------------------------------

struct ArmResult {
  double mean = 0.0;
  double cvar10 = 0.0;
};

struct CompareRow {
  std::uint64_t seed = 0;
  ArmResult dde;
  ArmResult uniform;
};

struct CompareSummary {
  std::vector<CompareRow> rows;
  double mean_dde = 0.0;
  double mean_uniform = 0.0;
  std::size_t dde_at_least = 0;
  std::size_t dde_better = 0;
  std::size_t uniform_better = 0;
  double sign_test_p = 1.0;
};

/// Two-sided sign test on the non-tied pairs.
inline double sign_test_p_value(std::size_t positives, std::size_t negatives) {
  const std::size_t n = positives + negatives;
  if (n == 0) return 1.0;
  const boost::math::binomial_distribution<double> b(static_cast<double>(n), 0.5);
  const double k = static_cast<double>(std::min(positives, negatives));
  return std::min(1.0, 2.0 * boost::math::cdf(b, k));
}

/// Seed k of the study is `seed + k`. Both arms of a seed share the dataset,
/// the initial ensemble, the batch stream and the evaluation stream; only the
/// penalty shape differs. Per-arm metrics go to `metrics_dir` when given.
inline CompareSummary run_compare(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t jobs,
                                  const fs::path* metrics_dir = nullptr) {
  const auto mdp = build_mdp(cfg);
  CompareSummary out;
  out.rows.resize(cfg.seeds);
  const std::size_t horizon = evaluation_horizon(cfg, mdp);
  parallel_for(cfg.seeds, jobs, [&](std::size_t k) {
    const std::uint64_t s = seed + k;
    const auto ds = make_dataset(cfg, mdp, s);
    CompareRow row;
    row.seed = s;
    for (int arm = 0; arm < 2; ++arm) {
      auto arm_cfg = cfg;
      arm_cfg.penalty = arm == 0 ? "quantile" : "uniform";
      const auto d = ddac_config(arm_cfg, mdp, s);
      Rng train = make_rng(s, role::train);
      const auto result = train_ddac_tabular(ds, d, train);
      const auto greedy = greedy_policy(result.ensemble, d.mode, 0.0);
      Rng eval = make_rng(s, role::eval, 1);
      const auto ev = evaluate_policy(mdp, greedy, cfg.eval_episodes, horizon, eval);
      (arm == 0 ? row.dde : row.uniform) = {ev.mean, ev.cvar10};
      if (metrics_dir != nullptr) {
        std::ofstream os(*metrics_dir / (std::to_string(s) + (arm == 0 ? "_dde" : "_uniform") + "_metrics.csv"));
        write_metrics(os, result.metrics);
      }
    }
    out.rows[k] = row;
  });
  for (const auto& r : out.rows) {
    out.mean_dde += r.dde.mean / static_cast<double>(out.rows.size());
    out.mean_uniform += r.uniform.mean / static_cast<double>(out.rows.size());
    if (r.dde.mean >= r.uniform.mean) ++out.dde_at_least;
    if (r.dde.mean > r.uniform.mean) ++out.dde_better;
    if (r.dde.mean < r.uniform.mean) ++out.uniform_better;
  }
  out.sign_test_p = sign_test_p_value(out.dde_better, out.uniform_better);
  return out;
}

inline void write_compare(std::ostream& os, const CompareSummary& summary) {
  os << "seed,dde_mean,uniform_mean,diff_mean,dde_cvar10,uniform_cvar10,diff_cvar10\n";
  char buf[256];
  for (const auto& r : summary.rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.seed), r.dde.mean, r.uniform.mean, r.dde.mean - r.uniform.mean,
                  r.dde.cvar10, r.uniform.cvar10, r.dde.cvar10 - r.uniform.cvar10);
    os << buf;
  }
}

inline void write_compare_summary(std::ostream& os, const CompareSummary& s) {
  os << "seeds = " << s.rows.size() << '\n'
     << "mean_of_means_dde = " << detail::fmt_double(s.mean_dde) << '\n'
     << "mean_of_means_uniform = " << detail::fmt_double(s.mean_uniform) << '\n'
     << "dde_at_least_uniform = " << s.dde_at_least << '\n'
     << "dde_better = " << s.dde_better << '\n'
     << "uniform_better = " << s.uniform_better << '\n'
     << "sign_test_p = " << detail::fmt_double(s.sign_test_p) << '\n';
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string command;
  ExperimentConfig config;
  std::uint64_t seed = 0;
  fs::path out = "out";
  std::size_t jobs = 1;
};

inline void write_policy(std::ostream& os, const Policy& pi) {
  os << "s,a,prob\n";
  for (StateId s = 0; s < pi.n_states; ++s)
    for (ActionId a = 0; a < pi.n_actions; ++a) os << s << ',' << a << ',' << detail::fmt_double(pi(s, a)) << '\n';
}

inline int cmd_gen_data(const RunOptions& o, const fs::path& dir) {
  const auto mdp = build_mdp(o.config);
  const auto ds = make_dataset(o.config, mdp, o.seed);
  std::ofstream os(dir / "dataset.csv");
  write_dataset(os, ds, o.seed, mdp_hash(mdp));
  std::cout << "wrote " << ds.size() << " tuples to " << (dir / "dataset.csv").string() << '\n';
  return 0;
}

/// Fixed point of the projected operator with a constant distortion, on the
/// model or on the dataset, for the configured target policy.
inline int cmd_evaluate(const RunOptions& o, const fs::path& dir) {
  const auto& cfg = o.config;
  const auto mdp = build_mdp(cfg);
  const auto pi = cfg.target_policy == "behavior" ? behavior_policy(cfg, mdp)
                                                  : Policy::uniform(mdp.n_states, mdp.n_actions);
  const TableShape shape{mdp.n_states, mdp.n_actions, cfg.atoms};
  OfflineDataset ds;
  BellmanSource source = model_source(mdp);
  if (cfg.eval_source == "dataset") {
    ds = make_dataset(cfg, mdp, o.seed);
    source = data_source(ds, mdp,
                         cfg.missing_data == "error" ? MissingDataPolicy::error : MissingDataPolicy::worst_case_clamp);
  }
  const DistortionTable phi(shape, cfg.distortion);
  const std::size_t budget = cfg.max_iter > 0 ? cfg.max_iter : default_max_iterations(cfg.fixed_point_tol, mdp.gamma);
  auto [eta, report] = iterate_fixed_point([&](const QuantileTable& q) { return dde_step(source, pi, q, phi); },
                                           QuantileTable(shape), cfg.fixed_point_tol, budget);
  {
    std::ofstream os(dir / "quantiles.csv");
    write_quantile_table(os, eta);
  }
  std::ofstream(dir / "fixed_point.json") << nlohmann::json(report).dump(2) << '\n';
  std::ofstream os(dir / "evaluation.csv");
  os << "s,a,mean,cvar10\n";
  for (StateId s = 0; s < shape.n_states; ++s)
    for (ActionId a = 0; a < shape.n_actions; ++a)
      os << s << ',' << a << ',' << detail::fmt_double(row_mean(eta.row(s, a))) << ','
         << detail::fmt_double(lower_tail_mean(eta.row(s, a), 0.1)) << '\n';
  std::cout << "fixed point " << (report.converged ? "converged" : "did not converge") << " after "
            << report.iterations << " iterations\n";
  return report.converged ? 0 : 1;
}

inline int cmd_train(const RunOptions& o, const fs::path& dir) {
  const auto mdp = build_mdp(o.config);
  const auto ds = make_dataset(o.config, mdp, o.seed);
  const auto d = ddac_config(o.config, mdp, o.seed);
  Rng rng = make_rng(o.seed, role::train);
  const auto result = train_ddac_tabular(ds, d, rng);
  {
    std::ofstream os(dir / "metrics.csv");
    write_metrics(os, result.metrics);
  }
  save_checkpoint(dir / "checkpoints", result.ensemble, rng);
  std::ofstream os(dir / "policy.csv");
  write_policy(os, greedy_policy(result.ensemble, d.mode, 0.0));
  if (!result.metrics.empty())
    std::cout << "final mean return " << detail::fmt_double(result.metrics.back().mean_return) << ", cvar10 "
              << detail::fmt_double(result.metrics.back().cvar10) << '\n';
  return 0;
}

inline int cmd_verify_theory(const RunOptions& o, const fs::path& dir) {
  const auto reports = verify_theory(o.config, o.seed, o.jobs);
  std::ofstream os(dir / "reports.csv");
  write_report_header(os);
  bool ok = true;
  for (const auto& r : reports) {
    write_report_row(os, r);
    std::cout << to_text(r);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

inline int cmd_compare(const RunOptions& o, const fs::path& dir) {
  const fs::path runs = dir / "runs";
  fs::create_directories(runs);
  const auto summary = run_compare(o.config, o.seed, o.jobs, &runs);
  {
    std::ofstream os(dir / "compare.csv");
    write_compare(os, summary);
  }
  std::ofstream os(dir / "compare_summary.txt");
  write_compare_summary(os, summary);
  write_compare_summary(std::cout, summary);
  return 0;
}

/// Dispatches a command; artifacts land in out/<config-hash>/<seed>/.
inline int run(const RunOptions& o) {
  using Command = int (*)(const RunOptions&, const fs::path&);
  const std::vector<std::pair<std::string, Command>> commands = {{"gen-data", cmd_gen_data},
                                                                 {"evaluate", cmd_evaluate},
                                                                 {"train", cmd_train},
                                                                 {"verify-theory", cmd_verify_theory},
                                                                 {"compare", cmd_compare}};
  const auto it = std::find_if(commands.begin(), commands.end(), [&](const auto& c) { return c.first == o.command; });
  if (it == commands.end()) throw std::invalid_argument("unknown command '" + o.command + "'");
  const fs::path dir = run_directory(o.out, o.config, o.seed);
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << canonical_text(o.config);
  return it->second(o, dir);
}

}  // namespace dde
