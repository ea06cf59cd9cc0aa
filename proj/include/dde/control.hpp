#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "dde/dataset.hpp"
#include "dde/ensemble.hpp"
#include "dde/mdp.hpp"
#include "dde/quantile.hpp"
#include "dde/random.hpp"
#include "dde/simulation.hpp"

namespace dde {

/// (1/(L M)) sum over members and atoms of the online tables.
inline double q_value(const Ensemble& ens, StateId s, ActionId a) {
  double acc = 0.0;
  for (const auto& member : ens.online) acc += row_mean(member.row(s, a));
  return acc / static_cast<double>(ens.size());
}

/// CVaR_alpha of a sample or atom list: mean of the lowest alpha fraction, the
/// boundary value counted fractionally.
inline double lower_tail_mean(std::span<const double> values, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::domain_error("lower_tail_mean: alpha outside (0,1]");
  if (values.empty()) throw std::invalid_argument("lower_tail_mean: no values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double mass = alpha * static_cast<double>(sorted.size());
  double acc = 0.0;
  double used = 0.0;
  for (std::size_t i = 0; i < sorted.size() && used < mass; ++i) {
    const double w = std::min(1.0, mass - used);
    acc += w * sorted[i];
    used += w;
  }
  return acc / mass;
}

/// Distorted expectation: per-member CVaR_alpha of the atoms, averaged over members.
inline double risk_q(const Ensemble& ens, StateId s, ActionId a, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::domain_error("risk_q: level outside (0,1]");
  double acc = 0.0;
  for (const auto& member : ens.online) acc += lower_tail_mean(member.row(s, a), alpha);
  return acc / static_cast<double>(ens.size());
}

struct GreedyMode {
  enum class Kind { mean, cvar } kind = Kind::mean;
  double alpha = 1.0;

  static GreedyMode mean() { return {}; }
  static GreedyMode cvar(double level) { return {Kind::cvar, level}; }
};

inline double action_score(const Ensemble& ens, StateId s, ActionId a, const GreedyMode& mode) {
  return mode.kind == GreedyMode::Kind::mean ? q_value(ens, s, a) : risk_q(ens, s, a, mode.alpha);
}

/// Epsilon-greedy on per-state scores; ties go to the lowest action index.
inline Policy epsilon_greedy(std::span<const double> scores, std::size_t n_states, std::size_t n_actions,
                             double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::domain_error("epsilon outside [0,1]");
  Policy pi{n_states, n_actions, std::vector<double>(n_states * n_actions, epsilon / static_cast<double>(n_actions))};
  for (StateId s = 0; s < n_states; ++s) {
    ActionId best = 0;
    for (ActionId a = 1; a < n_actions; ++a)
      if (scores[s * n_actions + a] > scores[s * n_actions + best]) best = a;
    pi.probs[s * n_actions + best] += 1.0 - epsilon;
  }
  return pi;
}

inline Policy greedy_policy(const Ensemble& ens, const GreedyMode& mode, double epsilon) {
  const auto& shape = ens.shape();
  std::vector<double> scores(shape.pairs());
  for (StateId s = 0; s < shape.n_states; ++s)
    for (ActionId a = 0; a < shape.n_actions; ++a) scores[s * shape.n_actions + a] = action_score(ens, s, a, mode);
  return epsilon_greedy(scores, shape.n_states, shape.n_actions, epsilon);
}

// ---------------------------------------------------------------------------
// Policy evaluation by rollouts
// ---------------------------------------------------------------------------

struct EvalResult {
  double mean = 0.0;
  double cvar10 = 0.0;
  std::vector<double> samples;
};

/// Rollouts from rho0 for `horizon` steps. Episode k draws from its own stream
/// derived from one base draw, so results do not depend on scheduling.
inline EvalResult evaluate_policy(const FiniteMdp& mdp, const Policy& pi, std::size_t n_episodes, std::size_t horizon,
                                  Rng& rng) {
  if (n_episodes == 0) throw std::invalid_argument("evaluate_policy: n_episodes must be positive");
  const std::uint64_t base = rng();
  EvalResult out;
  out.samples.resize(n_episodes);
  for (std::size_t k = 0; k < n_episodes; ++k) {
    Rng episode(derive_seed(base, role::eval, k + 1));
    StateId s = sample_categorical(mdp.rho0, episode);
    double total = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const ActionId a = sample_categorical(pi.row(s), episode);
      const auto step = sample_step(mdp, s, a, episode);
      total += discount * step.r;
      discount *= mdp.gamma;
      s = step.s_next;
    }
    out.samples[k] = total;
  }
  double acc = 0.0;
  for (double x : out.samples) acc += x;
  out.mean = acc / static_cast<double>(n_episodes);
  out.cvar10 = lower_tail_mean(out.samples, 0.1);
  return out;
}

// ---------------------------------------------------------------------------
// Offline training loop
// ---------------------------------------------------------------------------

struct DdacConfig {
  std::size_t members = 10;
  std::size_t atoms = 32;
  double gamma = 0.9;
  double beta = 0.5;
  double learning_rate = 0.05;
  double kappa_huber = 1.0;
  double kappa_polyak = 0.005;
  double epsilon = 0.1;
  std::size_t steps = 20000;
  std::size_t batch_size = 64;
  std::size_t eval_every = 1000;
  PenaltyShape penalty = PenaltyShape::quantile;
  GreedyMode mode;
  bool enumerate_actions = false;
  bool bootstrap = false;
  bool clamp_to_range = true;
  /// Bounds for initialisation and clamping; from the observed rewards when unset.
  std::optional<ReturnRange> value_range;
  /// Optional true model for online evaluation of the greedy policy.
  const FiniteMdp* eval_mdp = nullptr;
  std::size_t eval_episodes = 1000;
  std::size_t eval_horizon = 100;
  std::uint64_t eval_seed = 0;
};

struct MetricRow {
  std::size_t step = 0;
  double mean_return = std::numeric_limits<double>::quiet_NaN();
  double cvar10 = std::numeric_limits<double>::quiet_NaN();
  double mean_q = 0.0;
  double mean_sigma = 0.0;
};

struct TrainResult {
  Ensemble ensemble;
  Policy policy;
  std::vector<MetricRow> metrics;
};

inline ReturnRange observed_value_range(const OfflineDataset& ds, double gamma) {
  double lo = kInfinity, hi = -kInfinity;
  for (const auto& t : ds.tuples()) {
    lo = std::min(lo, t.r);
    hi = std::max(hi, t.r);
  }
  return {lo / (1.0 - gamma), hi / (1.0 - gamma)};
}

namespace detail {

/// Rows of pairs absent from the data are pinned to the worst-case return in
/// every member, online and target.
inline void pin_uncovered(Ensemble& ens, const OfflineDataset& ds, double worst_case) {
  const auto& shape = ens.shape();
  const std::vector<double> pinned(shape.n_atoms, worst_case);
  for (StateId s = 0; s < shape.n_states; ++s)
    for (ActionId a = 0; a < shape.n_actions; ++a) {
      if (ds.covered(s, a)) continue;
      for (auto& t : ens.online) t.set_row(s, a, pinned);
      for (auto& t : ens.targets) t.set_row(s, a, pinned);
    }
}

inline MetricRow collect_metrics(const Ensemble& ens, const Policy& greedy, std::size_t step, const DdacConfig& cfg) {
  MetricRow row;
  row.step = step;
  const auto& shape = ens.shape();
  double q = 0.0;
  for (StateId s = 0; s < shape.n_states; ++s)
    for (ActionId a = 0; a < shape.n_actions; ++a) q += q_value(ens, s, a);
  row.mean_q = q / static_cast<double>(shape.pairs());
  const auto stats = ensemble_stats(ens.targets);
  double sig = 0.0;
  for (double v : stats.sigma) sig += v;
  row.mean_sigma = sig / static_cast<double>(stats.sigma.size());
  if (cfg.eval_mdp != nullptr) {
    Rng eval_rng(derive_seed(cfg.eval_seed, role::eval));
    const auto res = evaluate_policy(*cfg.eval_mdp, greedy, cfg.eval_episodes, cfg.eval_horizon, eval_rng);
    row.mean_return = res.mean;
    row.cvar10 = res.cvar10;
  }
  return row;
}

}  // namespace detail

/// Offline DDAC: per step, a uniformly drawn batch, one regression step towards
/// the distorted targets under the current epsilon-greedy policy, Polyak mixing,
/// then a policy refresh from the updated critic.
inline TrainResult train_ddac_tabular(const OfflineDataset& ds, const DdacConfig& cfg, Rng& rng) {
  if (ds.empty()) throw std::invalid_argument("train_ddac_tabular: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_ddac_tabular: batch_size must be positive");
  const TableShape shape{ds.n_states(), ds.n_actions(), cfg.atoms};
  const ReturnRange range = cfg.value_range.value_or(observed_value_range(ds, cfg.gamma));

  TrainResult out;
  auto& ens = out.ensemble;
  ens = init_ensemble(cfg.members, shape, UniformInit{range.lo, range.hi}, rng);
  ens.gamma = cfg.gamma;
  ens.beta = cfg.beta;
  ens.learning_rate = cfg.learning_rate;
  ens.kappa_huber = cfg.kappa_huber;
  ens.kappa_polyak = cfg.kappa_polyak;
  ens.penalty = cfg.penalty;
  ens.enumerate_actions = cfg.enumerate_actions;
  ens.bootstrap = cfg.bootstrap;
  if (cfg.clamp_to_range) ens.clamp = range;
  ens.validate();
  detail::pin_uncovered(ens, ds, range.lo);

  out.policy = greedy_policy(ens, cfg.mode, cfg.epsilon);
  const auto tuples = ds.tuples();
  std::vector<Transition> batch(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& t : batch) t = tuples[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(tuples.size()))];
    ensemble_regression_step(ens, batch, out.policy, rng);
    polyak_update(ens);
    out.policy = greedy_policy(ens, cfg.mode, cfg.epsilon);
    if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps))
      out.metrics.push_back(detail::collect_metrics(ens, greedy_policy(ens, cfg.mode, 0.0), step, cfg));
  }
  return out;
}

inline void write_metrics(std::ostream& os, std::span<const MetricRow> rows) {
  os << "step,mean_return,cvar10,mean_q,mean_sigma\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.mean_return, r.cvar10, r.mean_q,
                  r.mean_sigma);
    os << buf;
  }
}

}  // namespace dde
