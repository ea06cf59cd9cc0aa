#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dde/dataset.hpp"
#include "dde/distortion.hpp"
#include "dde/mdp.hpp"
#include "dde/quantile.hpp"
#include "dde/random.hpp"

namespace dde {

/// How the per-pair penalty is spread over the atoms: quantile uses
/// beta * sigma(s,a,m) as is, uniform replaces it by its mean over m.
enum class PenaltyShape { quantile, uniform };

/// L online tables, L target tables and the regression hyperparameters.
struct Ensemble {
  std::vector<QuantileTable> online;
  std::vector<QuantileTable> targets;
  double gamma = 0.9;
  double beta = 0.5;
  double kappa_polyak = 0.005;
  double kappa_huber = 1.0;
  double learning_rate = 0.1;
  /// Average the target over pi(.|s') instead of drawing one a' per tuple.
  bool enumerate_actions = false;
  /// Each member regresses on its own resample (with replacement) of the batch.
  bool bootstrap = false;
  PenaltyShape penalty = PenaltyShape::quantile;
  /// When set, atoms are clipped into this range after every update.
  std::optional<ReturnRange> clamp;
  std::size_t steps = 0;

  std::size_t size() const { return online.size(); }
  const TableShape& shape() const { return online.front().shape(); }

  void validate() const {
    if (online.size() < 2) throw std::invalid_argument("ensemble needs at least two members");
    if (targets.size() != online.size()) throw std::invalid_argument("ensemble: online/target count mismatch");
    for (std::size_t l = 0; l < online.size(); ++l)
      if (online[l].shape() != online[0].shape() || targets[l].shape() != online[0].shape())
        throw std::invalid_argument("ensemble: member shapes differ");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("ensemble: gamma out of range");
    if (beta < 0.0) throw std::invalid_argument("ensemble: beta must be nonnegative");
    if (!(kappa_polyak > 0.0 && kappa_polyak <= 1.0)) throw std::invalid_argument("ensemble: kappa_polyak outside (0,1]");
    if (!(kappa_huber > 0.0)) throw std::invalid_argument("ensemble: kappa_huber must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("ensemble: negative learning rate");
  }
};

struct UniformInit {
  double lo = 0.0;
  double hi = 0.0;
};
struct ConstantInit {
  double value = 0.0;
};
using InitScheme = std::variant<UniformInit, ConstantInit>;

inline Ensemble init_ensemble(std::size_t n_members, TableShape shape, const InitScheme& scheme, Rng& rng) {
  if (n_members < 2) throw std::invalid_argument("init_ensemble: L must be at least 2");
  Ensemble ens;
  for (std::size_t l = 0; l < n_members; ++l) {
    std::vector<double> atoms(shape.size());
    if (const auto* u = std::get_if<UniformInit>(&scheme)) {
      for (double& x : atoms) x = uniform(rng, u->lo, u->hi);
    } else {
      std::fill(atoms.begin(), atoms.end(), std::get<ConstantInit>(scheme).value);
    }
    ens.online.emplace_back(shape, std::move(atoms));
  }
  ens.targets = ens.online;
  return ens;
}

/// Ensemble mean mu(s,a,j) and population standard deviation sigma(s,a,j).
struct SigmaTable {
  TableShape shape;
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t index(StateId s, ActionId a, std::size_t j) const { return (s * shape.n_actions + a) * shape.n_atoms + j; }
  double mean(StateId s, ActionId a, std::size_t j) const { return mu[index(s, a, j)]; }
  double stddev(StateId s, ActionId a, std::size_t j) const { return sigma[index(s, a, j)]; }
  std::span<const double> mean_row(StateId s, ActionId a) const { return {mu.data() + index(s, a, 0), shape.n_atoms}; }
  std::span<const double> sigma_row(StateId s, ActionId a) const {
    return {sigma.data() + index(s, a, 0), shape.n_atoms};
  }
};

/// Members are summed in sorted order per entry, so the result does not depend
/// on the order of the list, bit for bit.
inline SigmaTable ensemble_stats(std::span<const QuantileTable> tables) {
  if (tables.size() < 2) throw std::invalid_argument("ensemble_stats: need at least two tables");
  SigmaTable out{tables[0].shape(), {}, {}};
  for (const auto& t : tables)
    if (t.shape() != out.shape) throw std::invalid_argument("ensemble_stats: shape mismatch");
  const std::size_t n = out.shape.size();
  const auto L = static_cast<double>(tables.size());
  out.mu.resize(n);
  out.sigma.resize(n);
  std::vector<double> column(tables.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < tables.size(); ++l) column[l] = tables[l].atoms()[i];
    std::sort(column.begin(), column.end());
    // Offsets from the smallest member keep identical columns exact.
    double sum = 0.0;
    for (double v : column) sum += v - column.front();
    const double mean = column.front() + sum / L;
    std::vector<double> sq(column.size());
    for (std::size_t l = 0; l < column.size(); ++l) sq[l] = (column[l] - mean) * (column[l] - mean);
    std::sort(sq.begin(), sq.end());
    double ss = 0.0;
    for (double v : sq) ss += v;
    out.mu[i] = mean;
    out.sigma[i] = std::sqrt(ss / L);
  }
  return out;
}

/// phi = beta * sigma.
inline DistortionTable build_phi(const SigmaTable& stats, double beta) {
  if (beta < 0.0) throw std::invalid_argument("build_phi: beta must be nonnegative");
  std::vector<double> phi(stats.sigma.size());
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = beta * stats.sigma[i];
  return DistortionTable(stats.shape, std::move(phi));
}

/// c(s,a) = (1/M) sum_m beta * sigma(s,a,m): same total pessimism as build_phi, flat in m.
inline std::vector<double> uniform_penalty(const SigmaTable& stats, double beta) {
  if (beta < 0.0) throw std::invalid_argument("uniform_penalty: beta must be nonnegative");
  std::vector<double> c(stats.shape.pairs());
  for (std::size_t p = 0; p < c.size(); ++p) {
    double acc = 0.0;
    for (std::size_t m = 0; m < stats.shape.n_atoms; ++m) acc += beta * stats.sigma[p * stats.shape.n_atoms + m];
    c[p] = acc / static_cast<double>(stats.shape.n_atoms);
  }
  return c;
}

inline DistortionTable build_penalty(const SigmaTable& stats, double beta, PenaltyShape shape) {
  if (shape == PenaltyShape::quantile) return build_phi(stats, beta);
  return DistortionTable::broadcast(stats.shape, uniform_penalty(stats, beta));
}

/// r + gamma * mu(s',a',j) - phi(s,a,j); the penalty is taken at the pair being updated.
inline double distorted_target(const SigmaTable& stats, const DistortionTable& phi, double gamma, const Transition& t,
                               ActionId a_next, std::size_t j) {
  return t.r + gamma * stats.mean(t.s_next, a_next, j) - phi(t.s, t.a, j);
}

inline double distorted_target(const SigmaTable& stats, double beta, double gamma, const Transition& t,
                               ActionId a_next, std::size_t j) {
  return t.r + gamma * stats.mean(t.s_next, a_next, j) - beta * stats.stddev(t.s, t.a, j);
}

/// One regression sample: a dataset tuple, the next action used for its
/// target, and the sample's weight (1 for a drawn a', pi(a'|s') when enumerating).
struct TargetSample {
  Transition t;
  ActionId a_next = 0;
  double weight = 1.0;
};

/// sum over samples of weight * (1/M) sum_{i,j} rho^kappa_{tau_i}(T_j - Z(s,a,i)).
inline double regression_loss(const QuantileTable& z, std::span<const TargetSample> samples, const SigmaTable& stats,
                              const DistortionTable& phi, double gamma, double kappa_h) {
  const std::size_t M = z.n_atoms();
  double loss = 0.0;
  for (const auto& smp : samples) {
    const auto row = z.row(smp.t.s, smp.t.a);
    double acc = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      const double target = distorted_target(stats, phi, gamma, smp.t, smp.a_next, j);
      for (std::size_t i = 0; i < M; ++i) acc += quantile_huber(tau_hat(i, M), target - row[i], kappa_h);
    }
    loss += smp.weight * acc / static_cast<double>(M);
  }
  return loss;
}

namespace detail {

/// sum_j |tau - 1{t_j < z}| * clip(t_j - z, -kappa, kappa) for sorted targets t
/// with prefix sums `prefix` (prefix[k] = t_0 + ... + t_{k-1}); O(log M).
inline double huber_pull(std::span<const double> t, std::span<const double> prefix, double z, double tau,
                         double kappa) {
  const auto n = static_cast<std::ptrdiff_t>(t.size());
  const auto a = std::lower_bound(t.begin(), t.end(), z - kappa) - t.begin();
  const auto b = std::lower_bound(t.begin(), t.end(), z) - t.begin();
  const auto c = std::upper_bound(t.begin(), t.end(), z + kappa) - t.begin();
  const double lower = -kappa * static_cast<double>(a) + (prefix[b] - prefix[a]) - static_cast<double>(b - a) * z;
  const double upper = (prefix[c] - prefix[b]) - static_cast<double>(c - b) * z + kappa * static_cast<double>(n - c);
  return (1.0 - tau) * lower + tau * upper;
}

}  // namespace detail

/// d regression_loss / dZ, flattened like QuantileTable::atoms().
inline std::vector<double> regression_gradient(const QuantileTable& z, std::span<const TargetSample> samples,
                                               const SigmaTable& stats, const DistortionTable& phi, double gamma,
                                               double kappa_h) {
  const std::size_t M = z.n_atoms();
  std::vector<double> grad(z.shape().size(), 0.0);
  std::vector<double> targets(M), prefix(M + 1);
  for (const auto& smp : samples) {
    for (std::size_t j = 0; j < M; ++j) targets[j] = distorted_target(stats, phi, gamma, smp.t, smp.a_next, j);
    std::sort(targets.begin(), targets.end());
    prefix[0] = 0.0;
    for (std::size_t j = 0; j < M; ++j) prefix[j + 1] = prefix[j] + targets[j];
    const auto row = z.row(smp.t.s, smp.t.a);
    const std::size_t base = (smp.t.s * z.n_actions() + smp.t.a) * M;
    for (std::size_t i = 0; i < M; ++i)
      grad[base + i] -=
          smp.weight * detail::huber_pull(targets, prefix, row[i], tau_hat(i, M), kappa_h) / static_cast<double>(M);
  }
  return grad;
}

namespace detail {

inline std::vector<TargetSample> expand_targets(std::span<const Transition> batch, const Policy& pi, bool enumerate,
                                                Rng& rng) {
  std::vector<TargetSample> out;
  out.reserve(batch.size() * (enumerate ? pi.n_actions : 1));
  for (const auto& t : batch) {
    if (enumerate) {
      for (ActionId a2 = 0; a2 < pi.n_actions; ++a2)
        if (pi(t.s_next, a2) > 0.0) out.push_back({t, a2, pi(t.s_next, a2)});
    } else {
      out.push_back({t, sample_categorical(pi.row(t.s_next), rng), 1.0});
    }
  }
  return out;
}

/// Identical (tuple, a') samples merged into one with the summed weight.
inline std::vector<TargetSample> merge_samples(std::vector<TargetSample> samples) {
  const auto key = [](const TargetSample& x) { return std::tie(x.t.s, x.t.a, x.t.s_next, x.t.r, x.a_next); };
  std::sort(samples.begin(), samples.end(), [&](const auto& x, const auto& y) { return key(x) < key(y); });
  std::vector<TargetSample> out;
  for (const auto& smp : samples) {
    if (!out.empty() && key(out.back()) == key(smp))
      out.back().weight += smp.weight;
    else
      out.push_back(smp);
  }
  return out;
}

inline void clamp_table(QuantileTable& table, const std::optional<ReturnRange>& range) {
  if (!range) return;
  table.update_rows([&](StateId, ActionId, std::span<double> row) {
    for (double& x : row) x = std::clamp(x, range->lo, range->hi);
  });
}

}  // namespace detail

/// One gradient step for every member on a shared batch. The sigma/phi
/// snapshot is taken once from the target tables before any member moves.
/// Each row's gradient is averaged over the batch tuples that hit it.
inline void ensemble_regression_step(Ensemble& ens, std::span<const Transition> batch, const Policy& pi, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("ensemble_regression_step: empty batch");
  ens.validate();
  const auto stats = ensemble_stats(ens.targets);
  const auto phi = build_penalty(stats, ens.beta, ens.penalty);
  const TableShape shape = ens.shape();
  std::vector<Transition> resampled;
  for (auto& member : ens.online) {
    std::span<const Transition> member_batch = batch;
    if (ens.bootstrap) {
      resampled.resize(batch.size());
      for (auto& t : resampled)
        t = batch[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(batch.size()))];
      member_batch = resampled;
    }
    const auto samples = detail::merge_samples(detail::expand_targets(member_batch, pi, ens.enumerate_actions, rng));
    const auto grad = regression_gradient(member, samples, stats, phi, ens.gamma, ens.kappa_huber);
    std::vector<double> hits(shape.pairs(), 0.0);
    for (const auto& t : member_batch) hits[t.s * shape.n_actions + t.a] += 1.0;
    member.update_rows([&](StateId s, ActionId a, std::span<double> row) {
      const std::size_t p = s * shape.n_actions + a;
      if (hits[p] == 0.0) return;
      for (std::size_t i = 0; i < row.size(); ++i) row[i] -= ens.learning_rate * grad[p * shape.n_atoms + i] / hits[p];
    });
    detail::clamp_table(member, ens.clamp);
  }
  ++ens.steps;
}

/// theta_bar <- (1 - kappa) theta_bar + kappa theta.
inline void polyak_update(Ensemble& ens) {
  const double k = ens.kappa_polyak;
  for (std::size_t l = 0; l < ens.size(); ++l) {
    const auto online = ens.online[l].atoms();
    std::vector<double> mixed(online.size());
    const auto target = ens.targets[l].atoms();
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = (1.0 - k) * target[i] + k * online[i];
    ens.targets[l] = QuantileTable(ens.shape(), std::move(mixed));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: one quantile CSV per member table plus manifest.json
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& dir, const Ensemble& ens, const Rng& rng) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < ens.size(); ++l) {
    std::ofstream on(dir / ("online_" + std::to_string(l) + ".csv"));
    write_quantile_table(on, ens.online[l]);
    std::ofstream tg(dir / ("target_" + std::to_string(l) + ".csv"));
    write_quantile_table(tg, ens.targets[l]);
  }
  std::ostringstream rng_state;
  rng_state << rng;
  nlohmann::json manifest{{"members", ens.size()},
                          {"gamma", ens.gamma},
                          {"beta", ens.beta},
                          {"kappa_polyak", ens.kappa_polyak},
                          {"kappa_huber", ens.kappa_huber},
                          {"learning_rate", ens.learning_rate},
                          {"enumerate_actions", ens.enumerate_actions},
                          {"bootstrap", ens.bootstrap},
                          {"penalty", ens.penalty == PenaltyShape::quantile ? "quantile" : "uniform"},
                          {"steps", ens.steps},
                          {"rng_state", rng_state.str()}};
  if (ens.clamp) manifest["clamp"] = {ens.clamp->lo, ens.clamp->hi};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

struct Checkpoint {
  Ensemble ensemble;
  Rng rng;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: missing manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  Checkpoint out;
  auto& ens = out.ensemble;
  const auto members = manifest.at("members").get<std::size_t>();
  for (std::size_t l = 0; l < members; ++l) {
    std::ifstream on(dir / ("online_" + std::to_string(l) + ".csv"));
    std::ifstream tg(dir / ("target_" + std::to_string(l) + ".csv"));
    if (!on || !tg) throw std::runtime_error("checkpoint: missing member table " + std::to_string(l));
    ens.online.push_back(read_quantile_table(on));
    ens.targets.push_back(read_quantile_table(tg));
  }
  ens.gamma = manifest.at("gamma").get<double>();
  ens.beta = manifest.at("beta").get<double>();
  ens.kappa_polyak = manifest.at("kappa_polyak").get<double>();
  ens.kappa_huber = manifest.at("kappa_huber").get<double>();
  ens.learning_rate = manifest.at("learning_rate").get<double>();
  ens.enumerate_actions = manifest.at("enumerate_actions").get<bool>();
  ens.bootstrap = manifest.at("bootstrap").get<bool>();
  ens.penalty = manifest.at("penalty").get<std::string>() == "uniform" ? PenaltyShape::uniform : PenaltyShape::quantile;
  ens.steps = manifest.at("steps").get<std::size_t>();
  if (manifest.contains("clamp")) ens.clamp = ReturnRange{manifest["clamp"][0].get<double>(), manifest["clamp"][1].get<double>()};
  std::istringstream rng_state(manifest.at("rng_state").get<std::string>());
  rng_state >> out.rng;
  ens.validate();
  return out;
}

}  // namespace dde
