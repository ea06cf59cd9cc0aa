#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dde/dataset.hpp"
#include "dde/mdp.hpp"
#include "dde/quantile.hpp"

namespace dde {

/// Raised when an empirical operator is asked about a pair with N(s,a) = 0.
class MissingDataError : public std::runtime_error {
 public:
  MissingDataError(StateId s, ActionId a)
      : std::runtime_error("no data for pair (s=" + std::to_string(s) + ",a=" + std::to_string(a) + ")"),
        s_(s), a_(a) {}
  StateId state() const { return s_; }
  ActionId action() const { return a_; }

 private:
  StateId s_;
  ActionId a_;
};

namespace detail {

inline void check_table_matches(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta) {
  if (eta.n_states() != mdp.n_states || eta.n_actions() != mdp.n_actions)
    throw std::invalid_argument("quantile table shape does not match the mdp");
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw std::invalid_argument("policy shape does not match the mdp");
}

/// E_R[(1/M) sum_m 1{R + gamma * atom_m <= z}] for one next pair.
inline double pushforward_cdf(const RewardDist& reward, std::span<const double> atoms, double gamma, double z) {
  double acc = 0.0;
  if (const auto* pm = std::get_if<PointMassMixture>(&reward)) {
    for (double atom : atoms)
      for (std::size_t i = 0; i < pm->values.size(); ++i)
        if (pm->values[i] + gamma * atom <= z) acc += pm->weights[i];
  } else {
    for (double atom : atoms) acc += reward_cdf(reward, z - gamma * atom);
  }
  return acc / static_cast<double>(atoms.size());
}

/// Leftmost x with cdf(x) >= tau on [lo, hi], by bisection to `tol`.
template <class Cdf>
double bisect_quantile(Cdf&& cdf, double tau, double lo, double hi, double tol = 1e-12) {
  if (cdf(lo) >= tau) return lo;
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (cdf(mid) >= tau) hi = mid;
    else lo = mid;
  }
  return hi;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact operator T^pi
// ---------------------------------------------------------------------------

/// F_{T eta (s,a)}(z), summing over s' and a' with the reward CDF in closed form.
inline double exact_bellman_cdf(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                ActionId a, double z) {
  detail::check_table_matches(mdp, pi, eta);
  const auto& reward = mdp.reward_at(s, a);
  double acc = 0.0;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2) {
    const double ps = mdp.p(s, a, s2);
    if (ps == 0.0) continue;
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      const double w = ps * pi(s2, a2);
      if (w == 0.0) continue;
      acc += w * detail::pushforward_cdf(reward, eta.row(s2, a2), mdp.gamma, z);
    }
  }
  return std::clamp(acc, 0.0, 1.0);
}

/// The target T eta (s,a) as a finite mixture; requires a point-mass reward at (s,a).
inline AtomMixture exact_bellman_atoms(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                       ActionId a) {
  detail::check_table_matches(mdp, pi, eta);
  const auto* pm = std::get_if<PointMassMixture>(&mdp.reward_at(s, a));
  if (pm == nullptr) throw std::domain_error("exact_bellman_atoms: continuous reward at (s,a)");
  const double inv_m = 1.0 / static_cast<double>(eta.n_atoms());
  AtomMixture out;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2) {
    const double ps = mdp.p(s, a, s2);
    if (ps == 0.0) continue;
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      const double w = ps * pi(s2, a2);
      if (w == 0.0) continue;
      for (double atom : eta.row(s2, a2))
        for (std::size_t i = 0; i < pm->values.size(); ++i) {
          if (pm->weights[i] <= 0.0) continue;
          out.values.push_back(pm->values[i] + mdp.gamma * atom);
          out.weights.push_back(w * pm->weights[i] * inv_m);
        }
    }
  }
  return out;
}

/// Smallest and largest value the target T eta (s,a) can take.
inline ReturnRange exact_bellman_support(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                         StateId s, ActionId a) {
  double zmin = kInfinity, zmax = -kInfinity;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2) {
    if (mdp.p(s, a, s2) == 0.0) continue;
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      if (pi(s2, a2) == 0.0) continue;
      const auto row = eta.row(s2, a2);
      zmin = std::min(zmin, row.front());
      zmax = std::max(zmax, row.back());
    }
  }
  const auto& r = mdp.reward_at(s, a);
  return {reward_support_lo(r) + mdp.gamma * zmin, reward_support_hi(r) + mdp.gamma * zmax};
}

/// F^{-1}_{T eta (s,a)}(tau); exact for point-mass rewards, bisection to 1e-12 otherwise.
inline double exact_bellman_quantile(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                     ActionId a, double tau) {
  if (is_point_mass(mdp.reward_at(s, a))) return inverse_cdf(exact_bellman_atoms(mdp, pi, eta, s, a), tau);
  const auto support = exact_bellman_support(mdp, pi, eta, s, a);
  return detail::bisect_quantile([&](double z) { return exact_bellman_cdf(mdp, pi, eta, s, a, z); }, tau,
                                 support.lo, support.hi);
}

/// Pi_{w1} T eta restricted to (s,a): target quantiles at the midpoints.
inline std::vector<double> exact_bellman_quantiles(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                                   StateId s, ActionId a) {
  if (is_point_mass(mdp.reward_at(s, a))) return midpoint_quantiles(exact_bellman_atoms(mdp, pi, eta, s, a), eta.n_atoms());
  return project_w1([&](double tau) { return exact_bellman_quantile(mdp, pi, eta, s, a, tau); }, eta.n_atoms());
}

// ---------------------------------------------------------------------------
// Empirical operator T^pi_D
// ---------------------------------------------------------------------------

namespace detail {

inline void check_dataset_matches(const OfflineDataset& ds, const Policy& pi, const QuantileTable& eta) {
  if (eta.n_states() != ds.n_states() || eta.n_actions() != ds.n_actions())
    throw std::invalid_argument("quantile table shape does not match the dataset");
  if (pi.n_states != ds.n_states() || pi.n_actions != ds.n_actions())
    throw std::invalid_argument("policy shape does not match the dataset");
}

}  // namespace detail

/// (1/N) sum over D(s,a) of sum_{a'} pi(a'|s') (1/M) sum_m 1{r + gamma Z(s',a',m) <= z}.
inline double empirical_bellman_cdf(const OfflineDataset& ds, const Policy& pi, const QuantileTable& eta,
                                    double gamma, StateId s, ActionId a, double z) {
  detail::check_dataset_matches(ds, pi, eta);
  const auto outcomes = ds.outcomes(s, a);
  if (outcomes.empty()) throw MissingDataError(s, a);
  double acc = 0.0;
  for (const auto& o : outcomes)
    for (ActionId a2 = 0; a2 < ds.n_actions(); ++a2) {
      const double w = pi(o.s_next, a2);
      if (w == 0.0) continue;
      std::size_t below = 0;
      for (double atom : eta.row(o.s_next, a2))
        if (o.r + gamma * atom <= z) ++below;
      acc += w * static_cast<double>(below) / static_cast<double>(eta.n_atoms());
    }
  return std::clamp(acc / static_cast<double>(outcomes.size()), 0.0, 1.0);
}

/// The empirical target at (s,a) as a weighted mixture with weights (1/N) pi(a'|s') (1/M).
inline AtomMixture empirical_bellman_atoms(const OfflineDataset& ds, const Policy& pi, const QuantileTable& eta,
                                           double gamma, StateId s, ActionId a) {
  detail::check_dataset_matches(ds, pi, eta);
  const auto outcomes = ds.outcomes(s, a);
  if (outcomes.empty()) throw MissingDataError(s, a);
  // Repeated (r, s') outcomes are merged into one weighted group.
  std::vector<Outcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Outcome& x, const Outcome& y) { return x.s_next != y.s_next ? x.s_next < y.s_next : x.r < y.r; });
  const double scale = 1.0 / (static_cast<double>(outcomes.size()) * static_cast<double>(eta.n_atoms()));
  AtomMixture out;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j].s_next == sorted[i].s_next && sorted[j].r == sorted[i].r) ++j;
    const auto& o = sorted[i];
    const double count = static_cast<double>(j - i);
    for (ActionId a2 = 0; a2 < ds.n_actions(); ++a2) {
      const double w = pi(o.s_next, a2);
      if (w == 0.0) continue;
      for (double atom : eta.row(o.s_next, a2)) {
        out.values.push_back(o.r + gamma * atom);
        out.weights.push_back(count * w * scale);
      }
    }
    i = j;
  }
  return out;
}

/// Pi_{w1} T_D eta restricted to (s,a).
inline std::vector<double> empirical_bellman_quantiles(const OfflineDataset& ds, const Policy& pi,
                                                       const QuantileTable& eta, double gamma, StateId s,
                                                       ActionId a) {
  return midpoint_quantiles(empirical_bellman_atoms(ds, pi, eta, gamma, s, a), eta.n_atoms());
}

}  // namespace dde
