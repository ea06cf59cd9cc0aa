#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "dde/bellman.hpp"
#include "dde/distortion.hpp"
#include "dde/mdp.hpp"
#include "dde/parallel.hpp"
#include "dde/quantile.hpp"
#include "dde/random.hpp"
#include "dde/simulation.hpp"

namespace dde {

struct TheoremReport {
  std::string name;
  double statistic = 0.0;
  double bound_or_target = 0.0;
  double tolerance = 0.0;
  std::size_t replicates = 0;
  bool passed = false;
  std::vector<std::pair<std::string, std::string>> details;

  void add(const std::string& key, double value) { details.emplace_back(key, detail::fmt_double(value)); }
  void add(const std::string& key, const std::string& value) { details.emplace_back(key, value); }

  const std::string& detail(const std::string& key) const {
    for (const auto& [k, v] : details)
      if (k == key) return v;
    throw std::out_of_range("TheoremReport: no detail named " + key);
  }
  double detail_value(const std::string& key) const { return std::stod(detail(key)); }
};

inline std::string to_text(const TheoremReport& r) {
  std::ostringstream os;
  os << r.name << ": " << (r.passed ? "PASS" : "FAIL") << "\n  statistic = " << detail::fmt_double(r.statistic)
     << "\n  bound_or_target = " << detail::fmt_double(r.bound_or_target)
     << "\n  tolerance = " << detail::fmt_double(r.tolerance) << "\n  replicates = " << r.replicates << '\n';
  for (const auto& [k, v] : r.details) os << "  " << k << " = " << v << '\n';
  return os.str();
}

inline void write_report_header(std::ostream& os) {
  os << "name,statistic,bound_or_target,tolerance,replicates,passed,details\n";
}

inline void write_report_row(std::ostream& os, const TheoremReport& r) {
  std::string details;
  for (const auto& [k, v] : r.details) details += (details.empty() ? "" : ";") + k + "=" + v;
  os << r.name << ',' << detail::fmt_double(r.statistic) << ',' << detail::fmt_double(r.bound_or_target) << ','
     << detail::fmt_double(r.tolerance) << ',' << r.replicates << ',' << (r.passed ? "true" : "false") << ",\""
     << details << "\"\n";
}

// ---------------------------------------------------------------------------
// Density, target quantile and the conditional CDF F~(z | r, s')
// ---------------------------------------------------------------------------

/// d/dz of exact_bellman_cdf: sum over (s',a',m) of p * pi * (1/M) * pdf_R(z - gamma Z).
inline double target_density(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s, ActionId a,
                             double z) {
  const auto& reward = mdp.reward_at(s, a);
  if (is_point_mass(reward)) throw std::domain_error("target_density: point-mass reward has no density");
  const auto support = exact_bellman_support(mdp, pi, eta, s, a);
  if (z < support.lo || z > support.hi) throw std::domain_error("target_density: z outside the target support");
  double acc = 0.0;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2) {
    const double ps = mdp.p(s, a, s2);
    if (ps == 0.0) continue;
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      const double w = ps * pi(s2, a2);
      if (w == 0.0) continue;
      double inner = 0.0;
      for (double atom : eta.row(s2, a2)) inner += reward_pdf(reward, z - mdp.gamma * atom);
      acc += w * inner / static_cast<double>(eta.n_atoms());
    }
  }
  return acc;
}

/// z_tau = F^{-1}(tau) of the exact target, by bisection on its CDF.
inline double target_quantile(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s, ActionId a,
                              double tau) {
  return exact_bellman_quantile(mdp, pi, eta, s, a, tau);
}

/// F~(z | r, s') = sum_{a'} pi(a'|s') (1/M) sum_m 1{r + gamma Z(s',a',m) <= z}.
inline double conditional_cdf(const Policy& pi, const QuantileTable& eta, double gamma, double r, StateId s_next,
                              double z) {
  double acc = 0.0;
  for (ActionId a2 = 0; a2 < pi.n_actions; ++a2) {
    const double w = pi(s_next, a2);
    if (w == 0.0) continue;
    std::size_t below = 0;
    for (double atom : eta.row(s_next, a2))
      if (r + gamma * atom <= z) ++below;
    acc += w * static_cast<double>(below) / static_cast<double>(eta.n_atoms());
  }
  return acc;
}

struct VarianceTerms {
  double z_tau = 0.0;
  double density = 0.0;
  /// V[F~(z_tau | R, S')].
  double numerator = 0.0;
  /// numerator / density^2.
  double sigma2 = 0.0;
  /// tau (1 - tau) / density^2.
  double upper = 0.0;
};

/// Exact V[F~(z_tau | R, S')]: for each s', F~ is a step function of r that
/// drops at the thresholds z - gamma Z(s',a',m); its moments are sums of reward
/// CDF increments between consecutive thresholds.
inline VarianceTerms variance_terms(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                    ActionId a, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("variance_terms: tau must lie in (0,1)");
  const auto& reward = mdp.reward_at(s, a);
  if (is_point_mass(reward)) throw std::domain_error("variance_terms: continuous reward required");
  VarianceTerms out;
  out.z_tau = target_quantile(mdp, pi, eta, s, a, tau);
  out.density = target_density(mdp, pi, eta, s, a, out.z_tau);
  double first = 0.0, second = 0.0;
  std::vector<std::pair<double, double>> thresholds;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2) {
    const double ps = mdp.p(s, a, s2);
    if (ps == 0.0) continue;
    thresholds.clear();
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      const double w = pi(s2, a2) / static_cast<double>(eta.n_atoms());
      if (w == 0.0) continue;
      for (double atom : eta.row(s2, a2)) thresholds.emplace_back(out.z_tau - mdp.gamma * atom, w);
    }
    std::sort(thresholds.begin(), thresholds.end());
    std::vector<double> tail(thresholds.size() + 1, 0.0);
    for (std::size_t k = thresholds.size(); k-- > 0;) tail[k] = tail[k + 1] + thresholds[k].second;
    double previous = 0.0;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const double cdf_k = reward_cdf(reward, thresholds[k].first);
      const double mass = cdf_k - previous;
      first += ps * mass * tail[k];
      second += ps * mass * tail[k] * tail[k];
      previous = cdf_k;
    }
  }
  out.numerator = std::max(0.0, second - first * first);
  // A constant F~ has zero variance even where the density vanishes.
  out.sigma2 = out.numerator == 0.0 ? 0.0 : out.numerator / (out.density * out.density);
  out.upper = out.density > 0.0 ? tau * (1.0 - tau) / (out.density * out.density) : kInfinity;
  return out;
}

inline double asymptotic_variance(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                  ActionId a, double tau) {
  return variance_terms(mdp, pi, eta, s, a, tau).sigma2;
}

struct VarianceLowerBound {
  double epsilon_prime = 0.0;
  double bound = 0.0;
  double z_bar = 0.0;
  double z_under = 0.0;
};

/// z_bar = max over every pair of the atoms with index m <= 2M/3, z_under = min
/// over the atoms with m > M/3 (one-based). Below z_tau - gamma z_bar the
/// conditional CDF is at least 2/3; above z_tau - gamma z_under it is at most
/// 1/3; eps' is the smaller of the two reward probabilities and the bound is
/// (eps' / 18) / f(z_tau)^2.
inline VarianceLowerBound variance_lower_bound(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                               double tau, StateId s, ActionId a) {
  const std::size_t M = eta.n_atoms();
  const std::size_t upper_index = (2 * M) / 3;  // number of atoms with m <= 2M/3
  const std::size_t lower_index = M / 3;        // zero-based index of the first atom with m > M/3
  VarianceLowerBound out;
  out.z_bar = -kInfinity;
  out.z_under = kInfinity;
  for (StateId s2 = 0; s2 < eta.n_states(); ++s2)
    for (ActionId a2 = 0; a2 < eta.n_actions(); ++a2) {
      const auto row = eta.row(s2, a2);
      if (upper_index > 0) out.z_bar = std::max(out.z_bar, row[upper_index - 1]);
      if (lower_index < M) out.z_under = std::min(out.z_under, row[lower_index]);
    }
  const auto terms = variance_terms(mdp, pi, eta, s, a, tau);
  const auto& reward = mdp.reward_at(s, a);
  const double low_tail = upper_index > 0 ? reward_cdf(reward, terms.z_tau - mdp.gamma * out.z_bar) : 0.0;
  const double high_tail = lower_index < M ? 1.0 - reward_cdf(reward, terms.z_tau - mdp.gamma * out.z_under) : 0.0;
  out.epsilon_prime = std::max(0.0, std::min(low_tail, high_tail));
  out.bound = out.epsilon_prime > 0.0 ? out.epsilon_prime / 18.0 / (terms.density * terms.density) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Asymptotic normality of the empirical quantile
// ---------------------------------------------------------------------------

namespace detail {

/// Quantiles of the empirical target built from N fresh (r, s') draws at (s,a),
/// one value per requested level.
inline std::vector<double> empirical_target_quantiles(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                                      StateId s, ActionId a, std::size_t n,
                                                      const std::vector<double>& taus, Rng& rng) {
  std::vector<double> values, weights;
  values.reserve(n * eta.n_atoms());
  weights.reserve(n * eta.n_atoms());
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(eta.n_atoms()));
  for (std::size_t k = 0; k < n; ++k) {
    const auto step = sample_step(mdp, s, a, rng);
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2) {
      const double w = pi(step.s_next, a2);
      if (w == 0.0) continue;
      for (double atom : eta.row(step.s_next, a2)) {
        values.push_back(step.r + mdp.gamma * atom);
        weights.push_back(w * scale);
      }
    }
  }
  std::vector<double> out;
  out.reserve(taus.size());
  for (double tau : taus) out.push_back(mixture_quantile(values, weights, tau));
  return out;
}

inline double sample_mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_variance(const std::vector<double>& x) {
  const double m = sample_mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

}  // namespace detail

struct CltConfig {
  std::vector<double> taus{0.1, 0.5, 0.9};
  std::size_t n = 4096;
  std::size_t replicates = 5000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Accepted band for empirical variance / sigma~^2.
  double ratio_tolerance = 0.1;
  /// Empirical variance may exceed tau (1 - tau) / f^2 by this factor.
  double upper_factor = 1.1;
};

/// One report per level: sqrt(N) (F^-1_hat - F^-1) across replicates compared
/// with N(0, sigma~^2). Passing needs the variance ratio inside the band, the
/// variance under the upper bound, and over the lower bound when eps' > 0.
inline std::vector<TheoremReport> clt_experiment(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                                 StateId s, ActionId a, const CltConfig& cfg) {
  if (cfg.replicates < 2 || cfg.n == 0) throw std::invalid_argument("clt_experiment: need N >= 1 and 2+ replicates");
  std::vector<std::vector<double>> estimates(cfg.replicates);
  parallel_for(cfg.replicates, cfg.jobs, [&](std::size_t k) {
    Rng rng(derive_seed(cfg.seed, role::replicate, k + 1));
    estimates[k] = detail::empirical_target_quantiles(mdp, pi, eta, s, a, cfg.n, cfg.taus, rng);
  });
  std::vector<TheoremReport> reports;
  const double root_n = std::sqrt(static_cast<double>(cfg.n));
  for (std::size_t t = 0; t < cfg.taus.size(); ++t) {
    const double tau = cfg.taus[t];
    const auto terms = variance_terms(mdp, pi, eta, s, a, tau);
    const auto lower = variance_lower_bound(mdp, pi, eta, tau, s, a);
    std::vector<double> err(cfg.replicates);
    for (std::size_t k = 0; k < cfg.replicates; ++k) err[k] = root_n * (estimates[k][t] - terms.z_tau);
    const double mean = detail::sample_mean(err);
    const double var = detail::sample_variance(err);
    const double sigma = std::sqrt(terms.sigma2);
    std::sort(err.begin(), err.end());
    const boost::math::normal_distribution<double> gauss(0.0, sigma > 0.0 ? sigma : 1.0);
    double qq = 0.0;
    for (std::size_t k = 0; k < err.size(); ++k) {
      const double level = (static_cast<double>(k) + 0.5) / static_cast<double>(err.size());
      qq = std::max(qq, std::abs(err[k] - boost::math::quantile(gauss, level)));
    }
    const double ratio = var / terms.sigma2;
    const bool ratio_ok = std::abs(ratio - 1.0) <= cfg.ratio_tolerance;
    const bool upper_ok = var <= cfg.upper_factor * terms.upper;
    const bool lower_ok = lower.epsilon_prime <= 0.0 || lower.bound <= var;
    const bool mean_ok = std::abs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(cfg.replicates));

    TheoremReport r;
    char name[64];
    std::snprintf(name, sizeof name, "clt_variance_tau_%g", tau);
    r.name = name;
    r.statistic = ratio;
    r.bound_or_target = 1.0;
    r.tolerance = cfg.ratio_tolerance;
    r.replicates = cfg.replicates;
    r.passed = ratio_ok && upper_ok && lower_ok;
    r.add("tau", tau);
    r.add("N", static_cast<double>(cfg.n));
    r.add("z_tau", terms.z_tau);
    r.add("density", terms.density);
    r.add("sigma2", terms.sigma2);
    r.add("empirical_variance", var);
    r.add("upper_bound", terms.upper);
    r.add("upper_ok", upper_ok ? "true" : "false");
    r.add("epsilon_prime", lower.epsilon_prime);
    r.add("lower_bound", lower.bound);
    r.add("lower_ok", lower_ok ? "true" : "false");
    r.add("mean", mean);
    r.add("mean_ok", mean_ok ? "true" : "false");
    r.add("qq_max_deviation_over_sigma", sigma > 0.0 ? qq / sigma : qq);
    reports.push_back(std::move(r));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Point-wise concentration
// ---------------------------------------------------------------------------

/// Delta = (1/f) sqrt(log(2 |S| |A| / delta) / (2 N)).
inline double concentration_delta(double f_at_z, std::size_t n, std::size_t n_states, std::size_t n_actions,
                                  double delta) {
  if (!(f_at_z > 0.0)) throw std::domain_error("concentration_delta: density must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::domain_error("concentration_delta: delta outside (0,1)");
  if (n == 0) throw std::domain_error("concentration_delta: N must be positive");
  const double pairs = static_cast<double>(n_states * n_actions);
  return std::sqrt(std::log(2.0 * pairs / delta) / (2.0 * static_cast<double>(n))) / f_at_z;
}

/// Max absolute slope of the target density over `grid` interior points of its
/// support, times a 1.05 safety factor.
inline double density_lipschitz(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s,
                                ActionId a, std::size_t grid = 10000) {
  const auto support = exact_bellman_support(mdp, pi, eta, s, a);
  const double h = support.width() / static_cast<double>(grid);
  double slope = 0.0;
  double prev = target_density(mdp, pi, eta, s, a, support.lo + 0.5 * h);
  for (std::size_t i = 1; i < grid; ++i) {
    const double cur = target_density(mdp, pi, eta, s, a, support.lo + (static_cast<double>(i) + 0.5) * h);
    slope = std::max(slope, std::abs(cur - prev) / h);
    prev = cur;
  }
  return 1.05 * slope;
}

struct ConcentrationConfig {
  double tau = 0.5;
  std::size_t n = 1000;
  double delta = 0.1;
  std::size_t replicates = 1000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// A replicate draws N tuples at every pair and violates when some pair has
/// |F^-1_hat(tau) - F^-1(tau)| >= 2 Delta. Passes when the violation frequency
/// is at most delta + 2 sqrt(delta (1 - delta) / replicates).
inline TheoremReport concentration_experiment(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta,
                                              const ConcentrationConfig& cfg) {
  const std::size_t nS = mdp.n_states, nA = mdp.n_actions;
  std::vector<double> z_tau(nS * nA), band(nS * nA);
  double alpha = 0.0, required_n = 0.0;
  const double log_term = std::log(2.0 * static_cast<double>(nS * nA) / cfg.delta);
  for (StateId s = 0; s < nS; ++s)
    for (ActionId a = 0; a < nA; ++a) {
      const std::size_t p = s * nA + a;
      z_tau[p] = target_quantile(mdp, pi, eta, s, a, cfg.tau);
      const double f = target_density(mdp, pi, eta, s, a, z_tau[p]);
      band[p] = 2.0 * concentration_delta(f, cfg.n, nS, nA, cfg.delta);
      const double lip = density_lipschitz(mdp, pi, eta, s, a);
      alpha = std::max(alpha, lip);
      required_n = std::max(required_n, 2.0 * lip * lip / std::pow(f, 4) * log_term);
    }
  std::vector<char> violated(cfg.replicates, 0);
  std::vector<double> worst(cfg.replicates, 0.0);
  parallel_for(cfg.replicates, cfg.jobs, [&](std::size_t k) {
    Rng rng(derive_seed(cfg.seed, role::replicate, k + 1));
    for (StateId s = 0; s < nS; ++s)
      for (ActionId a = 0; a < nA; ++a) {
        const std::size_t p = s * nA + a;
        const double q = detail::empirical_target_quantiles(mdp, pi, eta, s, a, cfg.n, {cfg.tau}, rng)[0];
        const double ratio = std::abs(q - z_tau[p]) / band[p];
        worst[k] = std::max(worst[k], ratio);
        if (ratio >= 1.0) violated[k] = 1;
      }
  });
  const double freq = static_cast<double>(std::count(violated.begin(), violated.end(), 1)) /
                      static_cast<double>(cfg.replicates);
  TheoremReport r;
  r.name = "concentration";
  r.statistic = freq;
  r.bound_or_target = cfg.delta + 2.0 * std::sqrt(cfg.delta * (1.0 - cfg.delta) / static_cast<double>(cfg.replicates));
  r.tolerance = r.bound_or_target - cfg.delta;
  r.replicates = cfg.replicates;
  r.passed = freq <= r.bound_or_target;
  r.add("tau", cfg.tau);
  r.add("N", static_cast<double>(cfg.n));
  r.add("delta", cfg.delta);
  r.add("lipschitz_alpha", alpha);
  r.add("required_N", required_n);
  r.add("hypothesis_met", static_cast<double>(cfg.n) >= required_n ? "true" : "false");
  r.add("max_error_over_2delta", *std::max_element(worst.begin(), worst.end()));
  return r;
}

// ---------------------------------------------------------------------------
// Fixed-point checks
// ---------------------------------------------------------------------------

/// Fixed points of the undistorted and distorted projected operators at
/// phi's M; every distorted atom must sit inside the sandwich widened by
/// tol + 2 * range / M.
inline TheoremReport sandwich_check(const FiniteMdp& mdp, const Policy& pi, const DistortionTable& phi, double tol) {
  const TableShape shape = phi.shape();
  if (shape.n_atoms < 64) throw std::invalid_argument("sandwich_check: M must be at least 64");
  if (shape.n_states != mdp.n_states || shape.n_actions != mdp.n_actions)
    throw std::invalid_argument("sandwich_check: phi shape does not match the mdp");
  const auto source = model_source(mdp);
  const double iter_tol = std::min(tol * (1.0 - mdp.gamma), 1e-9);
  const std::size_t budget = default_max_iterations(iter_tol, mdp.gamma);
  const DistortionTable zero(shape);
  auto [f_inf, plain] = iterate_fixed_point([&](const QuantileTable& q) { return dde_step(source, pi, q, zero); },
                                            QuantileTable(shape), iter_tol, budget);
  auto [f_low, distorted] = iterate_fixed_point([&](const QuantileTable& q) { return dde_step(source, pi, q, phi); },
                                                QuantileTable(shape), iter_tol, budget);
  if (!plain.converged || !distorted.converged) throw std::runtime_error("sandwich_check: fixed point did not converge");
  const auto bounds = sandwich_bounds(f_inf, phi, mdp.gamma);
  const double slack = tol + 2.0 * mdp.return_range().width() / static_cast<double>(shape.n_atoms);
  double worst = -kInfinity;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const double below = bounds.lower.atoms()[i] - slack - f_low.atoms()[i];
    const double above = f_low.atoms()[i] - bounds.upper.atoms()[i] - slack;
    worst = std::max({worst, below, above});
    if (below > 0.0 || above > 0.0) ++failures;
  }
  TheoremReport r;
  r.name = "sandwich";
  r.statistic = worst;
  r.bound_or_target = 0.0;
  r.tolerance = slack;
  r.replicates = shape.size();
  r.passed = failures == 0;
  r.add("M", static_cast<double>(shape.n_atoms));
  r.add("phi_max", phi.max());
  r.add("phi_min", phi.min());
  r.add("violations", static_cast<double>(failures));
  r.add("iterations_plain", static_cast<double>(plain.iterations));
  r.add("iterations_distorted", static_cast<double>(distorted.iterations));
  return r;
}

/// Random table with every atom uniform on [lo, hi].
inline QuantileTable random_table(TableShape shape, double lo, double hi, Rng& rng) {
  std::vector<double> atoms(shape.size());
  for (double& x : atoms) x = uniform(rng, lo, hi);
  return QuantileTable(shape, std::move(atoms));
}

/// Largest bar w_inf ratio of Pi Q_phi T over random table pairs, each pair
/// with its own random phi in [0, phi_max].
inline TheoremReport contraction_check(const FiniteMdp& mdp, const Policy& pi, std::size_t n_atoms, std::size_t pairs,
                                       double phi_max, Rng& rng) {
  const TableShape shape{mdp.n_states, mdp.n_actions, n_atoms};
  const auto range = mdp.return_range();
  const auto source = model_source(mdp);
  double worst = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    std::vector<double> values(shape.size());
    for (double& v : values) v = uniform(rng, 0.0, phi_max);
    const DistortionTable phi(shape, std::move(values));
    const auto mu = random_table(shape, range.lo, range.hi, rng);
    const auto nu = random_table(shape, range.lo, range.hi, rng);
    worst = std::max(worst,
                     contraction_ratio([&](const QuantileTable& q) { return dde_step(source, pi, q, phi); }, mu, nu,
                                       kInfinity));
  }
  TheoremReport r;
  r.name = "contraction";
  r.statistic = worst;
  r.bound_or_target = mdp.gamma;
  r.tolerance = 1e-12;
  r.replicates = pairs;
  r.passed = worst <= mdp.gamma + 1e-12;
  r.add("M", static_cast<double>(n_atoms));
  return r;
}

/// DDE fixed point with phi = 0 against Monte-Carlo returns at every pair:
/// w1 within 2 range / M + 3 standard errors of the return mean + truncation bias.
inline TheoremReport oracle_check(const FiniteMdp& mdp, const Policy& pi, std::size_t n_atoms, std::size_t rollouts,
                                  double truncation, std::uint64_t seed, std::size_t jobs = 1) {
  const TableShape shape{mdp.n_states, mdp.n_actions, n_atoms};
  const auto source = model_source(mdp);
  const double tol = 1e-10;
  auto [fixed, report] = iterate_fixed_point([&](const QuantileTable& q) { return projected_bellman_step(source, pi, q); },
                                             QuantileTable(shape), tol, default_max_iterations(tol, mdp.gamma));
  const std::size_t horizon = horizon_for_truncation(mdp, truncation);
  const double bias = truncation_bias_bound(mdp, horizon);
  const double range = mdp.return_range().width();
  std::vector<double> excess(shape.pairs());
  parallel_for(shape.pairs(), jobs, [&](std::size_t p) {
    const StateId s = p / shape.n_actions;
    const ActionId a = p % shape.n_actions;
    Rng rng(derive_seed(seed, role::theory, p + 1));
    const auto samples = monte_carlo_returns(mdp, pi, s, a, horizon, rollouts, rng);
    const double mean = detail::sample_mean(samples);
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / static_cast<double>(samples.size() - 1) / static_cast<double>(samples.size()));
    const double allowed = 2.0 * range / static_cast<double>(n_atoms) + 3.0 * se + bias;
    excess[p] = wasserstein(fixed.row(s, a), std::span<const double>(samples), 1.0) - allowed;
  });
  TheoremReport r;
  r.name = "oracle_equivalence";
  r.statistic = *std::max_element(excess.begin(), excess.end());
  r.bound_or_target = 0.0;
  r.tolerance = 2.0 * range / static_cast<double>(n_atoms);
  r.replicates = rollouts;
  r.passed = report.converged && r.statistic <= 0.0;
  r.add("horizon", static_cast<double>(horizon));
  r.add("fixed_point_iterations", static_cast<double>(report.iterations));
  return r;
}

/// Exact projected fixed point of the undistorted operator on the model.
inline QuantileTable exact_fixed_point(const FiniteMdp& mdp, const Policy& pi, std::size_t n_atoms, double tol = 1e-12) {
  const auto source = model_source(mdp);
  const TableShape shape{mdp.n_states, mdp.n_actions, n_atoms};
  auto [fixed, report] = iterate_fixed_point([&](const QuantileTable& q) { return projected_bellman_step(source, pi, q); },
                                             QuantileTable(shape), tol, default_max_iterations(tol, mdp.gamma));
  if (!report.converged) throw std::runtime_error("exact_fixed_point: did not converge");
  return fixed;
}

}  // namespace dde
