#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "dde/random.hpp"

namespace dde {

using StateId = std::size_t;
using ActionId = std::size_t;

/// Tolerance for "sums to one" invariants on probability tables.
inline constexpr double kProbabilityTolerance = 1e-12;

// ---------------------------------------------------------------------------
// Reward distributions
// ---------------------------------------------------------------------------

struct PointMassMixture {
  std::vector<double> values;
  std::vector<double> weights;
};

struct UniformReward {
  double lo = 0.0;
  double hi = 1.0;
};

/// Gaussian restricted to [lo, hi] and renormalised.
struct TruncatedGaussian {
  double mean = 0.0;
  double std = 1.0;
  double lo = -1.0;
  double hi = 1.0;
};

using RewardDist = std::variant<PointMassMixture, UniformReward, TruncatedGaussian>;

inline RewardDist point_mass(double value) { return PointMassMixture{{value}, {1.0}}; }

inline bool is_point_mass(const RewardDist& r) {
  return std::holds_alternative<PointMassMixture>(r);
}

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double truncation_mass(const TruncatedGaussian& g) {
  return std_normal_cdf((g.hi - g.mean) / g.std) - std_normal_cdf((g.lo - g.mean) / g.std);
}

template <class>
inline constexpr bool always_false = false;

}  // namespace detail

inline double reward_support_lo(const RewardDist& r) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          double lo = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < d.values.size(); ++i)
            if (d.weights[i] > 0.0) lo = std::min(lo, d.values[i]);
          return lo;
        } else {
          return d.lo;
        }
      },
      r);
}

inline double reward_support_hi(const RewardDist& r) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          double hi = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < d.values.size(); ++i)
            if (d.weights[i] > 0.0) hi = std::max(hi, d.values[i]);
          return hi;
        } else {
          return d.hi;
        }
      },
      r);
}

/// P(R <= x).
inline double reward_cdf(const RewardDist& r, double x) {
  return std::visit(
      [x](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          double acc = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i)
            if (d.values[i] <= x) acc += d.weights[i];
          return std::min(acc, 1.0);
        } else if constexpr (std::is_same_v<T, UniformReward>) {
          if (x <= d.lo) return 0.0;
          if (x >= d.hi) return 1.0;
          return (x - d.lo) / (d.hi - d.lo);
        } else if constexpr (std::is_same_v<T, TruncatedGaussian>) {
          if (x <= d.lo) return 0.0;
          if (x >= d.hi) return 1.0;
          const double a = detail::std_normal_cdf((d.lo - d.mean) / d.std);
          const double v = (detail::std_normal_cdf((x - d.mean) / d.std) - a) / detail::truncation_mass(d);
          return std::clamp(v, 0.0, 1.0);
        } else {
          static_assert(detail::always_false<T>);
        }
      },
      r);
}

/// Density on the closed support; throws for point-mass mixtures.
inline double reward_pdf(const RewardDist& r, double x) {
  return std::visit(
      [x](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          throw std::domain_error("reward_pdf: density undefined for a point-mass reward");
        } else if constexpr (std::is_same_v<T, UniformReward>) {
          return (x < d.lo || x > d.hi) ? 0.0 : 1.0 / (d.hi - d.lo);
        } else if constexpr (std::is_same_v<T, TruncatedGaussian>) {
          if (x < d.lo || x > d.hi) return 0.0;
          return detail::std_normal_pdf((x - d.mean) / d.std) / (d.std * detail::truncation_mass(d));
        } else {
          static_assert(detail::always_false<T>);
        }
      },
      r);
}

/// F^{-1}(tau) = inf{x : tau <= F(x)}.
inline double reward_quantile(const RewardDist& r, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("reward_quantile: tau outside [0,1]");
  return std::visit(
      [tau](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          std::vector<std::size_t> order(d.values.size());
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::sort(order.begin(), order.end(),
                    [&](std::size_t i, std::size_t j) { return d.values[i] < d.values[j]; });
          double acc = 0.0;
          double last = d.values[order.front()];
          for (std::size_t i : order) {
            if (d.weights[i] <= 0.0) continue;
            acc += d.weights[i];
            last = d.values[i];
            if (acc >= tau - kProbabilityTolerance) return d.values[i];
          }
          return last;
        } else if constexpr (std::is_same_v<T, UniformReward>) {
          return d.lo + tau * (d.hi - d.lo);
        } else if constexpr (std::is_same_v<T, TruncatedGaussian>) {
          if (tau <= 0.0) return d.lo;
          if (tau >= 1.0) return d.hi;
          const double a = detail::std_normal_cdf((d.lo - d.mean) / d.std);
          const double p = std::clamp(a + tau * detail::truncation_mass(d), 1e-300, 1.0 - 1e-16);
          const boost::math::normal_distribution<double> n(d.mean, d.std);
          return std::clamp(boost::math::quantile(n, p), d.lo, d.hi);
        } else {
          static_assert(detail::always_false<T>);
        }
      },
      r);
}

inline double reward_mean(const RewardDist& r) {
  return std::visit(
      [](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          double m = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i) m += d.values[i] * d.weights[i];
          return m;
        } else if constexpr (std::is_same_v<T, UniformReward>) {
          return 0.5 * (d.lo + d.hi);
        } else if constexpr (std::is_same_v<T, TruncatedGaussian>) {
          const double a = (d.lo - d.mean) / d.std;
          const double b = (d.hi - d.mean) / d.std;
          return d.mean + d.std * (detail::std_normal_pdf(a) - detail::std_normal_pdf(b)) /
                              detail::truncation_mass(d);
        } else {
          static_assert(detail::always_false<T>);
        }
      },
      r);
}

inline double sample_reward(const RewardDist& r, Rng& rng) {
  return std::visit(
      [&rng](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          return d.values[sample_categorical(d.weights, rng)];
        } else if constexpr (std::is_same_v<T, UniformReward>) {
          return uniform(rng, d.lo, d.hi);
        } else if constexpr (std::is_same_v<T, TruncatedGaussian>) {
          return reward_quantile(d, uniform01(rng));
        } else {
          static_assert(detail::always_false<T>);
        }
      },
      r);
}

// ---------------------------------------------------------------------------
// Finite MDP and policies
// ---------------------------------------------------------------------------

struct ReturnRange {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// Finite MDP (S, A, P, R, rho0, gamma). Immutable after construction by
/// convention; validate_mdp checks every invariant.
struct FiniteMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  /// P(s'|s,a) at [(s * n_actions + a) * n_states + s'].
  std::vector<double> transition;
  /// R(s,a) at [s * n_actions + a].
  std::vector<RewardDist> reward;
  double gamma = 0.9;
  std::vector<double> rho0;

  std::size_t pair_index(StateId s, ActionId a) const { return s * n_actions + a; }

  std::span<const double> next_state_probs(StateId s, ActionId a) const {
    return {transition.data() + pair_index(s, a) * n_states, n_states};
  }
  double p(StateId s, ActionId a, StateId s_next) const {
    return transition[pair_index(s, a) * n_states + s_next];
  }
  const RewardDist& reward_at(StateId s, ActionId a) const { return reward[pair_index(s, a)]; }

  /// Smallest lower and largest upper reward-support bound over all pairs.
  ReturnRange reward_bounds() const {
    ReturnRange b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& r : reward) {
      b.lo = std::min(b.lo, reward_support_lo(r));
      b.hi = std::max(b.hi, reward_support_hi(r));
    }
    return b;
  }

  /// Every discounted return lies in [r_lo / (1 - gamma), r_hi / (1 - gamma)].
  ReturnRange return_range() const {
    const auto b = reward_bounds();
    return {b.lo / (1.0 - gamma), b.hi / (1.0 - gamma)};
  }

  double max_abs_reward() const {
    const auto b = reward_bounds();
    return std::max(std::abs(b.lo), std::abs(b.hi));
  }

  bool all_point_mass() const {
    return std::all_of(reward.begin(), reward.end(), [](const auto& r) { return is_point_mass(r); });
  }
  bool all_continuous() const {
    return std::none_of(reward.begin(), reward.end(), [](const auto& r) { return is_point_mass(r); });
  }
};

/// Stochastic policy pi(a|s) stored row-major.
struct Policy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;

  double operator()(StateId s, ActionId a) const { return probs[s * n_actions + a]; }
  std::span<const double> row(StateId s) const { return {probs.data() + s * n_actions, n_actions}; }

  static Policy uniform(std::size_t n_states, std::size_t n_actions) {
    return {n_states, n_actions,
            std::vector<double>(n_states * n_actions, 1.0 / static_cast<double>(n_actions))};
  }

  static Policy deterministic(std::span<const ActionId> actions, std::size_t n_actions) {
    Policy p{actions.size(), n_actions, std::vector<double>(actions.size() * n_actions, 0.0)};
    for (std::size_t s = 0; s < actions.size(); ++s) p.probs[s * n_actions + actions[s]] = 1.0;
    return p;
  }

  bool operator==(const Policy&) const = default;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_reward(const RewardDist& r, std::size_t s, std::size_t a) {
  const auto where = [&] {
    return " at (s=" + std::to_string(s) + ",a=" + std::to_string(a) + ")";
  };
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, PointMassMixture>) {
          if (d.values.empty() || d.values.size() != d.weights.size())
            throw std::invalid_argument("reward mixture malformed" + where());
          double sum = 0.0;
          for (std::size_t i = 0; i < d.values.size(); ++i) {
            if (!std::isfinite(d.values[i]))
              throw std::invalid_argument("reward support unbounded" + where());
            if (d.weights[i] < 0.0)
              throw std::invalid_argument("reward weight negative" + where() + ": " + fmt_double(d.weights[i]));
            sum += d.weights[i];
          }
          if (std::abs(sum - 1.0) > kProbabilityTolerance)
            throw std::invalid_argument("reward weights not normalised" + where() +
                                        ": violation " + fmt_double(std::abs(sum - 1.0)));
        } else {
          if (!std::isfinite(d.lo) || !std::isfinite(d.hi))
            throw std::invalid_argument("reward support unbounded" + where());
          if (!(d.lo < d.hi)) throw std::invalid_argument("reward support empty (lo >= hi)" + where());
          if constexpr (std::is_same_v<T, TruncatedGaussian>) {
            if (!(d.std > 0.0)) throw std::invalid_argument("reward std not positive" + where());
            if (!(truncation_mass(d) > 0.0))
              throw std::invalid_argument("reward truncation has no mass" + where());
          }
        }
      },
      r);
}

}  // namespace detail

/// Throws std::invalid_argument naming the first violated invariant.
inline void validate_mdp(const FiniteMdp& mdp) {
  const std::size_t nS = mdp.n_states, nA = mdp.n_actions;
  if (nS == 0 || nA == 0) throw std::invalid_argument("mdp has no states or actions");
  if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0))
    throw std::invalid_argument("gamma out of range: " + detail::fmt_double(mdp.gamma));
  if (mdp.transition.size() != nS * nA * nS)
    throw std::invalid_argument("transition table has wrong size");
  if (mdp.reward.size() != nS * nA) throw std::invalid_argument("reward table has wrong size");
  for (StateId s = 0; s < nS; ++s) {
    for (ActionId a = 0; a < nA; ++a) {
      const auto row = mdp.next_state_probs(s, a);
      double sum = 0.0;
      for (StateId s2 = 0; s2 < nS; ++s2) {
        if (!(row[s2] >= 0.0))
          throw std::invalid_argument("transition entry negative at (s=" + std::to_string(s) +
                                      ",a=" + std::to_string(a) + ",s'=" + std::to_string(s2) +
                                      "): " + detail::fmt_double(row[s2]));
        sum += row[s2];
      }
      if (std::abs(sum - 1.0) > kProbabilityTolerance)
        throw std::invalid_argument("transition row not stochastic at (s=" + std::to_string(s) +
                                    ",a=" + std::to_string(a) + "): sum " + detail::fmt_double(sum) +
                                    ", violation " + detail::fmt_double(std::abs(sum - 1.0)));
      detail::check_reward(mdp.reward_at(s, a), s, a);
    }
  }
  if (mdp.rho0.size() != nS) throw std::invalid_argument("rho0 has wrong size");
  double sum = 0.0;
  for (StateId s = 0; s < nS; ++s) {
    if (!(mdp.rho0[s] >= 0.0))
      throw std::invalid_argument("rho0 entry negative at s=" + std::to_string(s));
    sum += mdp.rho0[s];
  }
  if (std::abs(sum - 1.0) > kProbabilityTolerance)
    throw std::invalid_argument("rho0 not normalised: violation " + detail::fmt_double(std::abs(sum - 1.0)));
}

inline void validate_policy(const Policy& pi, std::size_t n_states, std::size_t n_actions) {
  if (pi.n_states != n_states || pi.n_actions != n_actions || pi.probs.size() != n_states * n_actions)
    throw std::invalid_argument("policy shape does not match the mdp");
  for (StateId s = 0; s < n_states; ++s) {
    double sum = 0.0;
    for (ActionId a = 0; a < n_actions; ++a) {
      if (!(pi(s, a) >= 0.0))
        throw std::invalid_argument("policy entry negative at (s=" + std::to_string(s) + ",a=" +
                                    std::to_string(a) + ")");
      sum += pi(s, a);
    }
    if (std::abs(sum - 1.0) > kProbabilityTolerance)
      throw std::invalid_argument("policy row not stochastic at s=" + std::to_string(s) +
                                  ": violation " + detail::fmt_double(std::abs(sum - 1.0)));
  }
}

/// Canonical text form; every number printed at 17 significant digits.
inline std::string canonical_text(const FiniteMdp& mdp) {
  std::ostringstream os;
  os << "nS=" << mdp.n_states << ";nA=" << mdp.n_actions << ";gamma=" << detail::fmt_double(mdp.gamma)
     << ";P=";
  for (double p : mdp.transition) os << detail::fmt_double(p) << ',';
  os << ";R=";
  for (const auto& r : mdp.reward) {
    std::visit(
        [&os](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, PointMassMixture>) {
            os << "pm(";
            for (std::size_t i = 0; i < d.values.size(); ++i)
              os << detail::fmt_double(d.values[i]) << ':' << detail::fmt_double(d.weights[i]) << ' ';
            os << ')';
          } else if constexpr (std::is_same_v<T, UniformReward>) {
            os << "u(" << detail::fmt_double(d.lo) << ' ' << detail::fmt_double(d.hi) << ')';
          } else {
            os << "tg(" << detail::fmt_double(d.mean) << ' ' << detail::fmt_double(d.std) << ' '
               << detail::fmt_double(d.lo) << ' ' << detail::fmt_double(d.hi) << ')';
          }
        },
        r);
  }
  os << ";rho0=";
  for (double p : mdp.rho0) os << detail::fmt_double(p) << ',';
  return os.str();
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string mdp_hash(const FiniteMdp& mdp) { return to_hex(fnv1a64(canonical_text(mdp))); }

}  // namespace dde
