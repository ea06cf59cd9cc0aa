#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dde/mdp.hpp"
#include "dde/random.hpp"

namespace dde {

struct StepSample {
  double r = 0.0;
  StateId s_next = 0;
};

/// Draws r ~ R(s,a) then s' ~ P(.|s,a).
inline StepSample sample_step(const FiniteMdp& mdp, StateId s, ActionId a, Rng& rng) {
  if (s >= mdp.n_states || a >= mdp.n_actions)
    throw std::out_of_range("sample_step: state or action out of range");
  StepSample out;
  out.r = sample_reward(mdp.reward_at(s, a), rng);
  out.s_next = sample_categorical(mdp.next_state_probs(s, a), rng);
  return out;
}

/// Smallest horizon H with gamma^H * max|r| / (1 - gamma) <= max_error.
inline std::size_t horizon_for_truncation(const FiniteMdp& mdp, double max_error) {
  if (!(max_error > 0.0)) throw std::invalid_argument("horizon_for_truncation: max_error must be positive");
  const double scale = mdp.max_abs_reward() / (1.0 - mdp.gamma);
  if (scale <= max_error) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(max_error / scale) / std::log(mdp.gamma)));
}

/// Upper bound on |Z - Z_truncated| for returns cut after `horizon` steps.
inline double truncation_bias_bound(const FiniteMdp& mdp, std::size_t horizon) {
  return std::pow(mdp.gamma, static_cast<double>(horizon)) * mdp.max_abs_reward() / (1.0 - mdp.gamma);
}

/// Samples of sum_{t < horizon} gamma^t r_t starting from (s, a), then following pi.
inline std::vector<double> monte_carlo_returns(const FiniteMdp& mdp, const Policy& pi, StateId s, ActionId a,
                                               std::size_t horizon, std::size_t n_rollouts, Rng& rng) {
  if (s >= mdp.n_states || a >= mdp.n_actions)
    throw std::out_of_range("monte_carlo_returns: state or action out of range");
  std::vector<double> out;
  out.reserve(n_rollouts);
  for (std::size_t k = 0; k < n_rollouts; ++k) {
    StateId state = s;
    ActionId action = a;
    double discount = 1.0;
    double total = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto step = sample_step(mdp, state, action, rng);
      total += discount * step.r;
      discount *= mdp.gamma;
      state = step.s_next;
      action = sample_categorical(pi.row(state), rng);
    }
    out.push_back(total);
  }
  return out;
}

}  // namespace dde
