#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dde/mdp.hpp"
#include "dde/random.hpp"

namespace dde {

/// Single state and action, Uniform(0,1) reward, gamma = 0.5. Every quantity
/// used by the statistical checks has a closed form here.
inline FiniteMdp reference_mdp() {
  FiniteMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.transition = {1.0};
  mdp.reward = {UniformReward{0.0, 1.0}};
  mdp.gamma = 0.5;
  mdp.rho0 = {1.0};
  return mdp;
}

struct ChainSpec {
  std::size_t n_states = 10;
  double gamma = 0.9;
  /// Action 0: deterministic reward, steps back towards state 0.
  double safe_reward = 0.1;
  /// Action 1: moves right with this probability, otherwise stays.
  double advance_prob = 0.8;
  /// Action 1 reward: 0 with the bulk of the mass, -tail_loss or +tail_gain in the tails.
  double tail_prob = 0.05;
  double tail_loss = 3.0;
  double tail_gain = 3.0;
  /// Reward of action 1 at the last state, where it also stays put.
  double goal_reward = 1.0;
};

/// Chain on states 0..n-1 starting at 0. Action 0 is safe and retreats;
/// action 1 advances under a heavy-tailed reward and pays off at the end.
inline FiniteMdp chain_mdp(const ChainSpec& spec) {
  if (spec.n_states < 2) throw std::invalid_argument("chain_mdp: need at least two states");
  const std::size_t n = spec.n_states;
  FiniteMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 2;
  mdp.gamma = spec.gamma;
  mdp.transition.assign(n * 2 * n, 0.0);
  mdp.reward.resize(n * 2);
  mdp.rho0.assign(n, 0.0);
  mdp.rho0[0] = 1.0;
  const double bulk = 1.0 - 2.0 * spec.tail_prob;
  for (StateId s = 0; s < n; ++s) {
    const StateId back = s == 0 ? 0 : s - 1;
    mdp.transition[(s * 2 + 0) * n + back] = 1.0;
    mdp.reward[s * 2 + 0] = point_mass(spec.safe_reward);
    if (s + 1 < n) {
      mdp.transition[(s * 2 + 1) * n + s + 1] = spec.advance_prob;
      mdp.transition[(s * 2 + 1) * n + s] += 1.0 - spec.advance_prob;
      mdp.reward[s * 2 + 1] = PointMassMixture{{-spec.tail_loss, 0.0, spec.tail_gain}, {spec.tail_prob, bulk, spec.tail_prob}};
    } else {
      mdp.transition[(s * 2 + 1) * n + s] = 1.0;
      mdp.reward[s * 2 + 1] = PointMassMixture{{spec.goal_reward - spec.tail_loss, spec.goal_reward,
                                                spec.goal_reward + spec.tail_gain},
                                               {spec.tail_prob, bulk, spec.tail_prob}};
    }
  }
  return mdp;
}

struct GridSpec {
  std::size_t width = 5;
  std::size_t height = 3;
  bool cliff = true;
  double gamma = 0.9;
  double step_reward = -0.1;
  double cliff_reward = -5.0;
  double goal_reward = 1.0;
  /// Probability that the move goes in a uniformly random direction instead.
  double slip = 0.1;
};

/// Gridworld with actions up, down, left, right. Start is the bottom-left cell,
/// the goal the bottom-right cell (absorbing, zero reward afterwards). With
/// `cliff`, the bottom cells between them send the agent back to the start.
inline FiniteMdp gridworld_mdp(const GridSpec& spec) {
  if (spec.width < 2 || spec.height < 1) throw std::invalid_argument("gridworld_mdp: grid too small");
  const std::size_t w = spec.width, h = spec.height, n = w * h;
  const auto cell = [w](std::size_t x, std::size_t y) { return y * w + x; };
  const StateId start = cell(0, 0), goal = cell(w - 1, 0);
  const auto is_cliff = [&](std::size_t x, std::size_t y) { return spec.cliff && y == 0 && x > 0 && x + 1 < w; };
  const auto move = [&](std::size_t x, std::size_t y, std::size_t dir) {
    switch (dir) {
      case 0: y = std::min(y + 1, h - 1); break;
      case 1: y = y == 0 ? 0 : y - 1; break;
      case 2: x = x == 0 ? 0 : x - 1; break;
      default: x = std::min(x + 1, w - 1); break;
    }
    return std::pair{x, y};
  };
  FiniteMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 4;
  mdp.gamma = spec.gamma;
  mdp.transition.assign(n * 4 * n, 0.0);
  mdp.reward.resize(n * 4);
  mdp.rho0.assign(n, 0.0);
  mdp.rho0[start] = 1.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const StateId s = cell(x, y);
      for (ActionId a = 0; a < 4; ++a) {
        auto* row = &mdp.transition[(s * 4 + a) * n];
        if (s == goal || is_cliff(x, y)) {
          // Goal absorbs; a cliff cell (only reachable as a start state) returns to start.
          row[s == goal ? goal : start] = 1.0;
          mdp.reward[s * 4 + a] = point_mass(s == goal ? 0.0 : spec.cliff_reward);
          continue;
        }
        // Rewards are independent of the realised next state, so they follow the
        // intended move; slips only affect where the agent lands.
        for (std::size_t dir = 0; dir < 4; ++dir) {
          const double p = (dir == a ? 1.0 - spec.slip : 0.0) + spec.slip / 4.0;
          const auto [nx, ny] = move(x, y, dir);
          row[is_cliff(nx, ny) ? start : cell(nx, ny)] += p;
        }
        const auto [ix, iy] = move(x, y, a);
        double r = spec.step_reward;
        if (is_cliff(ix, iy)) r = spec.cliff_reward;
        else if (cell(ix, iy) == goal) r = spec.goal_reward;
        mdp.reward[s * 4 + a] = point_mass(r);
      }
    }
  return mdp;
}

enum class RewardKind { point_mass, continuous };

/// Random MDP: transition rows and rho0 from normalised uniforms, rewards either
/// three-atom mixtures on [-1, 1] or Uniform / truncated Gaussian kernels.
inline FiniteMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, RewardKind kind, Rng& rng) {
  if (n_states == 0 || n_actions == 0) throw std::invalid_argument("random_mdp: empty state or action set");
  FiniteMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  const auto normalised = [&](std::size_t k) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (double& x : v) sum += (x = 0.05 + uniform01(rng));
    for (double& x : v) x /= sum;
    return v;
  };
  for (std::size_t p = 0; p < n_states * n_actions; ++p) {
    const auto row = normalised(n_states);
    mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
  }
  for (std::size_t p = 0; p < n_states * n_actions; ++p) {
    if (kind == RewardKind::point_mass) {
      std::vector<double> values(3);
      for (double& v : values) v = uniform(rng, -1.0, 1.0);
      mdp.reward.push_back(PointMassMixture{values, normalised(3)});
    } else if (p % 2 == 0) {
      const double lo = uniform(rng, -1.0, 0.5);
      mdp.reward.push_back(UniformReward{lo, lo + uniform(rng, 0.2, 1.0)});
    } else {
      const double lo = uniform(rng, -1.0, 0.0);
      const double hi = lo + uniform(rng, 0.5, 1.5);
      mdp.reward.push_back(TruncatedGaussian{uniform(rng, lo, hi), uniform(rng, 0.2, 1.0), lo, hi});
    }
  }
  mdp.rho0 = normalised(n_states);
  return mdp;
}

/// pi(favored|s) = prob, the rest split evenly over the other actions.
inline Policy biased_policy(std::size_t n_states, std::size_t n_actions, ActionId favored, double prob) {
  if (n_actions < 2) return Policy::uniform(n_states, n_actions);
  Policy pi{n_states, n_actions,
            std::vector<double>(n_states * n_actions, (1.0 - prob) / static_cast<double>(n_actions - 1))};
  for (StateId s = 0; s < n_states; ++s) pi.probs[s * n_actions + favored] = prob;
  return pi;
}

}  // namespace dde
