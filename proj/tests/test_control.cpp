#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "test_support.hpp"

using namespace dde;
using V = std::vector<double>;

namespace {

Ensemble with_members(std::vector<QuantileTable> members) {
  Ensemble ens;
  ens.online = std::move(members);
  ens.targets = ens.online;
  return ens;
}

/// Two states, two actions. Action 1 pays more and moves to state 1, whose
/// action 1 pays the most; action 0 pays a little and moves to state 0.
FiniteMdp two_state_mdp() {
  FiniteMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.transition = {1, 0, 0, 1, 1, 0, 0, 1};
  mdp.reward = {point_mass(0.2), point_mass(0.0), point_mass(0.1), point_mass(1.0)};
  mdp.gamma = 0.8;
  mdp.rho0 = {1.0, 0.0};
  return mdp;
}

std::vector<ActionId> greedy_actions(const std::vector<double>& q, std::size_t nS, std::size_t nA) {
  std::vector<ActionId> out(nS);
  for (StateId s = 0; s < nS; ++s)
    out[s] = static_cast<ActionId>(std::max_element(q.begin() + s * nA, q.begin() + (s + 1) * nA) - (q.begin() + s * nA));
  return out;
}

/// Every pair represented with exact transition frequencies for a deterministic MDP.
OfflineDataset covering_dataset(const FiniteMdp& mdp, std::size_t copies, const std::vector<bool>& keep) {
  std::vector<Transition> tuples;
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      if (!keep[s * mdp.n_actions + a]) continue;
      StateId next = 0;
      for (StateId s2 = 0; s2 < mdp.n_states; ++s2)
        if (mdp.p(s, a, s2) == 1.0) next = s2;
      for (std::size_t k = 0; k < copies; ++k) tuples.push_back({s, a, reward_mean(mdp.reward_at(s, a)), next});
    }
  return OfflineDataset(mdp.n_states, mdp.n_actions, std::move(tuples));
}

}  // namespace

TEST(QValue, Examples) {
  const TableShape shape{1, 1, 4};
  EXPECT_EQ(q_value(with_members({QuantileTable(shape, 1.5), QuantileTable(shape, 1.5)}), 0, 0), 1.5);
  const auto ens = with_members({QuantileTable(shape, 0.0), QuantileTable(shape, 2.0)});
  EXPECT_DOUBLE_EQ(q_value(ens, 0, 0), (0.0 * 4 + 2.0 * 4) / 8.0);
}

TEST(QValue, SymmetricInMembersAndAtoms) {
  Rng rng(1);
  const TableShape shape{2, 2, 6};
  std::vector<QuantileTable> members;
  for (int l = 0; l < 4; ++l) members.push_back(random_table(shape, -1, 1, rng));
  const auto base = with_members(members);
  std::reverse(members.begin(), members.end());
  const auto swapped = with_members(members);
  for (StateId s = 0; s < 2; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      EXPECT_NEAR(q_value(base, s, a), q_value(swapped, s, a), 1e-15);
      // Atom order: a table built from a shuffled row re-sorts to the same row.
      V row(base.online[0].row(s, a).begin(), base.online[0].row(s, a).end());
      std::reverse(row.begin(), row.end());
      auto shuffled = base;
      shuffled.online[0].set_row(s, a, row);
      EXPECT_EQ(q_value(shuffled, s, a), q_value(base, s, a));
    }
}

TEST(RiskQ, Examples) {
  const TableShape shape{1, 1, 4};
  const auto ens = with_members({QuantileTable(shape, V{1, 2, 3, 4})});
  // Means of the lowest half and the lowest quarter of the atoms.
  EXPECT_DOUBLE_EQ(risk_q(ens, 0, 0, 0.5), (1.0 + 2.0) / 2.0);
  EXPECT_DOUBLE_EQ(risk_q(ens, 0, 0, 0.25), 1.0);
  EXPECT_DOUBLE_EQ(risk_q(ens, 0, 0, 1.0), q_value(ens, 0, 0));
  // 0.375 of four atoms: one full atom and half of the next.
  EXPECT_DOUBLE_EQ(risk_q(ens, 0, 0, 0.375), (1.0 + 0.5 * 2.0) / 1.5);
  EXPECT_THROW(risk_q(ens, 0, 0, 0.0), std::domain_error);
}

TEST(RiskQ, EqualsQValueAtFullLevel) {
  Rng rng(2);
  const TableShape shape{2, 3, 7};
  const auto ens = with_members({random_table(shape, -2, 2, rng), random_table(shape, -2, 2, rng)});
  for (StateId s = 0; s < 2; ++s)
    for (ActionId a = 0; a < 3; ++a) EXPECT_NEAR(risk_q(ens, s, a, 1.0), q_value(ens, s, a), 1e-14);
}

TEST(RiskQ, NondecreasingInLevel) {
  Rng rng(3);
  const TableShape shape{1, 1, 9};
  for (int trial = 0; trial < 100; ++trial) {
    const auto ens = with_members({random_table(shape, -3, 3, rng), random_table(shape, -3, 3, rng)});
    double previous = -kInfinity;
    for (int k = 1; k <= 40; ++k) {
      const double value = risk_q(ens, 0, 0, k / 40.0);
      EXPECT_GE(value, previous - 1e-14);
      previous = value;
    }
  }
}

TEST(GreedyPolicy, Examples) {
  const TableShape shape{2, 3, 2};
  auto table = QuantileTable(shape, V{0, 0, 5, 5, 1, 1, 2, 2, 0, 0, 9, 9});
  const auto ens = with_members({table, table});
  EXPECT_EQ(greedy_policy(ens, GreedyMode::mean(), 1.0), Policy::uniform(2, 3));
  const std::vector<ActionId> best{1, 2};
  EXPECT_EQ(greedy_policy(ens, GreedyMode::mean(), 0.0), Policy::deterministic(best, 3));
  const auto soft = greedy_policy(ens, GreedyMode::mean(), 0.3);
  EXPECT_DOUBLE_EQ(soft(0, 1), 1.0 - 0.3 + 0.1);
  EXPECT_DOUBLE_EQ(soft(0, 0), 0.1);
}

TEST(GreedyPolicy, TiesGoToLowestIndex) {
  const V scores{1, 1, 0, 2, 2, 2};
  const auto pi = epsilon_greedy(scores, 2, 3, 0.0);
  EXPECT_EQ(pi(0, 0), 1.0);
  EXPECT_EQ(pi(1, 0), 1.0);
}

TEST(GreedyPolicy, InvariantToPerStateShift) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    V scores(4 * 3);
    for (double& x : scores) x = uniform(rng, -1, 1);
    V shifted(scores);
    for (StateId s = 0; s < 4; ++s) {
      const double c = uniform(rng, -100, 100);
      for (ActionId a = 0; a < 3; ++a) shifted[s * 3 + a] += c;
    }
    EXPECT_EQ(epsilon_greedy(scores, 4, 3, 0.2), epsilon_greedy(shifted, 4, 3, 0.2));
  }
}

TEST(EvaluatePolicy, DeterministicRolloutReturn) {
  const auto mdp = two_state_mdp();
  const std::vector<ActionId> actions{1, 1};
  Rng rng(5);
  const auto res = evaluate_policy(mdp, Policy::deterministic(actions, 2), 20, 50, rng);
  // State 0 -> 1 with reward 0, then reward 1 forever.
  double expected = 0.0;
  for (int t = 1; t < 50; ++t) expected += std::pow(0.8, t);
  EXPECT_NEAR(res.mean, expected, 1e-12);
  EXPECT_EQ(res.cvar10, res.mean);
  for (double x : res.samples) EXPECT_EQ(x, res.samples.front());
  EXPECT_THROW(evaluate_policy(mdp, Policy::uniform(2, 2), 0, 10, rng), std::invalid_argument);
}

TEST(EvaluatePolicy, LowerTailMeanExamples) {
  const V samples{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(lower_tail_mean(samples, 0.1), *std::min_element(samples.begin(), samples.end()));
  EXPECT_DOUBLE_EQ(lower_tail_mean(samples, 0.2), 0.5);
}

TEST(EvaluatePolicy, CvarNeverExceedsMean) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto mdp = random_mdp(4, 2, 0.9, RewardKind::point_mass, rng);
    const auto res = evaluate_policy(mdp, Policy::uniform(4, 2), 200, 30, rng);
    EXPECT_LE(res.cvar10, res.mean + 1e-12);
  }
}

TEST(TrainDdac, ZeroStepsReturnsInitialEnsemble) {
  const auto mdp = two_state_mdp();
  const auto ds = covering_dataset(mdp, 5, {true, true, true, true});
  DdacConfig cfg;
  cfg.steps = 0;
  cfg.members = 3;
  cfg.atoms = 4;
  Rng a(7), b(7);
  const auto out = train_ddac_tabular(ds, cfg, a);
  EXPECT_TRUE(out.metrics.empty());
  EXPECT_EQ(out.ensemble.steps, 0u);
  EXPECT_EQ(out.ensemble.online, out.ensemble.targets);
  const auto range = observed_value_range(ds, cfg.gamma);
  const auto expected = init_ensemble(3, TableShape{2, 2, 4}, UniformInit{range.lo, range.hi}, b);
  EXPECT_EQ(out.ensemble.online, expected.online);
  EXPECT_EQ(out.policy, greedy_policy(out.ensemble, cfg.mode, cfg.epsilon));
  EXPECT_THROW(train_ddac_tabular(OfflineDataset(2, 2, {}), cfg, a), std::invalid_argument);
}

TEST(TrainDdac, NoPessimismFindsOptimalPolicy) {
  const auto mdp = two_state_mdp();
  const auto ds = covering_dataset(mdp, 25, {true, true, true, true});
  DdacConfig cfg;
  cfg.beta = 0.0;
  cfg.members = 2;
  cfg.atoms = 8;
  cfg.gamma = mdp.gamma;
  cfg.epsilon = 0.0;
  cfg.learning_rate = 0.2;
  cfg.kappa_polyak = 0.1;
  cfg.steps = 3000;
  cfg.batch_size = 32;
  cfg.enumerate_actions = true;
  cfg.eval_every = 0;
  Rng rng(8);
  const auto out = train_ddac_tabular(ds, cfg, rng);
  const auto optimal = greedy_actions(dde::testing::optimal_q_values(mdp), 2, 2);
  EXPECT_EQ(out.policy, Policy::deterministic(optimal, 2));
  EXPECT_EQ(greedy_policy(out.ensemble, GreedyMode::mean(), 0.0), Policy::deterministic(optimal, 2));
}

TEST(TrainDdac, ExtremePessimismAvoidsUncoveredActions) {
  const auto mdp = two_state_mdp();
  // Only action 0 appears in the data, although action 1 is better in the model.
  const auto ds = covering_dataset(mdp, 25, {true, false, true, false});
  DdacConfig cfg;
  cfg.beta = 1e3;
  cfg.members = 4;
  cfg.atoms = 8;
  cfg.gamma = mdp.gamma;
  cfg.steps = 300;
  cfg.eval_every = 0;
  Rng rng(9);
  const auto out = train_ddac_tabular(ds, cfg, rng);
  const std::vector<ActionId> safe{0, 0};
  EXPECT_EQ(greedy_policy(out.ensemble, GreedyMode::mean(), 0.0), Policy::deterministic(safe, 2));
}

TEST(TrainDdac, CriticReachesProjectedFixedPoint) {
  // Two identical members stand in for a single critic: sigma stays 0.
  Rng rng(10);
  const auto mdp = random_mdp(3, 2, 0.8, RewardKind::point_mass, rng);
  const auto ds = generate_offline_dataset(mdp, Policy::uniform(3, 2), 3000, IidFromWeights{V(6, 1.0)}, rng);
  DdacConfig cfg;
  cfg.beta = 0.0;
  cfg.members = 2;
  cfg.atoms = 16;
  cfg.gamma = mdp.gamma;
  cfg.epsilon = 1.0;  // uniform policy throughout, so the evaluated policy is fixed
  cfg.learning_rate = 0.2;
  cfg.kappa_polyak = 0.2;
  cfg.steps = 4000;
  cfg.batch_size = 64;
  cfg.enumerate_actions = true;
  cfg.eval_every = 0;
  cfg.value_range = mdp.return_range();
  const auto out = train_ddac_tabular(ds, cfg, rng);
  const auto exact = exact_fixed_point(mdp, out.policy, 16, 1e-10);
  const double bound = 2.0 * mdp.return_range().width() / 16 + 1e-3;
  for (const auto& member : out.ensemble.online) EXPECT_LE(sup_wasserstein(member, exact, 1.0), bound);
}

TEST(TrainDdac, MetricsFollowTheSchedule) {
  const auto mdp = two_state_mdp();
  const auto ds = covering_dataset(mdp, 5, {true, true, true, true});
  DdacConfig cfg;
  cfg.atoms = 4;
  cfg.members = 2;
  cfg.steps = 25;
  cfg.eval_every = 10;
  cfg.eval_mdp = &mdp;
  cfg.eval_episodes = 20;
  cfg.eval_horizon = 10;
  Rng rng(11);
  const auto out = train_ddac_tabular(ds, cfg, rng);
  ASSERT_EQ(out.metrics.size(), 3u);
  EXPECT_EQ(out.metrics[0].step, 10u);
  EXPECT_EQ(out.metrics[2].step, 25u);
  EXPECT_FALSE(std::isnan(out.metrics[0].mean_return));
  std::ostringstream os;
  write_metrics(os, out.metrics);
  EXPECT_EQ(os.str().rfind("step,mean_return,cvar10,mean_q,mean_sigma\n", 0), 0u);
}
