#include <gtest/gtest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "test_support.hpp"

using namespace dde;
using dde::testing::single_state_mdp;
using V = std::vector<double>;

namespace {

/// P(R <= x) as the integral of the reward density from its lower support end.
double integrated_reward_cdf(const RewardDist& r, double x) {
  const double lo = reward_support_lo(r), hi = reward_support_hi(r);
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate([&](double t) { return reward_pdf(r, t); }, lo,
                                                                        x, 15, 1e-14);
}

/// Enumerates every (s', a', m) next atom of the exact target and integrates the reward density.
double brute_force_cdf(const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta, StateId s, ActionId a,
                       double z) {
  double acc = 0.0;
  for (StateId s2 = 0; s2 < mdp.n_states; ++s2)
    for (ActionId a2 = 0; a2 < mdp.n_actions; ++a2)
      for (std::size_t m = 0; m < eta.n_atoms(); ++m)
        acc += mdp.p(s, a, s2) * pi(s2, a2) / eta.n_atoms() *
               integrated_reward_cdf(mdp.reward_at(s, a), z - mdp.gamma * eta(s2, a2, m));
  return acc;
}

Policy random_policy(std::size_t nS, std::size_t nA, Rng& rng) {
  Policy pi{nS, nA, std::vector<double>(nS * nA)};
  for (StateId s = 0; s < nS; ++s) {
    double total = 0.0;
    for (ActionId a = 0; a < nA; ++a) total += (pi.probs[s * nA + a] = 0.1 + uniform01(rng));
    for (ActionId a = 0; a < nA; ++a) pi.probs[s * nA + a] /= total;
  }
  return pi;
}

/// Largest CDF gap between two finite mixtures, checked at every atom of either.
double sup_cdf_gap(const AtomMixture& x, const AtomMixture& y) {
  std::vector<double> points(x.values);
  points.insert(points.end(), y.values.begin(), y.values.end());
  double gap = 0.0;
  for (double z : points) gap = std::max(gap, std::abs(cdf(x, z) - cdf(y, z)));
  return gap;
}

}  // namespace

TEST(ExactBellmanCdf, SinglePushforwardAtom) {
  const auto mdp = single_state_mdp(1.0, 0.5);
  const QuantileTable eta(TableShape{1, 1, 4});
  const auto pi = Policy::uniform(1, 1);
  EXPECT_EQ(exact_bellman_cdf(mdp, pi, eta, 0, 0, 0.999), 0.0);
  EXPECT_EQ(exact_bellman_cdf(mdp, pi, eta, 0, 0, 1.0), 1.0);
  EXPECT_EQ(exact_bellman_cdf(mdp, pi, eta, 0, 0, 5.0), 1.0);
}

TEST(ExactBellmanCdf, UniformRewardAgainstPointMass) {
  for (double gamma : {0.1, 0.5, 0.95}) {
    const auto mdp = single_state_mdp(UniformReward{0, 1}, gamma);
    const QuantileTable eta(TableShape{1, 1, 3});
    for (double z : {-0.5, 0.0, 0.25, 0.6, 1.0, 1.7})
      EXPECT_NEAR(exact_bellman_cdf(mdp, Policy::uniform(1, 1), eta, 0, 0, z), std::clamp(z, 0.0, 1.0), 1e-15);
  }
}

TEST(ExactBellmanCdf, MatchesBruteForceEnumeration) {
  Rng rng(41);
  const auto mdp = random_mdp(3, 2, 0.8, RewardKind::continuous, rng);
  const auto pi = random_policy(3, 2, rng);
  const auto eta = random_table(TableShape{3, 2, 5}, -2, 2, rng);
  for (StateId s = 0; s < 3; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      const auto support = exact_bellman_support(mdp, pi, eta, s, a);
      for (int k = 0; k <= 8; ++k) {
        const double z = support.lo - 0.1 + (support.width() + 0.2) * k / 8.0;
        EXPECT_NEAR(exact_bellman_cdf(mdp, pi, eta, s, a, z), brute_force_cdf(mdp, pi, eta, s, a, z), 1e-10);
      }
    }
}

TEST(ExactBellmanAtoms, SingleAtom) {
  const auto mdp = single_state_mdp(1.0, 0.5);
  const auto mix = exact_bellman_atoms(mdp, Policy::uniform(1, 1), QuantileTable(TableShape{1, 1, 1}), 0, 0);
  const auto c = mix.canonical();
  EXPECT_EQ(c.values, V{1.0});
  EXPECT_DOUBLE_EQ(c.weights[0], 1.0);
}

TEST(ExactBellmanAtoms, TwoNextStatesEnumerated) {
  FiniteMdp mdp;
  mdp.n_states = 3;
  mdp.n_actions = 1;
  mdp.transition = {0, 0.5, 0.5, 0, 1, 0, 0, 0, 1};
  mdp.reward = {point_mass(0), point_mass(0), point_mass(0)};
  mdp.gamma = 0.5;
  mdp.rho0 = {1, 0, 0};
  const QuantileTable eta(TableShape{3, 1, 1}, V{0, 0, 2});
  const auto mix = exact_bellman_atoms(mdp, Policy::uniform(3, 1), eta, 0, 0).canonical();
  // Next atom values r + gamma * Z(s',.,m) with weights P(s') (1/M).
  AtomMixture expected;
  for (StateId s2 = 1; s2 < 3; ++s2) {
    expected.values.push_back(0.0 + mdp.gamma * eta(s2, 0, 0));
    expected.weights.push_back(mdp.p(0, 0, s2));
  }
  EXPECT_EQ(mix.values, expected.canonical().values);
  EXPECT_EQ(mix.weights, expected.canonical().weights);
}

TEST(ExactBellmanAtoms, WeightsSumToOneAndCdfAgrees) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mdp = random_mdp(3, 2, 0.9, RewardKind::point_mass, rng);
    const auto pi = random_policy(3, 2, rng);
    const auto eta = random_table(TableShape{3, 2, 4}, -3, 3, rng);
    const auto mix = exact_bellman_atoms(mdp, pi, eta, 1, 1);
    EXPECT_NEAR(mix.total_weight(), 1.0, 1e-12);
    for (double z : mix.values) EXPECT_NEAR(cdf(mix, z), exact_bellman_cdf(mdp, pi, eta, 1, 1, z), 1e-12);
  }
}

TEST(ExactBellmanAtoms, ContinuousRewardRejected) {
  const auto mdp = reference_mdp();
  EXPECT_THROW(exact_bellman_atoms(mdp, Policy::uniform(1, 1), QuantileTable(TableShape{1, 1, 2}), 0, 0),
               std::domain_error);
}

TEST(EmpiricalBellman, SingleTupleStep) {
  const OfflineDataset ds(2, 1, {{0, 0, 1.0, 1}});
  const QuantileTable eta(TableShape{2, 1, 4});
  const auto pi = Policy::uniform(2, 1);
  EXPECT_EQ(empirical_bellman_cdf(ds, pi, eta, 0.9, 0, 0, 0.99), 0.0);
  EXPECT_EQ(empirical_bellman_cdf(ds, pi, eta, 0.9, 0, 0, 1.0), 1.0);
  EXPECT_EQ(empirical_bellman_quantiles(ds, pi, eta, 0.9, 0, 0), V(4, 1.0));
}

TEST(EmpiricalBellman, MissingPairRaises) {
  const OfflineDataset ds(2, 1, {{0, 0, 1.0, 1}});
  const QuantileTable eta(TableShape{2, 1, 2});
  try {
    empirical_bellman_cdf(ds, Policy::uniform(2, 1), eta, 0.9, 1, 0, 0.0);
    FAIL() << "expected MissingDataError";
  } catch (const MissingDataError& e) {
    EXPECT_NE(std::string(e.what()).find("no data for pair"), std::string::npos);
    EXPECT_EQ(e.state(), 1u);
  }
}

TEST(EmpiricalBellman, PlugInIdentityWithExactFrequencies) {
  // P(.|0,a) = (1/2, 1/4, 1/4), reward 0 or 1 with probabilities 1/4, 3/4, so
  // 16 tuples reproduce the model frequencies exactly.
  FiniteMdp mdp;
  mdp.n_states = 3;
  mdp.n_actions = 2;
  mdp.gamma = 0.7;
  mdp.rho0 = {1, 0, 0};
  for (std::size_t p = 0; p < 6; ++p) {
    mdp.transition.insert(mdp.transition.end(), {0.5, 0.25, 0.25});
    mdp.reward.push_back(PointMassMixture{{0.0, 1.0}, {0.25, 0.75}});
  }
  validate_mdp(mdp);
  std::vector<Transition> tuples;
  for (StateId s = 0; s < 3; ++s)
    for (ActionId a = 0; a < 2; ++a)
      for (StateId s2 = 0; s2 < 3; ++s2) {
        const int n_next = s2 == 0 ? 2 : 1;
        for (int k = 0; k < n_next; ++k) {
          tuples.push_back({s, a, 0.0, s2});
          for (int j = 0; j < 3; ++j) tuples.push_back({s, a, 1.0, s2});
        }
      }
  const OfflineDataset ds(3, 2, tuples);
  Rng rng(43);
  const auto pi = random_policy(3, 2, rng);
  const auto eta = random_table(TableShape{3, 2, 6}, -2, 2, rng);
  for (StateId s = 0; s < 3; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      for (double z : exact_bellman_atoms(mdp, pi, eta, s, a).values) {
        EXPECT_NEAR(empirical_bellman_cdf(ds, pi, eta, mdp.gamma, s, a, z), exact_bellman_cdf(mdp, pi, eta, s, a, z),
                    1e-12);
        EXPECT_NEAR(empirical_bellman_cdf(ds, pi, eta, mdp.gamma, s, a, z - 1e-9),
                    exact_bellman_cdf(mdp, pi, eta, s, a, z - 1e-9), 1e-12);
      }
    }
}

TEST(EmpiricalBellman, CdfAxioms) {
  Rng rng(44);
  const auto mdp = random_mdp(3, 2, 0.9, RewardKind::continuous, rng);
  const auto ds = generate_offline_dataset(mdp, Policy::uniform(3, 2), 300, IidFromWeights{V(6, 1.0)}, rng);
  const auto pi = random_policy(3, 2, rng);
  const auto eta = random_table(TableShape{3, 2, 8}, -5, 5, rng);
  double prev = 0.0;
  EXPECT_EQ(empirical_bellman_cdf(ds, pi, eta, 0.9, 2, 1, -1e9), 0.0);
  EXPECT_EQ(empirical_bellman_cdf(ds, pi, eta, 0.9, 2, 1, 1e9), 1.0);
  for (int k = 0; k <= 400; ++k) {
    const double v = empirical_bellman_cdf(ds, pi, eta, 0.9, 2, 1, -8 + 16 * k / 400.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(EmpiricalBellman, TwoAtomMixtureQuantiles) {
  // Targets 0 and 2 with weight 1/2 each.
  const OfflineDataset ds(2, 1, {{0, 0, 0.0, 1}, {0, 0, 2.0, 1}});
  const QuantileTable eta(TableShape{2, 1, 2});
  const auto row = empirical_bellman_quantiles(ds, Policy::uniform(2, 1), eta, 0.5, 0, 0);
  const V values{0.0, 2.0}, weights{0.5, 0.5};
  EXPECT_EQ(row, (V{dde::testing::scan_quantile(values, weights, 0.25),
                    dde::testing::scan_quantile(values, weights, 0.75)}));
  EXPECT_EQ(row, (V{0.0, 2.0}));
}

TEST(EmpiricalBellman, OutputIsSortedAndMatchesScan) {
  Rng rng(45);
  const auto mdp = random_mdp(3, 2, 0.9, RewardKind::point_mass, rng);
  const auto ds = generate_offline_dataset(mdp, Policy::uniform(3, 2), 200, IidFromWeights{V(6, 1.0)}, rng);
  const auto pi = random_policy(3, 2, rng);
  const auto eta = random_table(TableShape{3, 2, 7}, -5, 5, rng);
  for (StateId s = 0; s < 3; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      if (!ds.covered(s, a)) continue;
      const auto row = empirical_bellman_quantiles(ds, pi, eta, 0.9, s, a);
      EXPECT_TRUE(std::is_sorted(row.begin(), row.end()));
      // Reference: one mixture entry per tuple, action and atom, no merging.
      V values, weights;
      for (const auto& o : ds.outcomes(s, a))
        for (ActionId a2 = 0; a2 < 2; ++a2)
          for (std::size_t m = 0; m < 7; ++m) {
            values.push_back(o.r + 0.9 * eta(o.s_next, a2, m));
            weights.push_back(pi(o.s_next, a2) / (7.0 * ds.count(s, a)));
          }
      for (std::size_t m = 0; m < 7; ++m)
        EXPECT_EQ(row[m], dde::testing::scan_quantile(values, weights, (m + 0.5) / 7));
    }
}

TEST(BellmanProperties, ProjectedOperatorContracts) {
  Rng rng(46);
  const auto mdp = random_mdp(4, 2, 0.9, RewardKind::point_mass, rng);
  const auto pi = random_policy(4, 2, rng);
  const auto source = model_source(mdp);
  const TableShape shape{4, 2, 8};
  for (int k = 0; k < 200; ++k) {
    const auto mu = random_table(shape, -10, 10, rng);
    const auto nu = random_table(shape, -10, 10, rng);
    const double before = sup_wasserstein(mu, nu, kInfinity);
    const double after = sup_wasserstein(projected_bellman_step(source, pi, mu), projected_bellman_step(source, pi, nu),
                                         kInfinity);
    EXPECT_LE(after, mdp.gamma * before + 1e-12);
  }
}

TEST(BellmanProperties, PlugInConsistencyWithinDkwEnvelope) {
  Rng rng(47);
  const auto mdp = random_mdp(3, 2, 0.9, RewardKind::point_mass, rng);
  const auto pi = random_policy(3, 2, rng);
  const auto eta = random_table(TableShape{3, 2, 8}, -5, 5, rng);
  const auto exact = exact_bellman_atoms(mdp, pi, eta, 0, 0);
  double previous_mean = 1.0;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    const double envelope = std::sqrt(std::log(2.0 / 0.01) / (2.0 * n));
    int inside = 0;
    double mean_gap = 0.0;
    const int replicates = 500;
    for (int k = 0; k < replicates; ++k) {
      std::vector<Transition> tuples;
      for (std::size_t i = 0; i < n; ++i) {
        const auto step = sample_step(mdp, 0, 0, rng);
        tuples.push_back({0, 0, step.r, step.s_next});
      }
      const OfflineDataset ds(3, 2, std::move(tuples));
      const double gap = sup_cdf_gap(empirical_bellman_atoms(ds, pi, eta, mdp.gamma, 0, 0), exact);
      inside += gap <= envelope;
      mean_gap += gap / replicates;
    }
    EXPECT_GE(inside, 0.99 * replicates) << "N=" << n;
    EXPECT_LT(mean_gap, previous_mean) << "N=" << n;
    previous_mean = mean_gap;
  }
}

TEST(BellmanProperties, ContinuousTargetCdfIsSmoothAndIncreasing) {
  Rng rng(48);
  const auto check = [](const FiniteMdp& mdp, const Policy& pi, const QuantileTable& eta) {
    for (StateId s = 0; s < mdp.n_states; ++s)
      for (ActionId a = 0; a < mdp.n_actions; ++a) {
        const auto support = exact_bellman_support(mdp, pi, eta, s, a);
        double max_density = 0.0;
        const int grid = 10000;
        const double h = support.width() / grid;
        for (int k = 0; k < grid; ++k)
          max_density = std::max(max_density, target_density(mdp, pi, eta, s, a, support.lo + (k + 0.5) * h));
        double prev = exact_bellman_cdf(mdp, pi, eta, s, a, support.lo + 0.5 * h);
        for (int k = 1; k < grid; ++k) {
          const double cur = exact_bellman_cdf(mdp, pi, eta, s, a, support.lo + (k + 0.5) * h);
          ASSERT_GT(cur, prev) << "flat at grid point " << k;
          ASSERT_LE(cur - prev, 1.01 * max_density * h + 1e-12) << "jump at grid point " << k;
          prev = cur;
        }
      }
  };
  const auto ref = reference_mdp();
  check(ref, Policy::uniform(1, 1), exact_fixed_point(ref, Policy::uniform(1, 1), 32, 1e-11));
  const auto mdp = random_mdp(3, 2, 0.9, RewardKind::continuous, rng);
  check(mdp, Policy::uniform(3, 2), exact_fixed_point(mdp, Policy::uniform(3, 2), 16, 1e-9));
}
