#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"

using namespace dde;
using V = std::vector<double>;

namespace {

/// Reference w_p by midpoint integration of |F_a^-1 - F_b^-1|^p over a fine tau grid.
double integrated_wasserstein(const AtomMixture& a, const AtomMixture& b, double p, int grid = 200000) {
  double acc = 0.0;
  for (int k = 0; k < grid; ++k) {
    const double tau = (k + 0.5) / grid;
    const double d = std::abs(dde::testing::scan_quantile(a.values, a.weights, tau) -
                              dde::testing::scan_quantile(b.values, b.weights, tau));
    acc += std::pow(d, p) / grid;
  }
  return std::pow(acc, 1.0 / p);
}

}  // namespace

TEST(Cdf, CountsAtomsAtOrBelow) {
  EXPECT_DOUBLE_EQ(cdf(V{1, 2, 3, 4}, 2.0), 0.5);
  EXPECT_EQ(cdf(V{1, 2, 3, 4}, 0.5), 0.0);
  EXPECT_EQ(cdf(V{1, 2, 3, 4}, 4.0), 1.0);
  EXPECT_EQ(cdf(V{1, 2, 3, 4}, 7.0), 1.0);
  EXPECT_DOUBLE_EQ(cdf(AtomMixture{{0, 1}, {0.3, 0.7}}, 0.5), 0.3);
}

TEST(InverseCdf, InfDefinition) {
  EXPECT_EQ(inverse_cdf(V{1, 2, 3, 4}, 0.5), 2.0);
  EXPECT_EQ(inverse_cdf(V{1, 2, 3, 4}, 0.500001), 3.0);
  EXPECT_EQ(inverse_cdf(V{1, 2, 3, 4}, 0.0), 1.0);
  EXPECT_EQ(inverse_cdf(V{1, 2, 3, 4}, 1.0), 4.0);
  for (double tau : {0.0, 0.3, 0.77, 1.0}) EXPECT_EQ(inverse_cdf(V{2.5, 2.5, 2.5}, tau), 2.5);
  EXPECT_THROW(inverse_cdf(V{1, 2}, 1.5), std::domain_error);
  EXPECT_THROW(inverse_cdf(V{1, 2}, -0.1), std::domain_error);
}

TEST(InverseCdf, GaloisConnection) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = dde::testing::random_mixture(1 + trial % 9, -3, 3, rng);
    for (double z : d.values) EXPECT_LE(inverse_cdf(d, cdf(d, z)), z);
    for (int k = 0; k <= 50; ++k) {
      const double tau = k / 50.0;
      EXPECT_GE(cdf(d, inverse_cdf(d, tau)), tau - 1e-12);
    }
  }
}

TEST(Wasserstein, Identity) {
  EXPECT_EQ(wasserstein(V{1, 2, 3}, V{1, 2, 3}, 1.0), 0.0);
  EXPECT_EQ(wasserstein(V{1, 2, 3}, V{1, 2, 3}, kInfinity), 0.0);
}

TEST(Wasserstein, SingleTransport) {
  for (double p : {1.0, 2.0, 3.5, kInfinity}) EXPECT_DOUBLE_EQ(wasserstein(V{0}, V{1}, p), 1.0);
}

TEST(Wasserstein, MatchesIntegratedQuantileDifference) {
  const auto a = AtomMixture::uniform(V{0, 2});
  const auto b = AtomMixture::uniform(V{1, 3});
  EXPECT_NEAR(wasserstein(V{0, 2}, V{1, 3}, 1.0), integrated_wasserstein(a, b, 1.0), 1e-9);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = dde::testing::random_mixture(2 + trial % 4, -1, 2, rng);
    const auto y = dde::testing::random_mixture(3 + trial % 3, -2, 1, rng);
    for (double p : {1.0, 2.0}) EXPECT_NEAR(wasserstein(x, y, p), integrated_wasserstein(x, y, p), 1e-4);
  }
}

TEST(Wasserstein, RejectsPBelowOne) { EXPECT_THROW(wasserstein(V{0}, V{1}, 0.5), std::domain_error); }

TEST(Wasserstein, IsAMetric) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = dde::testing::random_mixture(1 + trial % 6, -2, 2, rng);
    const auto b = dde::testing::random_mixture(1 + trial % 5, -2, 2, rng);
    const auto c = dde::testing::random_mixture(1 + trial % 7, -2, 2, rng);
    for (double p : {1.0, 2.0, kInfinity}) {
      EXPECT_NEAR(wasserstein(a, b, p), wasserstein(b, a, p), 1e-12);
      EXPECT_LE(wasserstein(a, a, p), 1e-12);
      EXPECT_LE(wasserstein(a, c, p), wasserstein(a, b, p) + wasserstein(b, c, p) + 1e-12);
    }
  }
}

TEST(SupWasserstein, ShiftAndMax) {
  Rng rng(4);
  const TableShape shape{3, 2, 5};
  const auto a = random_table(shape, -1, 1, rng);
  EXPECT_EQ(sup_wasserstein(a, a, kInfinity), 0.0);
  std::vector<double> shifted(a.atoms().begin(), a.atoms().end());
  for (std::size_t m = 0; m < 5; ++m) shifted[(1 * 2 + 1) * 5 + m] += 0.75;
  EXPECT_NEAR(sup_wasserstein(a, QuantileTable(shape, shifted), kInfinity), 0.75, 1e-12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_table(shape, -1, 1, rng);
    const auto y = random_table(shape, -1, 1, rng);
    for (double p : {1.0, kInfinity}) {
      const double sup = sup_wasserstein(x, y, p);
      for (StateId s = 0; s < 3; ++s)
        for (ActionId act = 0; act < 2; ++act) EXPECT_GE(sup, wasserstein(x.row(s, act), y.row(s, act), p));
    }
  }
  EXPECT_THROW(sup_wasserstein(a, QuantileTable(TableShape{3, 2, 4}), 1.0), std::invalid_argument);
}

TEST(ProjectW1, UniformTwoAtoms) {
  EXPECT_EQ(project_w1(RewardDist{UniformReward{0, 1}}, 2), (V{0.25, 0.75}));
}

TEST(ProjectW1, UniformMidpoints) {
  for (std::size_t M : {4u, 7u, 32u}) {
    const auto row = project_w1(RewardDist{UniformReward{0, 1}}, M);
    for (std::size_t m = 0; m < M; ++m) EXPECT_NEAR(row[m], (2.0 * m + 1.0) / (2.0 * M), 1e-15);
  }
}

TEST(ProjectW1, PointMass) {
  for (std::size_t M : {1u, 3u, 16u}) EXPECT_EQ(project_w1(point_mass(1.25), M), V(M, 1.25));
  EXPECT_EQ(project_w1(AtomMixture{{-4}, {1.0}}, 5), V(5, -4.0));
}

TEST(ProjectW1, BeatsRandomAlternatives) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto target = dde::testing::random_mixture(6 + trial, -2, 2, rng);
    const std::size_t M = 3 + trial;
    const double best = wasserstein(project_w1(target, M), target, 1.0);
    for (int k = 0; k < 1000; ++k) {
      auto alt = dde::testing::random_row(M, -2.5, 2.5, rng);
      EXPECT_LE(best, wasserstein(alt, target, 1.0) + 1e-12);
    }
  }
}

TEST(MidpointQuantiles, AgreeWithScan) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = dde::testing::random_mixture(1 + trial % 20, -5, 5, rng);
    const std::size_t M = 1 + trial % 13;
    const auto row = midpoint_quantiles(d, M);
    for (std::size_t m = 0; m < M; ++m)
      EXPECT_EQ(row[m], dde::testing::scan_quantile(d.values, d.weights, (m + 0.5) / M));
  }
}

TEST(QuantileHuber, ZeroAtZero) { EXPECT_EQ(quantile_huber(0.3, 0.0, 1.0), 0.0); }

TEST(QuantileHuber, ExampleValues) {
  // |tau - 1{u<0}| times the Huber loss, written out per branch.
  const auto reference = [](double tau, double u, double k) {
    const double w = u < 0 ? 1.0 - tau : tau;
    return std::abs(u) <= k ? w * 0.5 * u * u : w * k * (std::abs(u) - 0.5 * k);
  };
  EXPECT_NEAR(quantile_huber(0.5, 0.5, 1.0), reference(0.5, 0.5, 1.0), 1e-15);
  EXPECT_NEAR(quantile_huber(0.5, 0.5, 1.0), 0.0625, 1e-15);
  EXPECT_NEAR(quantile_huber(0.9, -2.0, 1.0), reference(0.9, -2.0, 1.0), 1e-15);
  EXPECT_NEAR(quantile_huber(0.9, -2.0, 1.0), 0.15, 1e-15);
  EXPECT_THROW(quantile_huber(0.5, 1.0, 0.0), std::domain_error);
}

TEST(QuantileHuber, DerivativeMatchesFiniteDifferences) {
  Rng rng(31);
  for (int k = 0; k < 1000; ++k) {
    const double tau = uniform01(rng);
    const double kappa = uniform(rng, 0.1, 2.0);
    double u = uniform(rng, -4, 4);
    if (std::abs(u) < 1e-4 || std::abs(std::abs(u) - kappa) < 1e-4) continue;
    const double h = 1e-6;
    const double fd = (quantile_huber(tau, u + h, kappa) - quantile_huber(tau, u - h, kappa)) / (2 * h);
    EXPECT_NEAR(quantile_huber_derivative(tau, u, kappa), fd, 1e-5);
  }
}

TEST(QuantileTable, RowsAreSortedOnConstruction) {
  const TableShape shape{1, 2, 3};
  const QuantileTable t(shape, V{3, 1, 2, 9, 8, 7});
  EXPECT_EQ(V(t.row(0, 0).begin(), t.row(0, 0).end()), (V{1, 2, 3}));
  EXPECT_EQ(V(t.row(0, 1).begin(), t.row(0, 1).end()), (V{7, 8, 9}));
  QuantileTable u(shape);
  u.set_row(0, 1, V{5, -1, 0});
  EXPECT_EQ(V(u.row(0, 1).begin(), u.row(0, 1).end()), (V{-1, 0, 5}));
  EXPECT_THROW(QuantileTable(shape, V{1, 2}), std::invalid_argument);
}

TEST(QuantileTable, TauLevels) {
  EXPECT_DOUBLE_EQ(tau_hat(0, 4), 0.125);
  EXPECT_DOUBLE_EQ(tau_hat(3, 4), 0.875);
  EXPECT_DOUBLE_EQ(tau_level(4, 4), 1.0);
}

TEST(QuantileTable, CsvRoundTrip) {
  Rng rng(5);
  const auto t = random_table(TableShape{2, 3, 4}, -10, 10, rng);
  std::stringstream ss;
  write_quantile_table(ss, t);
  EXPECT_EQ(ss.str().rfind("# M=4\n", 0), 0u);
  EXPECT_EQ(read_quantile_table(ss), t);
}
