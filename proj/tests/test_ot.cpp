#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "imuot/error.hpp"
#include "imuot/ot.hpp"
#include "support.hpp"

namespace imuot::ot {
namespace {

Vector uniform(int n) { return Vector::Constant(n, 1.0 / n); }

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double marginal_error(const Coupling& c, const Vector& mu, const Vector& nu) {
  return std::max((c.gamma.rowwise().sum() - mu).cwiseAbs().maxCoeff(),
                  (c.gamma.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff());
}

TEST(Wasserstein1d, Examples) {
  const std::vector<double> a{0.0}, b{3.0};
  EXPECT_EQ(wasserstein_1d(a, b), 3.0);
  const std::vector<double> c{0.3, -1.0, 2.0};
  EXPECT_EQ(wasserstein_1d(c, c), 0.0);
  const std::vector<double> d{0.0, 1.0}, e{1.0, 2.0};
  EXPECT_EQ(wasserstein_1d(d, e), 1.0);
  EXPECT_THROW(wasserstein_1d(std::vector<double>{}, a), ArgumentError);
}

TEST(Wasserstein1d, MatchesSortedMatching) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(16), b(16);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng) + 0.5;
    EXPECT_EQ(wasserstein_1d(a, b), testing::sorted_matching(a, b));
  }
}

TEST(Wasserstein1d, UnequalSizesMatchReplicatedMatching) {
  // Repeating each of n points m times and each of m points n times gives equal-size samples
  // with the same step CDFs.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + trial % 5;
    const int m = 2 + trial % 7;
    std::vector<double> a(n), b(m), ar, br;
    for (auto& v : a) v = n01(rng);
    for (auto& v : b) v = n01(rng);
    for (double v : a) ar.insert(ar.end(), m, v);
    for (double v : b) br.insert(br.end(), n, v);
    EXPECT_NEAR(wasserstein_1d(a, b), testing::sorted_matching(ar, br), 1e-12);
  }
}

TEST(Wasserstein1d, ScaleEquivariantAndSymmetric) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> a(20), b(13);
  for (auto& v : a) v = n01(rng);
  for (auto& v : b) v = n01(rng);
  std::vector<double> as = a, bs = b;
  for (auto& v : as) v *= 3.5;
  for (auto& v : bs) v *= 3.5;
  EXPECT_NEAR(wasserstein_1d(as, bs), 3.5 * wasserstein_1d(a, b), 1e-12);
  EXPECT_DOUBLE_EQ(wasserstein_1d(a, b), wasserstein_1d(b, a));
}

TEST(Sinkhorn, OneByOne) {
  CostMatrix c{Matrix::Constant(1, 1, 2.5), 1.0};
  const auto g = sinkhorn(c, uniform(1), uniform(1), {});
  EXPECT_NEAR(g.gamma(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(g.transport_cost, 2.5, 1e-12);
  EXPECT_TRUE(g.converged);
}

TEST(Sinkhorn, TwoByTwoApproachesLp) {
  CostMatrix c{Matrix(2, 2), 1.0};
  c.values << 0, 1, 1, 0;
  SinkhornConfig cfg;
  cfg.max_iters = 20000;
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    cfg.epsilon = eps;
    const auto g = sinkhorn(c, uniform(2), uniform(2), cfg);
    EXPECT_LE(g.transport_cost, prev + 1e-12);
    prev = g.transport_cost;
  }
  cfg.epsilon = 1e-4;
  const auto g = sinkhorn(c, uniform(2), uniform(2), cfg);
  EXPECT_NEAR(g.gamma(0, 0), 0.5, 1e-4);
  EXPECT_NEAR(g.gamma(1, 1), 0.5, 1e-4);
  EXPECT_NEAR(g.transport_cost, 0.0, 1e-4);
}

TEST(Sinkhorn, RandomTwoByTwoAgainstLpOracle) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  SinkhornConfig cfg;
  cfg.epsilon = 1e-4;
  cfg.max_iters = 50000;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix cm = random_matrix(2, 2, rng);
    Eigen::Vector2d a, b;
    a << u(rng), 0.0;
    a(1) = 1.0 - a(0);
    b << u(rng), 0.0;
    b(1) = 1.0 - b(0);
    const auto lp = testing::lp_2x2(cm, a, b);
    const auto g = sinkhorn({cm, 1.0}, a, b, cfg);
    EXPECT_NEAR(g.transport_cost, lp.value, 1e-4);
  }
}

TEST(Sinkhorn, RandomProblemsMeetMarginals) {
  std::mt19937_64 rng(11);
  for (int n : {8, 64}) {
    for (int trial = 0; trial < 20; ++trial) {
      const CostMatrix c{random_matrix(n, n, rng), 1.0};
      const auto g = sinkhorn(c, uniform(n), uniform(n), {});
      EXPECT_TRUE(g.converged);
      EXPECT_LE(marginal_error(g, uniform(n), uniform(n)), 1e-6);
      EXPECT_GE(g.gamma.minCoeff(), 0.0);
      EXPECT_NEAR(g.transport_cost, (g.gamma.array() * c.values.array()).sum(), 1e-12);
    }
  }
}

TEST(Sinkhorn, NonUniformWeightsAndRectangular) {
  std::mt19937_64 rng(12);
  Vector mu = random_matrix(7, 1, rng, 0.1, 1.0);
  Vector nu = random_matrix(11, 1, rng, 0.1, 1.0);
  mu /= mu.sum();
  nu /= nu.sum();
  const auto g = sinkhorn({random_matrix(7, 11, rng), 1.0}, mu, nu, {});
  EXPECT_LE(marginal_error(g, mu, nu), 1e-6);
}

TEST(Sinkhorn, MonotoneEpsilonBiasTowardsLp) {
  std::mt19937_64 rng(13);
  SinkhornConfig cfg;
  cfg.max_iters = 100000;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix cm = random_matrix(4, 4, rng);
    const double lp = testing::lp_permutation_value(cm);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 1e-3, 1e-4}) {
      cfg.epsilon = eps;
      const auto g = sinkhorn({cm, 1.0}, uniform(4), uniform(4), cfg);
      // Slack covers the 1e-6 marginal tolerance of each solve.
      EXPECT_LE(g.transport_cost, prev + 1e-5) << "eps " << eps;
      EXPECT_GE(g.transport_cost, lp - 1e-5);
      prev = g.transport_cost;
    }
    EXPECT_NEAR(prev, lp, 1e-4);
  }
}

TEST(Sinkhorn, OneDimensionalLimitMatchesW1) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n01(0.0, 1.0);
  SinkhornConfig cfg;
  cfg.max_iters = 100000;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(16), b(16);
    for (auto& v : a) v = n01(rng);
    for (auto& v : b) v = n01(rng) + 0.7;
    Matrix c(16, 16);
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) c(i, j) = std::abs(a[i] - b[j]);
    }
    cfg.epsilon = 2e-4;
    const auto g = sinkhorn({c, 1.0}, uniform(16), uniform(16), cfg);
    EXPECT_NEAR(g.transport_cost, wasserstein_1d(a, b), 1e-3);
  }
}

TEST(Sinkhorn, RejectsBadInput) {
  Matrix c = Matrix::Ones(2, 2);
  c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sinkhorn({c, 1.0}, uniform(2), uniform(2), {}), std::invalid_argument);
  EXPECT_THROW(sinkhorn({Matrix::Ones(2, 3), 1.0}, uniform(2), uniform(2), {}), std::invalid_argument);
  SinkhornConfig bad;
  bad.marginal_tol = 0.0;
  EXPECT_THROW(sinkhorn({Matrix::Ones(2, 2), 1.0}, uniform(2), uniform(2), bad), std::invalid_argument);
}

TEST(Sinkhorn, FlagsNonConvergence) {
  std::mt19937_64 rng(15);
  SinkhornConfig cfg;
  cfg.max_iters = 1;
  cfg.epsilon = 1e-3;
  const auto g = sinkhorn({random_matrix(16, 16, rng), 1.0}, uniform(16), uniform(16), cfg);
  EXPECT_FALSE(g.converged);
  EXPECT_TRUE(g.gamma.allFinite());
}

TEST(Sinkhorn, EpsilonDefaultsToScaledMeanCost) {
  SinkhornConfig cfg;
  Matrix c(1, 2);
  c << 1.0, 3.0;
  EXPECT_DOUBLE_EQ(cfg.resolve_epsilon(c), 0.2);
  cfg.epsilon = 0.5;
  EXPECT_DOUBLE_EQ(cfg.resolve_epsilon(c), 0.5);
}

TEST(Entropy, ZeroLogZeroConvention) {
  Matrix g(2, 2);
  g << 0.5, 0.0, 0.0, 0.5;
  EXPECT_NEAR(shannon_entropy(g), std::log(2.0), 1e-15);
}

TEST(JointCost, Examples) {
  Matrix z(1, 2), zt(1, 2), y(1, 2), yhat(1, 2);
  z << 0, 0;
  zt << 2, 0;
  y << 0, 0;
  yhat << 1, 0;
  EXPECT_DOUBLE_EQ(joint_cost(z, y, zt, yhat, 0.5).values(0, 0), 3.0);

  std::mt19937_64 rng(16);
  const Matrix zs = random_matrix(5, 3, rng);
  const Matrix ys = random_matrix(5, 2, rng);
  const auto c = joint_cost(zs, ys, random_matrix(5, 3, rng), ys, 0.0);
  EXPECT_EQ(c.values.diagonal().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(joint_cost(zs, ys, random_matrix(5, 4, rng), ys, 1.0), ArgumentError);
  EXPECT_THROW(joint_cost(zs, ys, zs, random_matrix(5, 3, rng), 1.0), ArgumentError);
}

TEST(JointCost, RotationInvariant) {
  std::mt19937_64 rng(17);
  const Matrix zs = random_matrix(6, 2, rng), zt = random_matrix(4, 2, rng);
  const Matrix ys = random_matrix(6, 2, rng), yt = random_matrix(4, 2, rng);
  Eigen::Matrix2d r;
  const double a = 0.7;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const auto c1 = joint_cost(zs, ys, zt, yt, 0.3);
  const auto c2 = joint_cost(zs * r.transpose(), ys, zt * r.transpose(), yt, 0.3);
  EXPECT_LE((c1.values - c2.values).cwiseAbs().maxCoeff(), 1e-12);
}

CostBuilder sq_cost(double alpha = 1.0) {
  return [alpha](const Matrix& a, const Matrix& b) { return feature_cost(a, b, alpha); };
}

TEST(Divergence, SelfDivergenceVanishes) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const auto mu = EmpiricalDistribution::uniform(random_matrix(20, 4, rng));
    const auto r = sinkhorn_divergence(mu, mu, sq_cost(), {});
    EXPECT_LE(std::abs(r.value), 1e-6);
  }
}

TEST(Divergence, TranslatedClustersGiveSquaredShift) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> n(0.0, 0.05);
  Matrix pts(40, 2);
  for (int i = 0; i < 40; ++i) pts.row(i) << (i < 20 ? 0.0 : 5.0) + n(rng), n(rng);
  const double delta = 0.8;
  Matrix shifted = pts;
  shifted.col(1).array() += delta;
  SinkhornConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.max_iters = 20000;
  const auto r = sinkhorn_divergence(EmpiricalDistribution::uniform(pts),
                                     EmpiricalDistribution::uniform(shifted), sq_cost(), cfg);
  EXPECT_NEAR(r.value, delta * delta, 0.05 * delta * delta);
  const auto back = sinkhorn_divergence(EmpiricalDistribution::uniform(shifted),
                                        EmpiricalDistribution::uniform(pts), sq_cost(), cfg);
  EXPECT_NEAR(back.value, r.value, 1e-5);
}

TEST(Divergence, ReturnsCrossCoupling) {
  std::mt19937_64 rng(20);
  const auto mu = EmpiricalDistribution::uniform(random_matrix(6, 2, rng));
  const auto nu = EmpiricalDistribution::uniform(random_matrix(9, 2, rng));
  const auto r = sinkhorn_divergence(mu, nu, sq_cost(), {});
  EXPECT_EQ(r.coupling.gamma.rows(), 6);
  EXPECT_EQ(r.coupling.gamma.cols(), 9);
  EXPECT_NEAR(r.value, r.cross - 0.5 * (r.self_mu + r.self_nu), 1e-15);
}

TEST(Distribution, ValidatesWeights) {
  EmpiricalDistribution d{Matrix::Zero(2, 1), Vector::Constant(2, 0.4)};
  EXPECT_THROW(d.validate(), std::invalid_argument);
  d.weights << 0.5, 0.5;
  EXPECT_NO_THROW(d.validate());
}

}  // namespace
}  // namespace imuot::ot
