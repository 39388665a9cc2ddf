#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "imuot/baseline.hpp"
#include "imuot/error.hpp"
#include "imuot/sim.hpp"

namespace imuot {
namespace {

constexpr double kPi = std::numbers::pi;

std::vector<ImuSample> constant_samples(int n, Eigen::Vector3d accel, double gyro_z, double heading) {
  std::vector<ImuSample> imu(n);
  for (int i = 0; i < n; ++i) {
    imu[i].t = i / kImuRateHz;
    imu[i].accel = accel;
    imu[i].gyro = {0.0, 0.0, gyro_z};
    imu[i].mag = {std::cos(heading), -std::sin(heading), 0.0};
  }
  return imu;
}

TEST(Heading, GyroOnlyIntegratesRate) {
  const double omega = 0.3;
  const auto imu = constant_samples(141, Eigen::Vector3d::Zero(), omega, 0.0);
  const auto h = estimate_heading(imu, 0.0, 0.0);
  ASSERT_EQ(h.size(), imu.size());
  EXPECT_NEAR(h.back(), omega * 2.0, 1e-12);
}

TEST(Heading, FullGainFollowsMagnetometer) {
  auto imu = constant_samples(50, Eigen::Vector3d::Zero(), 0.7, 0.0);
  for (int i = 0; i < 50; ++i) {
    const double phi = wrap_angle(0.13 * i);
    imu[i].mag = {std::cos(phi), -std::sin(phi), 0.0};
  }
  const auto h = estimate_heading(imu, 1.0);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(h[i], wrap_angle(0.13 * i), 1e-12);
}

TEST(Heading, BiasedGyroSettlesAtFixedPoint) {
  const double bias = 0.01;
  const double gain = 0.02;
  const auto imu = constant_samples(20 * 70, Eigen::Vector3d::Zero(), bias, 0.4);
  const auto h = estimate_heading(imu, gain);
  // e = (1 - g)(e + b dt) at the fixed point.
  const double dt = 1.0 / kImuRateHz;
  const double fixed = (1.0 - gain) * bias * dt / gain;
  EXPECT_NEAR(wrap_angle(h.back() - 0.4), fixed, 1e-6);
  EXPECT_NEAR(fixed, bias * dt / gain, 2e-4);
}

TEST(Heading, RejectsBadGain) {
  const auto imu = constant_samples(3, Eigen::Vector3d::Zero(), 0.0, 0.0);
  EXPECT_THROW(estimate_heading(imu, 1.5), ArgumentError);
}

TEST(DoubleIntegrate, ZeroAccelerationStaysPut) {
  const auto imu = constant_samples(100, Eigen::Vector3d(0, 0, 9.81), 0.0, 0.0);
  const std::vector<double> h(100, 0.0);
  const auto tr = double_integrate(imu, h);
  EXPECT_EQ(tr.poses.back().x, 0.0);
  EXPECT_EQ(tr.poses.back().y, 0.0);
}

TEST(DoubleIntegrate, ConstantAccelerationMatchesKinematics) {
  const auto imu = constant_samples(141, Eigen::Vector3d(1.0, 0.0, 9.81), 0.0, 0.0);
  const std::vector<double> east(141, 0.0);
  const auto tr = double_integrate(imu, east);
  EXPECT_NEAR(tr.poses.back().x, 0.5 * 1.0 * 2.0 * 2.0, 1e-3);
  EXPECT_NEAR(tr.poses.back().y, 0.0, 1e-12);

  const std::vector<double> north(141, kPi / 2);
  const auto tn = double_integrate(imu, north);
  EXPECT_NEAR(tn.poses.back().x, 0.0, 1e-12);
  EXPECT_NEAR(tn.poses.back().y, 2.0, 1e-3);
  EXPECT_THROW(double_integrate(imu, std::vector<double>(3, 0.0)), ArgumentError);
}

TEST(DoubleIntegrate, RotatingInputRotatesOutput) {
  NoiseModel nm;
  nm.seed = 3;
  std::vector<TimedPose> path(700);
  for (int i = 0; i < 700; ++i) path[i] = {i / kImuRateHz, {0.0, 0.0, 0.2}};
  const auto imu = imu_from_trajectory(path, {0.02, 0.0}, nm);
  std::vector<double> h(imu.size(), 0.2), hr(imu.size(), 0.2 + 0.9);
  const auto a = double_integrate(imu, h);
  const auto b = double_integrate(imu, hr);
  const double c = std::cos(0.9), s = std::sin(0.9);
  EXPECT_NEAR(b.poses.back().x, c * a.poses.back().x - s * a.poses.back().y, 1e-12);
  EXPECT_NEAR(b.poses.back().y, s * a.poses.back().x + c * a.poses.back().y, 1e-12);
}

TEST(DoubleIntegrate, StationaryErrorGrowsSuperlinearly) {
  std::vector<double> ratios;
  for (int seed = 0; seed < 20; ++seed) {
    std::vector<TimedPose> path(1401);
    for (int i = 0; i < 1401; ++i) path[i] = {i / kImuRateHz, {1.0, 1.0, 0.3}};
    const auto imu = imu_from_trajectory(path, {0.02, 0.0}, NoiseSpec{}.draw(500 + seed));
    const auto h = estimate_heading(imu, 0.02);
    FusionState start;
    start.position = {1.0, 1.0};
    const auto tr = double_integrate(imu, h, start);
    const double e10 = std::hypot(tr.poses[700].x - 1.0, tr.poses[700].y - 1.0);
    const double e20 = std::hypot(tr.poses[1400].x - 1.0, tr.poses[1400].y - 1.0);
    ratios.push_back(e20 / e10);
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = 0.5 * (ratios[9] + ratios[10]);
  // A constant bias integrates to t^2 (ratio 4); white noise alone to t^1.5.
  EXPECT_GT(median, 2.0);
  EXPECT_LT(median, 4.5);
}

}  // namespace
}  // namespace imuot
