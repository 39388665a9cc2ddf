#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

#include "imuot/pose.hpp"
#include "imuot/sim.hpp"

namespace imuot {

struct FusionState {
  double heading = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double complementary_gain = 0.02;
};

// Absolute heading implied by a body-frame magnetometer reading.
double magnetometer_heading(const ImuSample& sample);

// Complementary filter: gyro integration pulled towards the magnetometer heading.
// Starts from `initial_heading` or, when absent, the first magnetometer heading.
std::vector<double> estimate_heading(std::span<const ImuSample> imu, double gain = 0.02,
                                     std::optional<double> initial_heading = std::nullopt);

// Rotates in-plane acceleration to the world frame and integrates twice (trapezoidal).
// One pose per sample; the heading is copied from `headings`.
Trajectory2D double_integrate(std::span<const ImuSample> imu, std::span<const double> headings,
                              const FusionState& initial = {});

}  // namespace imuot
