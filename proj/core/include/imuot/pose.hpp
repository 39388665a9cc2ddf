#pragma once

#include <cmath>
#include <numbers>
#include <vector>

namespace imuot {

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a + kPi, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a - kPi;
}

struct Pose2D {
  double x = 0.0;    // metres
  double y = 0.0;    // metres
  double phi = 0.0;  // heading, radians in (-pi, pi]
};

struct TimedPose {
  double t = 0.0;
  Pose2D pose;
};

// Estimated or reference path; Cartesian estimates carry no heading.
struct Trajectory2D {
  std::vector<Pose2D> poses;
  bool has_heading = true;
};

}  // namespace imuot
