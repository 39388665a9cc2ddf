#include "imuot/baseline.hpp"

#include <cmath>

#include "imuot/error.hpp"

namespace imuot {

double magnetometer_heading(const ImuSample& sample) {
  // mag = R(phi)^T * [1, 0, 0] = (cos phi, -sin phi, 0)
  return std::atan2(-sample.mag.y(), sample.mag.x());
}

std::vector<double> estimate_heading(std::span<const ImuSample> imu, double gain,
                                     std::optional<double> initial_heading) {
  if (!(gain >= 0.0 && gain <= 1.0)) throw ArgumentError("complementary gain must lie in [0, 1]");
  std::vector<double> heading;
  if (imu.empty()) return heading;
  heading.reserve(imu.size());
  double theta = wrap_angle(initial_heading.value_or(magnetometer_heading(imu[0])));
  heading.push_back(theta);
  for (std::size_t k = 1; k < imu.size(); ++k) {
    const double dt = imu[k].t - imu[k - 1].t;
    const double predicted = theta + imu[k - 1].gyro.z() * dt;
    const double correction = wrap_angle(magnetometer_heading(imu[k]) - predicted);
    theta = wrap_angle(predicted + gain * correction);
    heading.push_back(theta);
  }
  return heading;
}

Trajectory2D double_integrate(std::span<const ImuSample> imu, std::span<const double> headings,
                              const FusionState& initial) {
  if (imu.size() != headings.size()) throw ArgumentError("headings must align with samples");
  Trajectory2D traj;
  traj.has_heading = true;
  if (imu.empty()) return traj;
  traj.poses.reserve(imu.size());

  auto world_accel = [&](std::size_t k) {
    const double c = std::cos(headings[k]);
    const double s = std::sin(headings[k]);
    const double ax = imu[k].accel.x();
    const double ay = imu[k].accel.y();
    return Eigen::Vector2d(c * ax - s * ay, s * ax + c * ay);
  };

  Eigen::Vector2d v = initial.velocity;
  Eigen::Vector2d p = initial.position;
  Eigen::Vector2d a_prev = world_accel(0);
  traj.poses.push_back({p.x(), p.y(), wrap_angle(headings[0])});
  for (std::size_t k = 1; k < imu.size(); ++k) {
    const double dt = imu[k].t - imu[k - 1].t;
    const Eigen::Vector2d a = world_accel(k);
    const Eigen::Vector2d v_next = v + 0.5 * (a_prev + a) * dt;
    p += 0.5 * (v + v_next) * dt;
    v = v_next;
    a_prev = a;
    traj.poses.push_back({p.x(), p.y(), wrap_angle(headings[k])});
  }
  return traj;
}

}  // namespace imuot
