#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "imuot/pose.hpp"

namespace imuot {

inline constexpr double kImuRateHz = 70.0;
inline constexpr double kGroundtruthRateHz = 5.0;
inline constexpr int kSamplesPerGroundtruth = 14;  // 70 Hz / 5 Hz
inline constexpr int kSequenceSamples = 1400;      // 20 s at 70 Hz
inline constexpr int kNumDomains = 8;
inline constexpr double kDefaultGravity = 9.81;

// Sensor placement in the body frame; origin at the centre of mass.
struct RigidBodyOffset {
  double x_imu = 0.0;
  double y_imu = 0.0;

  double r_imu() const { return std::hypot(x_imu, y_imu); }
  double phi_imu() const { return std::atan2(y_imu, x_imu); }
};

struct ImuSample {
  double t = 0.0;
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();
  Eigen::Vector3d mag = Eigen::Vector3d::Zero();
};

// One of the eight slider positions along the body x-axis.
class DomainIndex {
 public:
  explicit DomainIndex(int index);

  int index() const { return index_; }
  double offset_cm() const { return -0.4 + 1.0 * index_; }
  RigidBodyOffset offset() const { return {offset_cm() / 100.0, 0.0}; }

 private:
  int index_;
};

struct NoiseModel {
  double accel_sigma = 0.05;
  double gyro_sigma = 0.005;
  double mag_sigma = 0.01;
  Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
  Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
  std::uint64_t seed = 0;

  static NoiseModel noiseless() { return {0.0, 0.0, 0.0, {}, {}, 0}; }
  void validate() const;
};

// Per-session noise settings from which a NoiseModel with biases is drawn.
struct NoiseSpec {
  double accel_sigma = 0.05;
  double gyro_sigma = 0.005;
  double mag_sigma = 0.01;
  double accel_bias_range = 0.05;  // uniform +-range per component
  double gyro_bias_range = 0.002;

  static NoiseSpec noiseless() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
  NoiseModel draw(std::uint64_t seed) const;
};

struct Arena {
  double x_min = 0.0;
  double x_max = 6.0;
  double y_min = 0.0;
  double y_max = 5.0;
};

struct TrajectoryConfig {
  double max_speed = 0.4;          // m/s
  double min_cruise_speed = 0.12;  // m/s
  double max_yaw_rate = 1.5;       // rad/s
  double max_linear_accel = 0.5;   // m/s^2
  double max_yaw_accel = 3.0;      // rad/s^2
  double min_turn_radius = 0.3;    // lower end of the randomized turn radius
  double max_turn_radius = 1.2;
  double spin_probability = 0.3;   // chance that a segment is an in-place spin
  double arena_margin = 0.6;       // waypoints keep this distance from the walls
  double waypoint_tolerance = 0.15;
  // Number of segments (waypoints or spins) to execute; unlimited when empty.
  std::optional<int> max_segments;
};

// Dense 70 Hz differential-drive path, deterministic in seed.
std::vector<TimedPose> generate_trajectory(double duration, const Arena& arena, std::uint64_t seed,
                                           const TrajectoryConfig& cfg = {});

// Body-frame IMU readings for a sensor rigidly mounted at `offset`.
std::vector<ImuSample> imu_from_trajectory(std::span<const TimedPose> path,
                                           const RigidBodyOffset& offset, const NoiseModel& noise,
                                           double gravity = kDefaultGravity);

struct Point2D {
  double x = 0.0;
  double y = 0.0;
};

// World position of a sensor given the centre-of-mass pose.
Point2D translate_slam_to_imu(const Pose2D& slam, const RigidBodyOffset& offset);

struct Session {
  DomainIndex domain{0};
  std::vector<ImuSample> imu;            // 70 Hz, sequence_count * 1400 samples
  std::vector<TimedPose> groundtruth;    // 5 Hz centre-of-mass poses, inclusive of the end time
  NoiseModel noise;
  std::uint64_t seed = 0;

  int sequence_count() const { return static_cast<int>(imu.size()) / kSequenceSamples; }
};

// How noise draws relate across the eight sessions.
enum class NoiseSharing {
  kPerDomain,   // independent biases and white noise per session
  kSharedBias,  // one bias draw for all sessions, independent white noise
  kShared,      // identical noise model and stream in every session
};

std::string_view noise_sharing_name(NoiseSharing s);
NoiseSharing parse_noise_sharing(std::string_view name);

struct DatasetConfig {
  int seqs_per_domain = 100;
  double train_fraction = 0.8;
  double gravity = kDefaultGravity;
  Arena arena;
  TrajectoryConfig trajectory;
  NoiseSpec noise;
  double groundtruth_jitter = 0.0;  // metres, gaussian, applied to x/y of groundtruth
  NoiseSharing noise_sharing = NoiseSharing::kShared;

  void validate() const;
};

struct Dataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::array<std::optional<Session>, kNumDomains> sessions;
  std::vector<int> train_ids;  // sequence indices, shared by all domains
  std::vector<int> test_ids;

  const Session& session(int k) const;
};

// Eight sessions sharing one trajectory family; noise draws differ per domain.
Dataset build_dataset(const DatasetConfig& config, std::uint64_t seed);

// Deterministic train/test partition of sequence indices.
void split_sequences(int count, double train_fraction, std::uint64_t seed,
                     std::vector<int>& train_ids, std::vector<int>& test_ids);

}  // namespace imuot
