#include "imuot/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "imuot/error.hpp"
#include "imuot/seed.hpp"

namespace imuot {

namespace {

constexpr double kPi = std::numbers::pi;

double approach(double current, double target, double max_step) {
  return current + std::clamp(target - current, -max_step, max_step);
}

bool finite3(const Eigen::Vector3d& v) { return v.allFinite(); }

// Segment-level state machine for the differential-drive robot.
class DriveController {
 public:
  DriveController(const Arena& arena, const TrajectoryConfig& cfg, std::mt19937_64& rng)
      : arena_(arena), cfg_(cfg), rng_(rng) {}

  void start_segment(double x, double y) {
    if (cfg_.max_segments && segments_started_ >= *cfg_.max_segments) {
      mode_ = Mode::kHalt;
      return;
    }
    ++segments_started_;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    elapsed_ = 0.0;
    if (unit(rng_) < cfg_.spin_probability) {
      mode_ = Mode::kSpin;
      const double sign = unit(rng_) < 0.5 ? -1.0 : 1.0;
      spin_remaining_ = std::uniform_real_distribution<double>(kPi / 2.0, 2.0 * kPi)(rng_);
      spin_rate_ = sign * std::uniform_real_distribution<double>(0.8, cfg_.max_yaw_rate)(rng_);
      return;
    }
    mode_ = Mode::kDrive;
    const double m = cfg_.arena_margin;
    // Retry until the waypoint is not trivially close.
    for (int attempt = 0; attempt < 16; ++attempt) {
      wx_ = std::uniform_real_distribution<double>(arena_.x_min + m, arena_.x_max - m)(rng_);
      wy_ = std::uniform_real_distribution<double>(arena_.y_min + m, arena_.y_max - m)(rng_);
      if (std::hypot(wx_ - x, wy_ - y) > 4.0 * cfg_.waypoint_tolerance) break;
    }
    cruise_ = std::uniform_real_distribution<double>(cfg_.min_cruise_speed, cfg_.max_speed)(rng_);
    radius_ = std::uniform_real_distribution<double>(cfg_.min_turn_radius, cfg_.max_turn_radius)(rng_);
  }

  // Computes commanded (v, omega) and advances segment bookkeeping.
  void command(double x, double y, double phi, double v, double omega, double dt, double& v_cmd,
               double& w_cmd) {
    elapsed_ += dt;
    v_cmd = 0.0;
    w_cmd = 0.0;
    switch (mode_) {
      case Mode::kHalt:
        return;
      case Mode::kSpin: {
        if (std::abs(v) > 1e-12) return;  // come to rest before spinning
        spin_remaining_ -= std::abs(omega) * dt;
        const double braking = omega * omega / (2.0 * cfg_.max_yaw_accel);
        if (spin_remaining_ <= 0.0 || elapsed_ > 60.0) {
          if (std::abs(omega) < 1e-12) start_segment(x, y);
          return;
        }
        w_cmd = spin_remaining_ <= braking ? 0.0 : spin_rate_;
        return;
      }
      case Mode::kDrive: {
        const double dx = wx_ - x;
        const double dy = wy_ - y;
        if (std::hypot(dx, dy) < cfg_.waypoint_tolerance || elapsed_ > 60.0) {
          start_segment(x, y);
          command(x, y, phi, v, omega, 0.0, v_cmd, w_cmd);
          return;
        }
        const double err = wrap_angle(std::atan2(dy, dx) - phi);
        v_cmd = cruise_ * std::max(0.0, std::cos(err));
        const double w_cap = std::min(cfg_.max_yaw_rate, std::max(v_cmd / radius_, 0.6));
        w_cmd = std::clamp(2.0 * err, -w_cap, w_cap);
        if (near_wall(x, y, phi, v)) v_cmd = 0.0;
        return;
      }
    }
  }

 private:
  enum class Mode { kHalt, kSpin, kDrive };

  // True when continuing forward would come within reach of a wall before stopping.
  bool near_wall(double x, double y, double phi, double v) const {
    const double reach = v * v / (2.0 * cfg_.max_linear_accel) + 0.1;
    const double ax = x + reach * std::cos(phi);
    const double ay = y + reach * std::sin(phi);
    const double guard = 0.05;
    return ax < arena_.x_min + guard || ax > arena_.x_max - guard || ay < arena_.y_min + guard ||
           ay > arena_.y_max - guard;
  }

  const Arena& arena_;
  const TrajectoryConfig& cfg_;
  std::mt19937_64& rng_;
  Mode mode_ = Mode::kHalt;
  int segments_started_ = 0;
  double elapsed_ = 0.0;
  double wx_ = 0.0, wy_ = 0.0, cruise_ = 0.0, radius_ = 1.0;
  double spin_remaining_ = 0.0, spin_rate_ = 0.0;
};

}  // namespace

DomainIndex::DomainIndex(int index) : index_(index) {
  if (index < 0 || index >= kNumDomains) {
    throw ArgumentError("domain index out of range: " + std::to_string(index));
  }
}

void NoiseModel::validate() const {
  if (!(accel_sigma >= 0.0) || !(gyro_sigma >= 0.0) || !(mag_sigma >= 0.0)) {
    throw ConfigError("noise sigmas must be non-negative");
  }
  if (!finite3(accel_bias) || !finite3(gyro_bias)) throw ConfigError("noise biases must be finite");
}

NoiseModel NoiseSpec::draw(std::uint64_t seed) const {
  NoiseModel model;
  model.accel_sigma = accel_sigma;
  model.gyro_sigma = gyro_sigma;
  model.mag_sigma = mag_sigma;
  model.seed = derive_seed(seed, {0x6e6f697365ULL});
  std::mt19937_64 rng(derive_seed(seed, {0x62696173ULL}));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 3; ++i) model.accel_bias[i] = accel_bias_range * unit(rng);
  for (int i = 0; i < 3; ++i) model.gyro_bias[i] = gyro_bias_range * unit(rng);
  return model;
}

std::vector<TimedPose> generate_trajectory(double duration, const Arena& arena, std::uint64_t seed,
                                           const TrajectoryConfig& cfg) {
  if (!(duration > 0.0)) throw ConfigError("trajectory duration must be positive");
  if (!(arena.x_max - arena.x_min > 2.0 * cfg.arena_margin) ||
      !(arena.y_max - arena.y_min > 2.0 * cfg.arena_margin)) {
    throw ConfigError("arena is degenerate or smaller than twice the wall margin");
  }
  if (!(cfg.max_speed > 0.0) || !(cfg.max_yaw_rate > 0.0) || !(cfg.max_linear_accel > 0.0) ||
      !(cfg.max_yaw_accel > 0.0) || !(cfg.min_turn_radius > 0.0) ||
      cfg.min_turn_radius > cfg.max_turn_radius || cfg.min_cruise_speed > cfg.max_speed) {
    throw ConfigError("invalid trajectory limits");
  }

  const auto count = static_cast<std::size_t>(std::llround(duration * kImuRateHz));
  const double dt = 1.0 / kImuRateHz;
  std::mt19937_64 rng(seed);
  const double m = cfg.arena_margin;
  double x = std::uniform_real_distribution<double>(arena.x_min + m, arena.x_max - m)(rng);
  double y = std::uniform_real_distribution<double>(arena.y_min + m, arena.y_max - m)(rng);
  double phi = std::uniform_real_distribution<double>(-kPi, kPi)(rng);
  double v = 0.0;
  double omega = 0.0;

  DriveController controller(arena, cfg, rng);
  controller.start_segment(x, y);

  std::vector<TimedPose> path;
  path.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    path.push_back({static_cast<double>(k) * dt, {x, y, wrap_angle(phi)}});
    double v_cmd = 0.0;
    double w_cmd = 0.0;
    controller.command(x, y, phi, v, omega, dt, v_cmd, w_cmd);
    v = approach(v, v_cmd, cfg.max_linear_accel * dt);
    omega = approach(omega, w_cmd, cfg.max_yaw_accel * dt);
    const double heading_mid = phi + 0.5 * omega * dt;
    x += v * dt * std::cos(heading_mid);
    y += v * dt * std::sin(heading_mid);
    phi += omega * dt;
  }
  return path;
}

std::vector<ImuSample> imu_from_trajectory(std::span<const TimedPose> path,
                                           const RigidBodyOffset& offset, const NoiseModel& noise,
                                           double gravity) {
  noise.validate();
  const std::size_t n = path.size();
  std::vector<ImuSample> out(n);
  if (n == 0) return out;

  // Unwrapped heading so that differences do not jump at +-pi.
  std::vector<double> heading(n);
  heading[0] = path[0].pose.phi;
  for (std::size_t k = 1; k < n; ++k) {
    heading[k] = heading[k - 1] + wrap_angle(path[k].pose.phi - path[k - 1].pose.phi);
  }
  const double dt = n > 1 ? path[1].t - path[0].t : 1.0 / kImuRateHz;

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::Vector2d r(offset.x_imu, offset.y_imu);
  const Eigen::Vector2d z_cross_r(-offset.y_imu, offset.x_imu);

  for (std::size_t k = 0; k < n; ++k) {
    // Central differences; the ends reuse their inner neighbour.
    const std::size_t c = n < 3 ? k : std::clamp<std::size_t>(k, 1, n - 2);
    Eigen::Vector2d a_center = Eigen::Vector2d::Zero();
    double omega = 0.0;
    double alpha = 0.0;
    if (n >= 3) {
      const auto& prev = path[c - 1].pose;
      const auto& cur = path[c].pose;
      const auto& next = path[c + 1].pose;
      a_center = Eigen::Vector2d(next.x - 2.0 * cur.x + prev.x, next.y - 2.0 * cur.y + prev.y) /
                 (dt * dt);
      omega = (heading[c + 1] - heading[c - 1]) / (2.0 * dt);
      alpha = (heading[c + 1] - 2.0 * heading[c] + heading[c - 1]) / (dt * dt);
    }
    const double phi = heading[k];
    const double cs = std::cos(phi);
    const double sn = std::sin(phi);
    // R(phi)^T * a
    const Eigen::Vector2d a_body(cs * a_center.x() + sn * a_center.y(),
                                 -sn * a_center.x() + cs * a_center.y());
    const Eigen::Vector2d a_xy = a_body + alpha * z_cross_r - omega * omega * r;

    ImuSample& s = out[k];
    s.t = path[k].t;
    s.accel = {a_xy.x() + noise.accel_bias.x(), a_xy.y() + noise.accel_bias.y(), gravity};
    s.gyro = {0.0, 0.0, omega + noise.gyro_bias.z()};
    s.mag = {cs, -sn, 0.0};
    // Fixed draw order keeps the gyro stream independent of the offset.
    for (int i = 0; i < 3; ++i) s.accel[i] += noise.accel_sigma * gauss(rng);
    for (int i = 0; i < 3; ++i) s.gyro[i] += noise.gyro_sigma * gauss(rng);
    for (int i = 0; i < 3; ++i) s.mag[i] += noise.mag_sigma * gauss(rng);
  }
  return out;
}

Point2D translate_slam_to_imu(const Pose2D& slam, const RigidBodyOffset& offset) {
  const double r = offset.r_imu();
  const double angle = slam.phi + offset.phi_imu();
  return {slam.x + r * std::cos(angle), slam.y + r * std::sin(angle)};
}

std::string_view noise_sharing_name(NoiseSharing s) {
  switch (s) {
    case NoiseSharing::kPerDomain:
      return "per_domain";
    case NoiseSharing::kSharedBias:
      return "shared_bias";
    case NoiseSharing::kShared:
      return "shared";
  }
  return "per_domain";
}

NoiseSharing parse_noise_sharing(std::string_view name) {
  if (name == "per_domain") return NoiseSharing::kPerDomain;
  if (name == "shared_bias") return NoiseSharing::kSharedBias;
  if (name == "shared") return NoiseSharing::kShared;
  throw ConfigError("unknown noise sharing '" + std::string(name) + "'");
}

void DatasetConfig::validate() const {
  if (seqs_per_domain < 1) throw ConfigError("seqs_per_domain must be at least 1");
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (!(groundtruth_jitter >= 0.0)) throw ConfigError("groundtruth_jitter must be non-negative");
  if (!std::isfinite(gravity)) throw ConfigError("gravity must be finite");
  if (noise.accel_sigma < 0.0 || noise.gyro_sigma < 0.0 || noise.mag_sigma < 0.0 ||
      noise.accel_bias_range < 0.0 || noise.gyro_bias_range < 0.0) {
    throw ConfigError("noise parameters must be non-negative");
  }
}

const Session& Dataset::session(int k) const {
  DomainIndex idx(k);
  if (!sessions[static_cast<std::size_t>(idx.index())]) {
    throw DataError("dataset has no session for domain " + std::to_string(k));
  }
  return *sessions[static_cast<std::size_t>(k)];
}

void split_sequences(int count, double train_fraction, std::uint64_t seed,
                     std::vector<int>& train_ids, std::vector<int>& test_ids) {
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) ids[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  int n_train = static_cast<int>(std::floor(train_fraction * count + 1e-9));
  n_train = std::clamp(n_train, 1, std::max(1, count - 1));
  if (count == 1) n_train = 1;
  train_ids.assign(ids.begin(), ids.begin() + n_train);
  test_ids.assign(ids.begin() + n_train, ids.end());
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
}

Dataset build_dataset(const DatasetConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.seed = seed;

  const int n = config.seqs_per_domain;
  const std::size_t imu_samples = static_cast<std::size_t>(n) * kSequenceSamples;
  // One extra dense sample so the groundtruth covers the end of the last window.
  const double duration = static_cast<double>(imu_samples + 1) / kImuRateHz;
  const auto path =
      generate_trajectory(duration, config.arena, derive_seed(seed, {1}), config.trajectory);

  const NoiseModel shared = config.noise.draw(derive_seed(seed, {4}));
  for (int k = 0; k < kNumDomains; ++k) {
    Session s;
    s.domain = DomainIndex(k);
    s.seed = derive_seed(seed, {2, static_cast<std::uint64_t>(k)});
    switch (config.noise_sharing) {
      case NoiseSharing::kPerDomain:
        s.noise = config.noise.draw(s.seed);
        break;
      case NoiseSharing::kSharedBias:
        s.noise = config.noise.draw(s.seed);
        s.noise.accel_bias = shared.accel_bias;
        s.noise.gyro_bias = shared.gyro_bias;
        break;
      case NoiseSharing::kShared:
        s.noise = shared;
        break;
    }
    s.imu = imu_from_trajectory(path, s.domain.offset(), s.noise, config.gravity);
    s.imu.resize(imu_samples);

    std::mt19937_64 jitter_rng(derive_seed(s.seed, {0x6a6974ULL}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < path.size(); i += kSamplesPerGroundtruth) {
      TimedPose gt = path[i];
      if (config.groundtruth_jitter > 0.0) {
        gt.pose.x += config.groundtruth_jitter * gauss(jitter_rng);
        gt.pose.y += config.groundtruth_jitter * gauss(jitter_rng);
      }
      s.groundtruth.push_back(gt);
    }
    ds.sessions[static_cast<std::size_t>(k)] = std::move(s);
  }
  split_sequences(n, config.train_fraction, derive_seed(seed, {3}), ds.train_ids, ds.test_ids);
  return ds;
}

}  // namespace imuot
