#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "imuot/dataset_io.hpp"
#include "imuot/error.hpp"
#include "imuot/sim.hpp"
#include "imuot/windowing.hpp"
#include "support.hpp"

namespace imuot {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(Translate, EquationExamples) {
  const Point2D a = translate_slam_to_imu({2.0, -1.0, 0.4}, {0.0, 0.0});
  EXPECT_EQ(a.x, 2.0);
  EXPECT_EQ(a.y, -1.0);
  const Point2D b = translate_slam_to_imu({0.0, 0.0, 0.0}, {1.0, 0.0});
  EXPECT_EQ(b.x, 1.0);
  EXPECT_EQ(b.y, 0.0);
  const Point2D c = translate_slam_to_imu({0.0, 0.0, kPi / 2}, {1.0, 0.0});
  EXPECT_NEAR(c.x, 0.0, 1e-15);
  EXPECT_NEAR(c.y, 1.0, 1e-15);
}

TEST(Translate, IsometryInRadius) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  const RigidBodyOffset off{0.03, -0.02};
  for (int i = 0; i < 100; ++i) {
    const Pose2D p{u(rng), u(rng), u(rng)};
    const Point2D q = translate_slam_to_imu(p, off);
    EXPECT_NEAR(std::hypot(q.x - p.x, q.y - p.y), off.r_imu(), 1e-14);
  }
}

TEST(Offset, DerivedQuantities) {
  const RigidBodyOffset o{0.03, 0.04};
  EXPECT_DOUBLE_EQ(o.r_imu(), 0.05);
  EXPECT_DOUBLE_EQ(o.phi_imu(), std::atan2(0.04, 0.03));
  for (int k = 0; k < kNumDomains; ++k) EXPECT_DOUBLE_EQ(DomainIndex(k).offset_cm(), -0.4 + k);
  EXPECT_THROW(DomainIndex(8), std::invalid_argument);
  EXPECT_THROW(DomainIndex(-1), std::invalid_argument);
}

TEST(Trajectory, DeterministicAndSized) {
  const Arena arena;
  const auto a = generate_trajectory(20.0, arena, 5);
  const auto b = generate_trajectory(20.0, arena, 5);
  ASSERT_EQ(a.size(), 1400u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].t, b[i].t);
    EXPECT_EQ(a[i].pose.x, b[i].pose.x);
    EXPECT_EQ(a[i].pose.y, b[i].pose.y);
    EXPECT_EQ(a[i].pose.phi, b[i].pose.phi);
  }
}

TEST(Trajectory, RespectsLimits) {
  const Arena arena;
  const TrajectoryConfig cfg;
  const auto p = generate_trajectory(120.0, arena, 9, cfg);
  const double dt = 1.0 / kImuRateHz;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const auto& a = p[i - 1].pose;
    const auto& b = p[i].pose;
    EXPECT_LE(std::hypot(b.x - a.x, b.y - a.y) / dt, cfg.max_speed + 1e-9);
    EXPECT_LE(std::abs(wrap_angle(b.phi - a.phi)) / dt, cfg.max_yaw_rate + 1e-9);
    EXPECT_GE(b.x, arena.x_min);
    EXPECT_LE(b.x, arena.x_max);
    EXPECT_GE(b.y, arena.y_min);
    EXPECT_LE(b.y, arena.y_max);
    EXPECT_GT(b.phi, -kPi);
    EXPECT_LE(b.phi, kPi);
  }
}

TEST(Trajectory, ZeroSegmentsIsStationary) {
  TrajectoryConfig cfg;
  cfg.max_segments = 0;
  const auto p = generate_trajectory(5.0, Arena{}, 1, cfg);
  for (const auto& tp : p) {
    EXPECT_EQ(tp.pose.x, p.front().pose.x);
    EXPECT_EQ(tp.pose.y, p.front().pose.y);
    EXPECT_EQ(tp.pose.phi, p.front().pose.phi);
  }
}

TEST(Trajectory, RejectsDegenerateArena) {
  Arena arena;
  arena.x_max = arena.x_min;
  EXPECT_THROW(generate_trajectory(20.0, arena, 1), ConfigError);
  EXPECT_THROW(generate_trajectory(0.0, Arena{}, 1), std::invalid_argument);
}

TEST(Imu, StationaryReadings) {
  std::vector<TimedPose> path(70);
  for (int i = 0; i < 70; ++i) path[i] = {i / kImuRateHz, {1.0, 2.0, 0.6}};
  const auto imu = imu_from_trajectory(path, {0.05, 0.0}, NoiseModel::noiseless(), 9.81);
  for (const auto& s : imu) {
    EXPECT_NEAR(s.accel.x(), 0.0, 1e-12);
    EXPECT_NEAR(s.accel.y(), 0.0, 1e-12);
    EXPECT_EQ(s.accel.z(), 9.81);
    EXPECT_NEAR(s.gyro.norm(), 0.0, 1e-12);
    // World field [1, 0, 0] seen from a body rotated by phi.
    EXPECT_NEAR(s.mag.x(), std::cos(0.6), 1e-12);
    EXPECT_NEAR(s.mag.y(), -std::sin(0.6), 1e-12);
  }
}

TEST(Imu, SpinCentripetalMatchesFiniteDifferences) {
  const double omega = 1.2;
  const RigidBodyOffset off{0.066, 0.0};
  const auto path = testing::spin_path(omega, 10.0);
  const auto imu = imu_from_trajectory(path, off, NoiseModel::noiseless());
  const auto fd = testing::fd_body_accel(path, off);
  for (std::size_t i = 100; i < 600; ++i) {
    const Eigen::Vector2d a(imu[i].accel.x(), imu[i].accel.y());
    EXPECT_NEAR(a.norm(), omega * omega * off.r_imu(), 0.01 * omega * omega * off.r_imu());
    EXPECT_NEAR(a.norm(), fd[i - 1].norm(), 0.01 * fd[i - 1].norm());
    EXPECT_LT(a.x(), 0.0);
    EXPECT_NEAR(a.y(), 0.0, 1e-6);
    EXPECT_NEAR(imu[i].gyro.z(), omega, 1e-9);
  }
}

TEST(Imu, CircleMeanAccelIncludesOffset) {
  const double radius = 1.0;
  const double omega = 0.35;
  const double r = 0.05;
  // Body y points to the centre of a counter-clockwise circle, so outward is -y.
  const RigidBodyOffset off{0.0, -r};
  const auto path = testing::circle_path(radius, omega, 20.0);
  const auto imu = imu_from_trajectory(path, off, NoiseModel::noiseless());
  double mean = 0.0;
  int count = 0;
  for (std::size_t i = 5; i + 5 < imu.size(); ++i, ++count) {
    mean += std::hypot(imu[i].accel.x(), imu[i].accel.y());
  }
  mean /= count;
  const double expected = omega * omega * (radius + r);
  EXPECT_NEAR(mean, expected, 0.01 * expected);
}

TEST(Imu, WorldAccelMatchesGroundtruthSecondDifference) {
  const auto path = generate_trajectory(60.0, Arena{}, 21);
  const RigidBodyOffset off{0.046, 0.0};
  const auto imu = imu_from_trajectory(path, off, NoiseModel::noiseless());
  const auto fd = testing::fd_body_accel(path, off);
  double sq = 0.0;
  int n = 0;
  for (std::size_t i = 1; i + 1 < path.size(); ++i, ++n) {
    const Eigen::Vector2d diff(imu[i].accel.x() - fd[i - 1].x(), imu[i].accel.y() - fd[i - 1].y());
    sq += diff.squaredNorm();
  }
  EXPECT_LE(std::sqrt(sq / n), 1e-3);
}

TEST(Imu, GyroIndependentOfOffset) {
  const auto path = generate_trajectory(20.0, Arena{}, 4);
  NoiseModel noise;
  noise.seed = 77;
  noise.gyro_bias << 0.001, -0.002, 0.0015;
  const auto a = imu_from_trajectory(path, DomainIndex(0).offset(), noise);
  const auto b = imu_from_trajectory(path, DomainIndex(7).offset(), noise);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].gyro, b[i].gyro);
    EXPECT_EQ(a[i].mag, b[i].mag);
  }
}

TEST(Dataset, ShapeSplitAndOffsets) {
  DatasetConfig cfg;
  cfg.seqs_per_domain = 10;
  const auto ds = build_dataset(cfg, 7);
  EXPECT_EQ(ds.train_ids.size(), 8u);
  EXPECT_EQ(ds.test_ids.size(), 2u);
  for (int k = 0; k < kNumDomains; ++k) {
    const auto& s = ds.session(k);
    EXPECT_EQ(s.sequence_count(), 10);
    EXPECT_EQ(s.imu.size(), 14000u);
    EXPECT_DOUBLE_EQ(s.domain.offset_cm(), -0.4 + k);
    EXPECT_NEAR(s.groundtruth.back().t - s.groundtruth.front().t, 200.0, 1e-9);
    EXPECT_NEAR(s.imu.back().t - s.imu.front().t, 200.0 - 1.0 / kImuRateHz, 1e-9);
    for (std::size_t i = 1; i < s.imu.size(); ++i) ASSERT_GT(s.imu[i].t, s.imu[i - 1].t);
    // Shared trajectory and noise stream: gyro equal across offsets.
    EXPECT_EQ(s.imu[500].gyro, ds.session(0).imu[500].gyro);
  }
  EXPECT_NE(ds.session(0).imu[500].accel, ds.session(7).imu[500].accel);
}

TEST(Dataset, HundredSequencesSplitEightyTwenty) {
  std::vector<int> train, test;
  split_sequences(100, 0.8, 3, train, test);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(test.size(), 20u);
  std::vector<int> all = train;
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(Dataset, PerDomainNoiseDiffers) {
  DatasetConfig cfg;
  cfg.seqs_per_domain = 2;
  cfg.noise_sharing = NoiseSharing::kPerDomain;
  const auto ds = build_dataset(cfg, 7);
  EXPECT_NE(ds.session(0).imu[100].gyro, ds.session(1).imu[100].gyro);
  EXPECT_EQ(parse_noise_sharing(noise_sharing_name(NoiseSharing::kSharedBias)), NoiseSharing::kSharedBias);
  EXPECT_THROW(parse_noise_sharing("sometimes"), std::invalid_argument);
}

TEST(Dataset, RoundTripsThroughDisk) {
  testing::TempDir dir("ds");
  DatasetConfig cfg;
  cfg.seqs_per_domain = 2;
  cfg.groundtruth_jitter = 0.01;
  const auto ds = build_dataset(cfg, 11);
  save_dataset(dir.path() / "d", ds);
  for (int k = 0; k < kNumDomains; ++k) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "d" / ("domain_" + std::to_string(k)) / "imu.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "d" / ("domain_" + std::to_string(k)) / "gt.csv"));
  }
  const auto back = load_dataset(dir.path() / "d");
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.train_ids, ds.train_ids);
  EXPECT_EQ(back.test_ids, ds.test_ids);
  EXPECT_EQ(back.config.noise_sharing, ds.config.noise_sharing);
  for (int k = 0; k < kNumDomains; ++k) {
    const auto& a = ds.session(k);
    const auto& b = back.session(k);
    ASSERT_EQ(a.imu.size(), b.imu.size());
    for (std::size_t i = 0; i < a.imu.size(); i += 97) {
      EXPECT_EQ(a.imu[i].t, b.imu[i].t);
      EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
      EXPECT_EQ(a.imu[i].gyro, b.imu[i].gyro);
      EXPECT_EQ(a.imu[i].mag, b.imu[i].mag);
    }
    ASSERT_EQ(a.groundtruth.size(), b.groundtruth.size());
    for (std::size_t i = 0; i < a.groundtruth.size(); ++i) {
      EXPECT_EQ(a.groundtruth[i].pose.x, b.groundtruth[i].pose.x);
      EXPECT_EQ(a.groundtruth[i].pose.phi, b.groundtruth[i].pose.phi);
    }
  }
  EXPECT_THROW(load_dataset(dir.path() / "missing"), DataError);
}

TEST(Windowing, LabelsFollowInterpolatedGroundtruth) {
  DatasetConfig cfg;
  cfg.seqs_per_domain = 2;
  const auto ds = build_dataset(cfg, 5);
  WindowingConfig wc;
  wc.head = Head::kPolar;
  const auto& s = ds.session(2);
  const Matrix labels = window_labels(s, 1, wc);
  const auto ref = reference_trajectory(s, 1, wc);
  ASSERT_EQ(labels.rows(), wc.steps);
  ASSERT_EQ(ref.poses.size(), static_cast<std::size_t>(wc.steps + 1));
  for (int k = 0; k < wc.steps; ++k) {
    const auto& a = ref.poses[k];
    const auto& b = ref.poses[k + 1];
    EXPECT_NEAR(labels(k, 0), std::hypot(b.x - a.x, b.y - a.y), 1e-12);
    EXPECT_NEAR(labels(k, 1), wrap_angle(b.phi - a.phi), 1e-12);
    EXPECT_GT(labels(k, 1), -kPi);
    EXPECT_LE(labels(k, 1), kPi);
  }
  // Groundtruth samples land exactly on the 5 Hz poses.
  const Pose2D g = groundtruth_at_sample(s, 14 * 37);
  EXPECT_DOUBLE_EQ(g.x, s.groundtruth[37].pose.x);
}

}  // namespace
}  // namespace imuot
