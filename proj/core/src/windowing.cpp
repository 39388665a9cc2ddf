#include "imuot/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imuot/error.hpp"

namespace imuot {

namespace {

long sequence_start(int sequence) { return static_cast<long>(sequence) * kSequenceSamples; }

void check_sequence(const Session& session, int sequence) {
  if (sequence < 0 || sequence >= session.sequence_count()) {
    throw ArgumentError("sequence index " + std::to_string(sequence) + " out of range");
  }
}

double channel_value(const ImuSample& s, int c) {
  if (c < 3) return s.accel[c];
  if (c < 6) return s.gyro[c - 3];
  return s.mag[c - 6];
}

}  // namespace

void WindowingConfig::validate() const {
  if (window < 1 || steps < 1 || window * steps != kSequenceSamples) {
    throw ConfigError("window * steps must equal " + std::to_string(kSequenceSamples) + " samples");
  }
}

std::vector<SequenceRef> sequences_for(const Dataset& dataset, std::span<const int> domains,
                                       Split split) {
  const auto& ids = split == Split::kTrain ? dataset.train_ids : dataset.test_ids;
  std::vector<SequenceRef> refs;
  for (int d : domains) {
    dataset.session(d);
    for (int q : ids) refs.push_back({d, q});
  }
  return refs;
}

Pose2D groundtruth_at_sample(const Session& session, long sample_index) {
  const auto& gt = session.groundtruth;
  if (gt.empty()) throw DataError("session has no groundtruth");
  const long last = static_cast<long>(gt.size()) - 1;
  const long i0 = std::clamp(sample_index / kSamplesPerGroundtruth, 0L, last);
  const long rem = sample_index - i0 * kSamplesPerGroundtruth;
  if (i0 == last || rem <= 0) return gt[static_cast<std::size_t>(i0)].pose;
  const double frac = static_cast<double>(rem) / kSamplesPerGroundtruth;
  const Pose2D& a = gt[static_cast<std::size_t>(i0)].pose;
  const Pose2D& b = gt[static_cast<std::size_t>(i0 + 1)].pose;
  return {a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y),
          wrap_angle(a.phi + frac * wrap_angle(b.phi - a.phi))};
}

Pose2D sensor_pose_at_sample(const Session& session, long sample_index) {
  const Pose2D com = groundtruth_at_sample(session, sample_index);
  const Point2D p = translate_slam_to_imu(com, session.domain.offset());
  return {p.x, p.y, com.phi};
}

Matrix window_labels(const Session& session, int sequence, const WindowingConfig& cfg) {
  cfg.validate();
  check_sequence(session, sequence);
  Matrix labels(cfg.steps, 2);
  const long start = sequence_start(sequence);
  Pose2D prev = sensor_pose_at_sample(session, start);
  for (int s = 0; s < cfg.steps; ++s) {
    const Pose2D next = sensor_pose_at_sample(session, start + static_cast<long>(s + 1) * cfg.window);
    const double dx = next.x - prev.x;
    const double dy = next.y - prev.y;
    if (cfg.head == Head::kCartesian) {
      labels(s, 0) = dx;
      labels(s, 1) = dy;
    } else {
      labels(s, 0) = std::hypot(dx, dy);
      labels(s, 1) = wrap_angle(next.phi - prev.phi);
    }
    prev = next;
  }
  return labels;
}

Trajectory2D reference_trajectory(const Session& session, int sequence, const WindowingConfig& cfg) {
  cfg.validate();
  check_sequence(session, sequence);
  Trajectory2D traj;
  const long start = sequence_start(sequence);
  for (int s = 0; s <= cfg.steps; ++s) {
    traj.poses.push_back(sensor_pose_at_sample(session, start + static_cast<long>(s) * cfg.window));
  }
  return traj;
}

InputScaler fit_scaler(const Dataset& dataset, std::span<const SequenceRef> refs,
                       const WindowingConfig& cfg) {
  const int C = cfg.channels();
  if (refs.empty()) return InputScaler::identity(C);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(C);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(C);
  double count = 0.0;
  for (const SequenceRef& r : refs) {
    const Session& s = dataset.session(r.domain);
    check_sequence(s, r.sequence);
    const long start = sequence_start(r.sequence);
    for (long k = start; k < start + kSequenceSamples; ++k) {
      const ImuSample& sample = s.imu[static_cast<std::size_t>(k)];
      for (int c = 0; c < C; ++c) {
        const double v = channel_value(sample, c);
        sum[c] += v;
        sq[c] += v * v;
      }
      count += 1.0;
    }
  }
  InputScaler scaler;
  scaler.mean = sum / count;
  scaler.scale.resize(C);
  for (int c = 0; c < C; ++c) {
    const double var = std::max(0.0, sq[c] / count - scaler.mean[c] * scaler.mean[c]);
    const double sd = std::sqrt(var);
    scaler.scale[c] = sd > 1e-6 ? 1.0 / sd : 1.0;
  }
  return scaler;
}

WindowBatch make_batch(const Dataset& dataset, std::span<const SequenceRef> refs,
                       const InputScaler& scaler, const WindowingConfig& cfg) {
  cfg.validate();
  if (refs.empty()) throw ArgumentError("make_batch needs at least one sequence");
  const int C = cfg.channels();
  if (scaler.mean.size() != C || scaler.scale.size() != C) {
    throw ArgumentError("input scaler does not match the channel count");
  }
  WindowBatch batch;
  batch.batch = static_cast<int>(refs.size());
  batch.steps = cfg.steps;
  batch.window = cfg.window;
  batch.channels = C;
  batch.inputs.resize(static_cast<Eigen::Index>(batch.batch) * kSequenceSamples, C);
  batch.labels.resize(batch.rows(), 2);
  batch.domain_tags.reserve(refs.size());
  for (int b = 0; b < batch.batch; ++b) {
    const SequenceRef& r = refs[static_cast<std::size_t>(b)];
    const Session& s = dataset.session(r.domain);
    check_sequence(s, r.sequence);
    const long start = sequence_start(r.sequence);
    for (int k = 0; k < kSequenceSamples; ++k) {
      const ImuSample& sample = s.imu[static_cast<std::size_t>(start + k)];
      const Eigen::Index row = static_cast<Eigen::Index>(b) * kSequenceSamples + k;
      for (int c = 0; c < C; ++c) {
        batch.inputs(row, c) = (channel_value(sample, c) - scaler.mean[c]) * scaler.scale[c];
      }
    }
    batch.labels.middleRows(static_cast<Eigen::Index>(b) * cfg.steps, cfg.steps) =
        window_labels(s, r.sequence, cfg);
    batch.domain_tags.push_back(r.domain);
  }
  return batch;
}

}  // namespace imuot
