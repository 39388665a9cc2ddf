#pragma once

#include <span>
#include <vector>

#include "imuot/sim.hpp"
#include "imuot/tracker.hpp"

namespace imuot {

struct SequenceRef {
  int domain = 0;
  int sequence = 0;
};

enum class Split { kTrain, kTest };

struct WindowingConfig {
  int window = 35;
  int steps = 40;
  bool use_magnetometer = true;
  Head head = Head::kCartesian;

  int channels() const { return use_magnetometer ? 9 : 6; }
  void validate() const;
};

std::vector<SequenceRef> sequences_for(const Dataset& dataset, std::span<const int> domains,
                                       Split split);

// Centre-of-mass pose at a dense sample index, linearly interpolated from the 5 Hz groundtruth.
Pose2D groundtruth_at_sample(const Session& session, long sample_index);

// Sensor pose (position of the sensor point, body heading) at a dense sample index.
Pose2D sensor_pose_at_sample(const Session& session, long sample_index);

// Per-window labels of one sequence: (dx, dy) world frame or (dd, dphi).
Matrix window_labels(const Session& session, int sequence, const WindowingConfig& cfg);

// Sensor poses at the S + 1 window boundaries of one sequence.
Trajectory2D reference_trajectory(const Session& session, int sequence, const WindowingConfig& cfg);

InputScaler fit_scaler(const Dataset& dataset, std::span<const SequenceRef> refs,
                       const WindowingConfig& cfg);

WindowBatch make_batch(const Dataset& dataset, std::span<const SequenceRef> refs,
                       const InputScaler& scaler, const WindowingConfig& cfg);

}  // namespace imuot
