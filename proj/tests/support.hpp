#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "imuot/pose.hpp"
#include "imuot/sim.hpp"
#include "imuot/tracker.hpp"

namespace imuot::testing {

// Exact LP for uniform n x n transport: the optimum sits on a permutation matrix.
inline double lp_permutation_value(const Eigen::MatrixXd& c) {
  const int n = static_cast<int>(c.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += c(i, perm[i]);
    best = std::min(best, v / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Exact 2x2 LP with arbitrary marginals: one free entry, linear objective.
struct Lp2x2 {
  Eigen::Matrix2d gamma;
  double value = 0.0;
};

inline Lp2x2 lp_2x2(const Eigen::Matrix2d& c, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double lo = std::max(0.0, a(0) - b(1));
  const double hi = std::min(a(0), b(0));
  Lp2x2 best;
  best.value = std::numeric_limits<double>::infinity();
  for (double t : {lo, hi}) {
    Eigen::Matrix2d g;
    g << t, a(0) - t, b(0) - t, a(1) - b(0) + t;
    const double v = (g.array() * c.array()).sum();
    if (v < best.value) best = {g, v};
  }
  return best;
}

// Mean |a_(i) - b_(i)| after sorting both samples.
inline double sorted_matching(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

// Worst relative error of an analytic gradient against central differences.
// Components where both values are tiny are compared absolutely against `floor`.
struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline GradCheck check_gradient(const TrackerParams& params, const TrackerParams& analytic,
                                const std::function<double(const TrackerParams&)>& loss,
                                double step = 1e-5, double floor = 1e-6) {
  GradCheck out;
  TrackerParams probe = params;
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> probe_mats;
  probe.visit([&](const std::string& name, Eigen::MatrixXd& m) { probe_mats.emplace_back(name, &m); });
  std::vector<const Eigen::MatrixXd*> grad_mats;
  analytic.visit([&](const std::string&, const Eigen::MatrixXd& m) { grad_mats.push_back(&m); });

  for (std::size_t k = 0; k < probe_mats.size(); ++k) {
    auto& [name, m] = probe_mats[k];
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      double& w = m->data()[i];
      const double keep = w;
      w = keep + step;
      const double up = loss(probe);
      w = keep - step;
      const double down = loss(probe);
      w = keep;
      const double fd = (up - down) / (2.0 * step);
      const double g = grad_mats[k]->data()[i];
      const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(g) + " fd " +
                    std::to_string(fd);
      }
    }
  }
  return out;
}

inline TrackerConfig tiny_tracker(Head head) {
  TrackerConfig c;
  c.hidden = 4;
  c.head = head;
  return c;
}

inline WindowBatch random_batch(const TrackerConfig& cfg, int batch, int steps, std::uint64_t seed,
                                double label_scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  WindowBatch b;
  b.batch = batch;
  b.steps = steps;
  b.window = cfg.window;
  b.channels = cfg.channels;
  b.inputs.resize(static_cast<Eigen::Index>(batch) * steps * cfg.window, cfg.channels);
  for (Eigen::Index i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = n01(rng);
  b.labels.resize(static_cast<Eigen::Index>(batch) * steps, 2);
  for (Eigen::Index i = 0; i < b.labels.size(); ++i) b.labels.data()[i] = label_scale * n01(rng);
  b.domain_tags.assign(batch, 0);
  return b;
}

// Constant-rate spin about the centre of mass, dense at 70 Hz.
inline std::vector<TimedPose> spin_path(double omega, double duration, double x = 1.0, double y = 1.0) {
  const int n = static_cast<int>(std::lround(duration * kImuRateHz));
  std::vector<TimedPose> path(n);
  for (int i = 0; i < n; ++i) {
    const double t = i / kImuRateHz;
    path[i] = {t, {x, y, wrap_angle(omega * t)}};
  }
  return path;
}

// Counter-clockwise circle of radius r about (cx, cy), heading tangent to the path.
inline std::vector<TimedPose> circle_path(double radius, double omega, double duration, double cx = 3.0,
                                          double cy = 2.5) {
  const int n = static_cast<int>(std::lround(duration * kImuRateHz));
  std::vector<TimedPose> path(n);
  for (int i = 0; i < n; ++i) {
    const double t = i / kImuRateHz;
    const double a = omega * t;
    path[i] = {t, {cx + radius * std::cos(a), cy + radius * std::sin(a), wrap_angle(a + M_PI / 2)}};
  }
  return path;
}

// Second central difference of the sensor world position, rotated into the body frame.
inline std::vector<Eigen::Vector2d> fd_body_accel(const std::vector<TimedPose>& path,
                                                  const RigidBodyOffset& offset) {
  const double dt = 1.0 / kImuRateHz;
  std::vector<Eigen::Vector2d> out;
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    const Point2D p0 = translate_slam_to_imu(path[i - 1].pose, offset);
    const Point2D p1 = translate_slam_to_imu(path[i].pose, offset);
    const Point2D p2 = translate_slam_to_imu(path[i + 1].pose, offset);
    const Eigen::Vector2d aw((p2.x - 2 * p1.x + p0.x) / (dt * dt), (p2.y - 2 * p1.y + p0.y) / (dt * dt));
    const double c = std::cos(path[i].pose.phi);
    const double s = std::sin(path[i].pose.phi);
    out.emplace_back(c * aw.x() + s * aw.y(), -s * aw.x() + c * aw.y());
  }
  return out;
}

// Average ranks with ties sharing the mean rank, then Pearson on the ranks.
inline double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0.0;
      double equal = 0.0;
      for (double w : v) {
        if (w < v[i]) less += 1.0;
        if (w == v[i]) equal += 1.0;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("imuot_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace imuot::testing
