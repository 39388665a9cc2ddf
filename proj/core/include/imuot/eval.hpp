#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imuot/ot.hpp"
#include "imuot/pose.hpp"
#include "imuot/sim.hpp"
#include "imuot/tracker.hpp"
#include "imuot/windowing.hpp"

namespace imuot {

enum class MatrixKind { kAdaptationSweep, kFragility };

// Rows are source counts (row m - 1) or source domains; columns are test domains.
// Unpopulated cells hold NaN.
struct ErrorMatrix {
  Matrix values = Matrix::Constant(kNumDomains, kNumDomains, std::nan(""));
  MatrixKind kind = MatrixKind::kAdaptationSweep;
  std::string metric = "p90_distance_error_m";

  bool row_populated(int row) const;
  void validate() const;
};

enum class ShiftKind { kRawAccelW1, kLatentDivergence };

struct ShiftMatrix {
  Matrix values = Matrix::Zero(kNumDomains, kNumDomains);
  ShiftKind kind = ShiftKind::kRawAccelW1;

  void validate(double tol) const;
};

// Euclidean distance between the final positions.
double distance_error(const Trajectory2D& pred, const Trajectory2D& gt);
// Root mean square position error over all poses.
double ate_rmse(const Trajectory2D& pred, const Trajectory2D& gt);
// |wrap(phi_pred(T) - phi_gt(T))|; the prediction must carry headings.
double heading_error(const Trajectory2D& pred, const Trajectory2D& gt);

// Nearest rank: sorted[ceil(p / 100 * N) - 1].
double percentile(std::span<const double> values, double p);

struct SequenceError {
  int sequence = 0;
  double distance = 0.0;
  double heading = std::nan("");  // NaN when the run has no heading estimate
};

enum class DistanceMetric { kFinal, kAteRmse };

struct EvalConfig {
  int batch_sequences = 16;
  DistanceMetric metric = DistanceMetric::kFinal;
};

// Runs a trained tracker over one domain's sequences and integrates the window estimates.
std::vector<SequenceError> evaluate_model(const Checkpoint& model, const Dataset& dataset, int domain,
                                          Split split, const WindowingConfig& windowing,
                                          const EvalConfig& cfg = {});

double p90_distance(std::span<const SequenceError> errors);

// Complementary-filter dead reckoning over every sequence of a domain. The initial position
// and velocity come from groundtruth, the heading from the first magnetometer reading.
struct FusionRun {
  std::vector<SequenceError> errors;
  std::vector<Trajectory2D> trajectories;  // one pose per IMU sample
  std::vector<double> start_times;
};
FusionRun evaluate_fusion(const Dataset& dataset, int domain, Split split, double gain = 0.02,
                          DistanceMetric metric = DistanceMetric::kFinal);

// Entry (i, j): model i on domain j. Requires 8 models.
ErrorMatrix fragility_matrix(std::span<const Checkpoint> models, const Dataset& dataset,
                             const WindowingConfig& windowing, Split split = Split::kTest,
                             const EvalConfig& cfg = {});

struct CdfTable {
  std::vector<double> value;
  std::vector<double> quantile;
};

// Down-sampled empirical CDF with at most `points` rows.
CdfTable empirical_cdf(std::vector<double> samples, int points = 1000);

std::vector<double> accel_norms(const Session& session);

struct RawShift {
  ShiftMatrix matrix;
  std::array<CdfTable, kNumDomains> cdfs;
};

// 1-D Wasserstein distances between the per-domain distributions of ||accel||.
RawShift raw_shift_matrix(const Dataset& dataset, int cdf_points = 1000);

struct LatentShiftConfig {
  int subsample = 256;
  double alpha = 1.0;
  ot::SinkhornConfig sinkhorn;
  Split split = Split::kTest;
  std::uint64_t seed = 1;
};

// Entry (i, j): debiased divergence between model i's latents on domain i and model j's on domain j.
ShiftMatrix latent_shift_matrix(std::span<const Checkpoint> models, const Dataset& dataset,
                                const WindowingConfig& windowing, const LatentShiftConfig& cfg = {});

// Strict upper triangle in row-major order.
std::vector<double> upper_triangle(const Matrix& m);

// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

void write_error_matrix(const std::filesystem::path& path, const ErrorMatrix& m);
ErrorMatrix read_error_matrix(const std::filesystem::path& path);
void write_shift_matrix(const std::filesystem::path& path, const ShiftMatrix& m);
ShiftMatrix read_shift_matrix(const std::filesystem::path& path);
void write_cdf(const std::filesystem::path& path, const CdfTable& cdf);
void write_sequence_errors(const std::filesystem::path& path, std::span<const SequenceError> errors);

}  // namespace imuot
