#include "imuot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "imuot/baseline.hpp"
#include "imuot/csv.hpp"
#include "imuot/error.hpp"

namespace imuot {

namespace {

void check_lengths(const Trajectory2D& pred, const Trajectory2D& gt) {
  if (pred.poses.empty() || gt.poses.empty()) throw ArgumentError("trajectories must not be empty");
  if (pred.poses.size() != gt.poses.size()) {
    throw ArgumentError("trajectory lengths differ (" + std::to_string(pred.poses.size()) + " vs " +
                        std::to_string(gt.poses.size()) + ")");
  }
}

double distance_by(DistanceMetric metric, const Trajectory2D& pred, const Trajectory2D& gt) {
  return metric == DistanceMetric::kFinal ? distance_error(pred, gt) : ate_rmse(pred, gt);
}

std::vector<std::string> domain_header() {
  std::vector<std::string> h;
  for (int k = 0; k < kNumDomains; ++k) h.push_back("domain_" + std::to_string(k));
  return h;
}

void write_square(const std::filesystem::path& path, const Matrix& values) {
  CsvWriter out(path, domain_header());
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    std::vector<std::string> fields;
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      fields.push_back(std::isnan(values(r, c)) ? std::string() : format_double(values(r, c)));
    }
    out.row(fields);
  }
  out.close();
}

Matrix read_square(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header != domain_header() || t.rows.size() != static_cast<std::size_t>(kNumDomains)) {
    throw DataError("not an 8x8 domain matrix: " + path.string());
  }
  Matrix m(kNumDomains, kNumDomains);
  for (int r = 0; r < kNumDomains; ++r) {
    for (int c = 0; c < kNumDomains; ++c) {
      const std::string& f = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      m(r, c) = f.empty() ? std::nan("") : parse_double(f);
    }
  }
  return m;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

Matrix encode_domain(const Checkpoint& model, const Dataset& dataset, int domain, Split split,
                     const WindowingConfig& windowing, int batch_sequences) {
  const std::array<int, 1> d{domain};
  const auto refs = sequences_for(dataset, d, split);
  if (refs.empty()) throw DataError("domain " + std::to_string(domain) + " has no sequences in split");
  Matrix out(static_cast<Eigen::Index>(refs.size()) * windowing.steps, model.params.config.latent);
  for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(batch_sequences)) {
    const std::size_t count = std::min<std::size_t>(batch_sequences, refs.size() - start);
    const WindowBatch batch =
        make_batch(dataset, std::span(refs).subspan(start, count), model.scaler, windowing);
    out.middleRows(static_cast<Eigen::Index>(start) * windowing.steps, batch.rows()) =
        encode(model.params, batch).values;
  }
  return out;
}

void check_model(const Checkpoint& model, const WindowingConfig& windowing) {
  if (model.params.config.channels != windowing.channels() ||
      model.params.config.window != windowing.window || model.params.config.head != windowing.head) {
    throw ArgumentError("checkpoint does not match the windowing configuration");
  }
}

}  // namespace

bool ErrorMatrix::row_populated(int row) const {
  for (int c = 0; c < values.cols(); ++c) {
    if (!std::isnan(values(row, c))) return true;
  }
  return false;
}

void ErrorMatrix::validate() const {
  if (values.rows() != kNumDomains || values.cols() != kNumDomains) {
    throw ArgumentError("error matrix must be 8x8");
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values.data()[i];
    if (std::isnan(v)) continue;
    if (!std::isfinite(v) || v < 0.0) throw NumericalError("error matrix entries must be finite and >= 0");
  }
}

void ShiftMatrix::validate(double tol) const {
  if (values.rows() != kNumDomains || values.cols() != kNumDomains) {
    throw ArgumentError("shift matrix must be 8x8");
  }
  if (!values.allFinite()) throw NumericalError("shift matrix has non-finite entries");
  for (int i = 0; i < kNumDomains; ++i) {
    if (std::abs(values(i, i)) > tol) throw NumericalError("shift matrix diagonal is not zero");
    for (int j = i + 1; j < kNumDomains; ++j) {
      if (std::abs(values(i, j) - values(j, i)) > tol) throw NumericalError("shift matrix is not symmetric");
    }
  }
}

double distance_error(const Trajectory2D& pred, const Trajectory2D& gt) {
  check_lengths(pred, gt);
  const Pose2D& a = pred.poses.back();
  const Pose2D& b = gt.poses.back();
  return std::hypot(a.x - b.x, a.y - b.y);
}

double ate_rmse(const Trajectory2D& pred, const Trajectory2D& gt) {
  check_lengths(pred, gt);
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.poses.size(); ++k) {
    const double dx = pred.poses[k].x - gt.poses[k].x;
    const double dy = pred.poses[k].y - gt.poses[k].y;
    sum += dx * dx + dy * dy;
  }
  return std::sqrt(sum / static_cast<double>(pred.poses.size()));
}

double heading_error(const Trajectory2D& pred, const Trajectory2D& gt) {
  check_lengths(pred, gt);
  if (!pred.has_heading) throw ArgumentError("heading error is unsupported for trajectories without heading");
  return std::abs(wrap_angle(pred.poses.back().phi - gt.poses.back().phi));
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ArgumentError("percentile of an empty list");
  if (!(p > 0.0 && p <= 100.0)) throw ArgumentError("percentile p must lie in (0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<SequenceError> evaluate_model(const Checkpoint& model, const Dataset& dataset, int domain,
                                          Split split, const WindowingConfig& windowing,
                                          const EvalConfig& cfg) {
  check_model(model, windowing);
  if (cfg.batch_sequences < 1) throw ArgumentError("batch_sequences must be at least 1");
  const std::array<int, 1> d{domain};
  const auto refs = sequences_for(dataset, d, split);
  const Session& session = dataset.session(domain);
  std::vector<SequenceError> errors;
  errors.reserve(refs.size());
  for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(cfg.batch_sequences)) {
    const std::size_t count = std::min<std::size_t>(cfg.batch_sequences, refs.size() - start);
    const auto chunk = std::span(refs).subspan(start, count);
    const WindowBatch batch = make_batch(dataset, chunk, model.scaler, windowing);
    const Matrix est = forward(model.params, batch).estimates();
    for (std::size_t b = 0; b < count; ++b) {
      const int seq = chunk[b].sequence;
      const Trajectory2D gt = reference_trajectory(session, seq, windowing);
      const Matrix block = est.middleRows(static_cast<Eigen::Index>(b) * windowing.steps, windowing.steps);
      const Trajectory2D pred = integrate_estimates(block, windowing.head, gt.poses.front());
      SequenceError e;
      e.sequence = seq;
      e.distance = distance_by(cfg.metric, pred, gt);
      if (pred.has_heading) e.heading = heading_error(pred, gt);
      errors.push_back(e);
    }
  }
  return errors;
}

double p90_distance(std::span<const SequenceError> errors) {
  std::vector<double> d;
  d.reserve(errors.size());
  for (const auto& e : errors) d.push_back(e.distance);
  return percentile(d, 90.0);
}

FusionRun evaluate_fusion(const Dataset& dataset, int domain, Split split, double gain,
                          DistanceMetric metric) {
  const Session& session = dataset.session(domain);
  const auto& ids = split == Split::kTrain ? dataset.train_ids : dataset.test_ids;
  const long total = static_cast<long>(session.imu.size());
  FusionRun run;
  for (int seq : ids) {
    const long start = static_cast<long>(seq) * kSequenceSamples;
    if (start + kSequenceSamples > total) throw DataError("sequence exceeds the session length");
    const std::span<const ImuSample> imu(session.imu.data() + start, kSequenceSamples);

    // Central difference over one groundtruth interval on each side where available.
    const long lo = std::max(0L, start - kSamplesPerGroundtruth);
    const long hi = std::min(total, start + kSamplesPerGroundtruth);
    const Pose2D p_lo = sensor_pose_at_sample(session, lo);
    const Pose2D p_hi = sensor_pose_at_sample(session, hi);
    const double span_s = static_cast<double>(hi - lo) / kImuRateHz;

    FusionState init;
    init.complementary_gain = gain;
    const Pose2D p0 = sensor_pose_at_sample(session, start);
    init.position = {p0.x, p0.y};
    init.velocity = {(p_hi.x - p_lo.x) / span_s, (p_hi.y - p_lo.y) / span_s};
    const auto headings = estimate_heading(imu, gain);
    init.heading = headings.front();
    Trajectory2D pred = double_integrate(imu, headings, init);

    Trajectory2D gt;
    gt.poses.reserve(kSequenceSamples);
    for (long k = 0; k < kSequenceSamples; ++k) gt.poses.push_back(sensor_pose_at_sample(session, start + k));

    SequenceError e;
    e.sequence = seq;
    e.distance = distance_by(metric, pred, gt);
    e.heading = heading_error(pred, gt);
    run.errors.push_back(e);
    run.start_times.push_back(imu.front().t);
    run.trajectories.push_back(std::move(pred));
  }
  return run;
}

ErrorMatrix fragility_matrix(std::span<const Checkpoint> models, const Dataset& dataset,
                             const WindowingConfig& windowing, Split split, const EvalConfig& cfg) {
  if (models.size() != static_cast<std::size_t>(kNumDomains)) {
    throw ArgumentError("fragility matrix needs one checkpoint per domain");
  }
  ErrorMatrix m;
  m.kind = MatrixKind::kFragility;
  for (int i = 0; i < kNumDomains; ++i) {
    for (int j = 0; j < kNumDomains; ++j) {
      m.values(i, j) = p90_distance(evaluate_model(models[static_cast<std::size_t>(i)], dataset, j, split,
                                                   windowing, cfg));
    }
  }
  m.validate();
  return m;
}

CdfTable empirical_cdf(std::vector<double> samples, int points) {
  if (samples.empty()) throw ArgumentError("cdf of an empty sample");
  if (points < 1) throw ArgumentError("cdf needs at least one point");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  const std::size_t k_max = std::min<std::size_t>(static_cast<std::size_t>(points), n);
  CdfTable cdf;
  for (std::size_t k = 1; k <= k_max; ++k) {
    // Nearest rank of quantile k / k_max; integer arithmetic keeps it exact.
    const std::size_t rank = (k * n + k_max - 1) / k_max;
    cdf.value.push_back(samples[rank - 1]);
    cdf.quantile.push_back(static_cast<double>(k) / static_cast<double>(k_max));
  }
  return cdf;
}

std::vector<double> accel_norms(const Session& session) {
  std::vector<double> out;
  out.reserve(session.imu.size());
  for (const auto& s : session.imu) out.push_back(s.accel.norm());
  return out;
}

RawShift raw_shift_matrix(const Dataset& dataset, int cdf_points) {
  std::array<std::vector<double>, kNumDomains> norms;
  RawShift result;
  result.matrix.kind = ShiftKind::kRawAccelW1;
  for (int k = 0; k < kNumDomains; ++k) {
    norms[static_cast<std::size_t>(k)] = accel_norms(dataset.session(k));
    result.cdfs[static_cast<std::size_t>(k)] = empirical_cdf(norms[static_cast<std::size_t>(k)], cdf_points);
  }
  for (int i = 0; i < kNumDomains; ++i) {
    for (int j = i + 1; j < kNumDomains; ++j) {
      const double w = ot::wasserstein_1d(norms[static_cast<std::size_t>(i)], norms[static_cast<std::size_t>(j)]);
      result.matrix.values(i, j) = w;
      result.matrix.values(j, i) = w;
    }
  }
  return result;
}

ShiftMatrix latent_shift_matrix(std::span<const Checkpoint> models, const Dataset& dataset,
                                const WindowingConfig& windowing, const LatentShiftConfig& cfg) {
  if (models.size() != static_cast<std::size_t>(kNumDomains)) {
    throw ArgumentError("latent shift needs one checkpoint per domain");
  }
  if (cfg.subsample < 1) throw ArgumentError("latent subsample must be at least 1");
  std::vector<ot::EmpiricalDistribution> dists;
  std::vector<int> rows;
  for (int k = 0; k < kNumDomains; ++k) {
    const Checkpoint& model = models[static_cast<std::size_t>(k)];
    check_model(model, windowing);
    const Matrix latents = encode_domain(model, dataset, k, cfg.split, windowing, 16);
    if (rows.empty()) {
      // Same window indices for every domain; the sequence ids are shared.
      rows.resize(static_cast<std::size_t>(latents.rows()));
      std::iota(rows.begin(), rows.end(), 0);
      if (cfg.subsample < latents.rows()) {
        std::mt19937_64 rng(cfg.seed);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(static_cast<std::size_t>(cfg.subsample));
        std::sort(rows.begin(), rows.end());
      }
    }
    Matrix picked(static_cast<Eigen::Index>(rows.size()), latents.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) picked.row(static_cast<Eigen::Index>(r)) = latents.row(rows[r]);
    dists.push_back(ot::EmpiricalDistribution::uniform(std::move(picked)));
  }
  const double alpha = cfg.alpha;
  const ot::CostBuilder cost = [alpha](const Matrix& a, const Matrix& b) { return ot::feature_cost(a, b, alpha); };
  ShiftMatrix m;
  m.kind = ShiftKind::kLatentDivergence;
  for (int i = 0; i < kNumDomains; ++i) {
    for (int j = 0; j < kNumDomains; ++j) {
      m.values(i, j) = ot::sinkhorn_divergence(dists[static_cast<std::size_t>(i)],
                                               dists[static_cast<std::size_t>(j)], cost, cfg.sinkhorn)
                           .value;
    }
  }
  return m;
}

std::vector<double> upper_triangle(const Matrix& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("spearman needs two equal samples of size >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    sab += (ra[k] - ma) * (rb[k] - mb);
    saa += (ra[k] - ma) * (ra[k] - ma);
    sbb += (rb[k] - mb) * (rb[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void write_error_matrix(const std::filesystem::path& path, const ErrorMatrix& m) {
  m.validate();
  write_square(path, m.values);
}

ErrorMatrix read_error_matrix(const std::filesystem::path& path) {
  ErrorMatrix m;
  m.values = read_square(path);
  m.validate();
  return m;
}

void write_shift_matrix(const std::filesystem::path& path, const ShiftMatrix& m) {
  write_square(path, m.values);
}

ShiftMatrix read_shift_matrix(const std::filesystem::path& path) {
  ShiftMatrix m;
  m.values = read_square(path);
  return m;
}

void write_cdf(const std::filesystem::path& path, const CdfTable& cdf) {
  CsvWriter out(path, {"value", "quantile"});
  for (std::size_t k = 0; k < cdf.value.size(); ++k) {
    const double row[2] = {cdf.value[k], cdf.quantile[k]};
    out.row(row);
  }
  out.close();
}

void write_sequence_errors(const std::filesystem::path& path, std::span<const SequenceError> errors) {
  CsvWriter out(path, {"sequence_id", "distance_error", "heading_error"});
  for (const auto& e : errors) {
    out.row(std::vector<std::string>{std::to_string(e.sequence), format_double(e.distance),
                                     std::isnan(e.heading) ? std::string() : format_double(e.heading)});
  }
  out.close();
}

}  // namespace imuot
