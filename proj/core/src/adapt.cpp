#include "imuot/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "imuot/error.hpp"
#include "imuot/seed.hpp"

namespace imuot {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kSubsampleTag = 0x73756273ULL;

Matrix gather_rows(const Matrix& m, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

void scatter_add_rows(Matrix& dst, const Matrix& src, std::span<const int> rows) {
  for (std::size_t k = 0; k < rows.size(); ++k) dst.row(rows[k]) += src.row(static_cast<Eigen::Index>(k));
}

double frobenius(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

// d/dX of sum_ik g_ik ||x_i - x_k||^2 for a self-coupling g.
Matrix self_cost_grad(const Matrix& g, const Matrix& x) {
  const Matrix sym = g + g.transpose();
  const Eigen::VectorXd weight = sym.rowwise().sum();
  return 2.0 * (weight.asDiagonal() * x - sym * x);
}

std::vector<int> sample_rows(int total, int count, std::mt19937_64& rng) {
  std::vector<int> rows(static_cast<std::size_t>(total));
  std::iota(rows.begin(), rows.end(), 0);
  if (count >= total) return rows;
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(count));
  std::sort(rows.begin(), rows.end());
  return rows;
}

void check_finite(double value, const std::vector<HistoryEntry>& history, const char* what) {
  if (std::isfinite(value)) return;
  std::vector<double> losses;
  for (const auto& h : history) losses.push_back(h.loss_regression + h.loss_alignment);
  throw TrainingError(std::string("non-finite ") + what + " after " +
                          std::to_string(history.size()) + " epochs",
                      losses);
}

std::vector<SequenceRef> shuffled(std::span<const SequenceRef> refs, std::uint64_t seed) {
  std::vector<SequenceRef> out(refs.begin(), refs.end());
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_sequences < 1) throw ConfigError("batch_sequences must be at least 1");
  if (ot_subsample < 1) throw ConfigError("ot_subsample must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(epsilon_scale > 0.0)) throw ConfigError("epsilon_scale must be positive");
  if (!(align_weight >= 0.0)) throw ConfigError("align_weight must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
}

ot::SinkhornConfig TrainConfig::sinkhorn() const {
  ot::SinkhornConfig s;
  s.epsilon_scale = epsilon_scale;
  s.max_iters = sinkhorn_max_iters;
  s.marginal_tol = marginal_tol;
  return s;
}

DomainSplit DomainSplit::consecutive(int m) {
  if (m < 1 || m > kNumDomains) throw ConfigError("source count must lie in 1..8");
  DomainSplit split;
  for (int k = 0; k < kNumDomains; ++k) (k < m ? split.source : split.target).push_back(k);
  return split;
}

void DomainSplit::validate() const {
  if (source.empty()) throw ConfigError("source domains must not be empty");
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] != static_cast<int>(i)) throw ConfigError("source domains must be {0..m-1}");
  }
  for (int t : target) {
    if (t < static_cast<int>(source.size()) || t >= kNumDomains) {
      throw ConfigError("target domains must lie outside the source range");
    }
  }
}

AdamOptimizer::AdamOptimizer(const TrackerParams& like, const TrainConfig& cfg)
    : cfg_(cfg), m_(TrackerParams::zeros(like.config)), v_(TrackerParams::zeros(like.config)) {}

void AdamOptimizer::step(TrackerParams& params, TrackerParams grad) {
  if (cfg_.grad_clip > 0.0) {
    const double norm = std::sqrt(grad.squared_norm());
    if (norm > cfg_.grad_clip) grad.scale(cfg_.grad_clip / norm);
  }
  ++t_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double correction1 = 1.0 - std::pow(b1, t_);
  const double correction2 = 1.0 - std::pow(b2, t_);
  const double lr = cfg_.learning_rate;
  const double eps = cfg_.adam_epsilon;

  std::vector<Matrix*> ps, ms, vs;
  std::vector<const Matrix*> gs;
  params.visit([&](const std::string&, Matrix& x) { ps.push_back(&x); });
  m_.visit([&](const std::string&, Matrix& x) { ms.push_back(&x); });
  v_.visit([&](const std::string&, Matrix& x) { vs.push_back(&x); });
  grad.visit([&](const std::string&, const Matrix& x) { gs.push_back(&x); });
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Matrix& m = *ms[k];
    Matrix& v = *vs[k];
    const Matrix& g = *gs[k];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    ps[k]->array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

TrainResult train_supervised(const Dataset& dataset, std::span<const SequenceRef> train,
                             const WindowingConfig& windowing, const TrackerConfig& tracker,
                             const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  windowing.validate();
  if (train.empty()) throw ArgumentError("training set is empty");
  TrackerConfig tcfg = tracker;
  tcfg.window = windowing.window;
  tcfg.channels = windowing.channels();
  tcfg.head = windowing.head;

  TrainResult result;
  result.checkpoint.params = TrackerParams::initialize(tcfg, derive_seed(cfg.seed, {kInitTag}));
  result.checkpoint.scaler = fit_scaler(dataset, train, windowing);
  TrackerParams& params = result.checkpoint.params;
  AdamOptimizer adam(params, cfg);

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_sequences);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order =
        shuffled(train, derive_seed(cfg.seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t count = std::min(bs, order.size() - start);
      const std::span<const SequenceRef> refs(order.data() + start, count);
      const WindowBatch batch = make_batch(dataset, refs, result.checkpoint.scaler, windowing);
      const ForwardPass pass = forward(params, batch);
      const Matrix est = pass.estimates();
      const double loss = loss_mse(batch.labels, est);
      check_finite(loss, result.history, "training loss");
      adam.step(params, backward(params, pass, loss_mse_grad(batch.labels, est), Matrix()));
      loss_sum += loss * static_cast<double>(count);
      weight += static_cast<double>(count);
    }
    if (!params.all_finite()) check_finite(std::nan(""), result.history, "parameters");
    HistoryEntry entry{epoch, loss_sum / weight, 0.0};
    result.history.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

JdotTerms deepjdot_terms(const TrackerParams& params, const WindowBatch& source,
                         const WindowBatch& target, std::span<const int> src_rows,
                         std::span<const int> tgt_rows, const TrainConfig& cfg,
                         const CouplingSet* fixed, bool with_gradient) {
  if (source.labels.rows() != source.rows()) throw ArgumentError("source batch needs labels");
  if (src_rows.empty() || tgt_rows.empty()) throw ArgumentError("transport subsample is empty");
  for (int r : src_rows) {
    if (r < 0 || r >= source.rows()) throw ArgumentError("source subsample row out of range");
  }
  for (int r : tgt_rows) {
    if (r < 0 || r >= target.rows()) throw ArgumentError("target subsample row out of range");
  }

  const ForwardPass src_pass = forward(params, source);
  const ForwardPass tgt_pass = forward(params, target);
  const Matrix src_est = src_pass.estimates();
  const Matrix tgt_est = tgt_pass.estimates();
  const Matrix src_lat = src_pass.latents();
  const Matrix tgt_lat = tgt_pass.latents();

  const Matrix zs = gather_rows(src_lat, src_rows);
  const Matrix ys = gather_rows(source.labels, src_rows);
  const Matrix ys_hat = gather_rows(src_est, src_rows);
  const Matrix zt = gather_rows(tgt_lat, tgt_rows);
  const Matrix yt_hat = gather_rows(tgt_est, tgt_rows);

  const double alpha = cfg.alpha;
  const double eta = cfg.align_weight;
  const ot::CostMatrix c_cross = ot::joint_cost(zs, ys, zt, yt_hat, alpha);
  const ot::CostMatrix c_src = cfg.label_cost_in_self_terms ? ot::joint_cost(zs, ys, zs, ys_hat, alpha)
                                                            : ot::feature_cost(zs, zs, alpha);
  const ot::CostMatrix c_tgt = cfg.label_cost_in_self_terms
                                   ? ot::joint_cost(zt, yt_hat, zt, yt_hat, alpha)
                                   : ot::feature_cost(zt, zt, alpha);

  JdotTerms terms;
  if (fixed) {
    terms.couplings = *fixed;
  } else {
    const ot::SinkhornConfig scfg = cfg.sinkhorn();
    const auto n = static_cast<Eigen::Index>(src_rows.size());
    const auto m = static_cast<Eigen::Index>(tgt_rows.size());
    const ot::Vector mu = ot::Vector::Constant(n, 1.0 / static_cast<double>(n));
    const ot::Vector nu = ot::Vector::Constant(m, 1.0 / static_cast<double>(m));
    const ot::Coupling cross = ot::sinkhorn(c_cross, mu, nu, scfg);
    const ot::Coupling self_s = ot::sinkhorn(c_src, mu, mu, scfg);
    const ot::Coupling self_t = ot::sinkhorn(c_tgt, nu, nu, scfg);
    terms.converged = cross.converged && self_s.converged && self_t.converged;
    terms.couplings = {cross.gamma, self_s.gamma, self_t.gamma};
  }
  const CouplingSet& g = terms.couplings;
  if (g.cross.rows() != zs.rows() || g.cross.cols() != zt.rows() || g.self_src.rows() != zs.rows() ||
      g.self_src.cols() != zs.rows() || g.self_tgt.rows() != zt.rows() ||
      g.self_tgt.cols() != zt.rows()) {
    throw ArgumentError("coupling shapes do not match the transport subsample");
  }

  const ot::CostMatrix label_cross = ot::feature_cost(ys, yt_hat, 1.0);
  terms.source_mse = loss_mse(source.labels, src_est);
  terms.transported = frobenius(g.cross, label_cross.values);
  terms.alignment = frobenius(g.cross, c_cross.values) -
                    0.5 * (frobenius(g.self_src, c_src.values) + frobenius(g.self_tgt, c_tgt.values));
  terms.total = terms.source_mse + terms.transported + eta * terms.alignment;
  if (!with_gradient) return terms;

  // Gradients with every coupling held constant.
  Matrix d_src_est = loss_mse_grad(source.labels, src_est);
  Matrix d_src_lat = Matrix::Zero(src_lat.rows(), src_lat.cols());
  Matrix d_tgt_est = Matrix::Zero(tgt_est.rows(), tgt_est.cols());
  Matrix d_tgt_lat = Matrix::Zero(tgt_lat.rows(), tgt_lat.cols());

  const Eigen::VectorXd row_mass = g.cross.rowwise().sum();
  const Eigen::VectorXd col_mass = g.cross.colwise().sum().transpose();
  // Label term appears in the transported loss and in the cross alignment cost.
  const Matrix d_yt = 2.0 * (1.0 + eta) * (col_mass.asDiagonal() * yt_hat - g.cross.transpose() * ys);
  const Matrix d_zs_cross = 2.0 * alpha * (row_mass.asDiagonal() * zs - g.cross * zt);
  const Matrix d_zt_cross = 2.0 * alpha * (col_mass.asDiagonal() * zt - g.cross.transpose() * zs);
  Matrix d_zs = eta * (d_zs_cross - 0.5 * alpha * self_cost_grad(g.self_src, zs));
  Matrix d_zt = eta * (d_zt_cross - 0.5 * alpha * self_cost_grad(g.self_tgt, zt));
  Matrix d_yt_total = d_yt;
  if (cfg.label_cost_in_self_terms) {
    // Source self term: ||y_i - yhat_k||^2 with gamma_src; target self term: ||yhat_i - yhat_k||^2.
    const Eigen::VectorXd src_col = g.self_src.colwise().sum().transpose();
    const Matrix d_ys_hat = 2.0 * (src_col.asDiagonal() * ys_hat - g.self_src.transpose() * ys);
    scatter_add_rows(d_src_est, -0.5 * eta * d_ys_hat, src_rows);
    d_yt_total += -0.5 * eta * self_cost_grad(g.self_tgt, yt_hat);
  }
  scatter_add_rows(d_src_lat, d_zs, src_rows);
  scatter_add_rows(d_tgt_lat, d_zt, tgt_rows);
  scatter_add_rows(d_tgt_est, d_yt_total, tgt_rows);

  terms.gradient = backward(params, src_pass, d_src_est, d_src_lat);
  terms.gradient.add_scaled(backward(params, tgt_pass, d_tgt_est, d_tgt_lat), 1.0);
  return terms;
}

TrainResult train_deepjdot(const Dataset& dataset, std::span<const SequenceRef> source,
                           std::span<const SequenceRef> target, const WindowingConfig& windowing,
                           const TrackerConfig& tracker, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  if (target.empty()) return train_supervised(dataset, source, windowing, tracker, cfg, on_epoch);
  cfg.validate();
  windowing.validate();
  if (source.empty()) throw ArgumentError("source set is empty");
  const int windows_per_batch = cfg.batch_sequences * windowing.steps;
  if (cfg.ot_subsample > windows_per_batch) {
    throw ConfigError("ot_subsample exceeds the windows in a batch");
  }
  TrackerConfig tcfg = tracker;
  tcfg.window = windowing.window;
  tcfg.channels = windowing.channels();
  tcfg.head = windowing.head;

  TrainResult result;
  result.checkpoint.params = TrackerParams::initialize(tcfg, derive_seed(cfg.seed, {kInitTag}));
  result.checkpoint.scaler = fit_scaler(dataset, source, windowing);
  TrackerParams& params = result.checkpoint.params;
  AdamOptimizer adam(params, cfg);

  // Target sequences grouped per domain for the round-robin variant.
  std::vector<std::vector<SequenceRef>> by_domain;
  if (cfg.pool_targets) {
    by_domain.emplace_back(target.begin(), target.end());
  } else {
    std::vector<int> domains;
    for (const auto& r : target) {
      if (std::find(domains.begin(), domains.end(), r.domain) == domains.end()) domains.push_back(r.domain);
    }
    for (int d : domains) {
      by_domain.emplace_back();
      for (const auto& r : target) {
        if (r.domain == d) by_domain.back().push_back(r);
      }
    }
  }
  std::vector<std::size_t> cursor(by_domain.size(), 0);
  std::vector<std::vector<SequenceRef>> target_order(by_domain.size());
  for (std::size_t d = 0; d < by_domain.size(); ++d) {
    target_order[d] = shuffled(by_domain[d], derive_seed(cfg.seed, {kShuffleTag, 0x74ULL, d}));
  }

  std::mt19937_64 subsample_rng(derive_seed(cfg.seed, {kSubsampleTag}));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_sequences);
  std::size_t batch_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order =
        shuffled(source, derive_seed(cfg.seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)}));
    double reg_sum = 0.0;
    double align_sum = 0.0;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t count = std::min(bs, order.size() - start);
      const std::span<const SequenceRef> src_refs(order.data() + start, count);

      const std::size_t d = batch_counter++ % by_domain.size();
      std::vector<SequenceRef> tgt_refs;
      for (std::size_t k = 0; k < count; ++k) {
        if (cursor[d] == target_order[d].size()) {
          cursor[d] = 0;
          target_order[d] = shuffled(by_domain[d], derive_seed(cfg.seed, {kShuffleTag, 0x74ULL, d,
                                                                          batch_counter}));
        }
        tgt_refs.push_back(target_order[d][cursor[d]++]);
      }

      const WindowBatch src = make_batch(dataset, src_refs, result.checkpoint.scaler, windowing);
      const WindowBatch tgt = make_batch(dataset, tgt_refs, result.checkpoint.scaler, windowing);
      const int n_ot = std::min(cfg.ot_subsample, src.rows());
      const auto src_rows = sample_rows(src.rows(), n_ot, subsample_rng);
      const auto tgt_rows = sample_rows(tgt.rows(), n_ot, subsample_rng);

      TrainConfig attempt_cfg = cfg;
      JdotTerms terms = deepjdot_terms(params, src, tgt, src_rows, tgt_rows, attempt_cfg);
      for (int retry = 0; !terms.converged && retry < cfg.max_retries; ++retry) {
        attempt_cfg.epsilon_scale *= 2.0;
        terms = deepjdot_terms(params, src, tgt, src_rows, tgt_rows, attempt_cfg);
      }
      if (!terms.converged) {
        ++result.skipped_batches;
        continue;
      }
      check_finite(terms.total, result.history, "DeepJDOT loss");
      adam.step(params, std::move(terms.gradient));
      reg_sum += (terms.source_mse + terms.transported) * static_cast<double>(count);
      align_sum += terms.alignment * static_cast<double>(count);
      weight += static_cast<double>(count);
    }
    if (!params.all_finite()) check_finite(std::nan(""), result.history, "parameters");
    HistoryEntry entry{epoch, weight > 0.0 ? reg_sum / weight : std::nan(""),
                       weight > 0.0 ? align_sum / weight : std::nan("")};
    result.history.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

std::string_view method_name(AdaptMethod m) { return m == AdaptMethod::kOt ? "ot" : "aug"; }

AdaptMethod parse_method(std::string_view name) {
  if (name == "ot") return AdaptMethod::kOt;
  if (name == "aug" || name == "augmentation") return AdaptMethod::kAugmentation;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected ot or aug)");
}

TrainResult train_split(const Dataset& dataset, AdaptMethod method, const DomainSplit& split,
                        const WindowingConfig& windowing, const TrackerConfig& tracker,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  split.validate();
  const auto source = sequences_for(dataset, split.source, Split::kTrain);
  if (method == AdaptMethod::kAugmentation) {
    return train_supervised(dataset, source, windowing, tracker, cfg, on_epoch);
  }
  const auto target = sequences_for(dataset, split.target, Split::kTrain);
  return train_deepjdot(dataset, source, target, windowing, tracker, cfg, on_epoch);
}

ErrorMatrix adaptation_sweep(const Dataset& dataset, AdaptMethod method,
                             const WindowingConfig& windowing, const TrackerConfig& tracker,
                             const TrainConfig& cfg, std::span<const int> source_counts,
                             const EvalConfig& eval, const ModelCallback& on_model) {
  std::vector<int> counts(source_counts.begin(), source_counts.end());
  if (counts.empty()) {
    for (int m = 1; m <= kNumDomains; ++m) counts.push_back(m);
  }
  for (int k = 0; k < kNumDomains; ++k) dataset.session(k);
  ErrorMatrix matrix;
  matrix.kind = MatrixKind::kAdaptationSweep;
  for (int m : counts) {
    const TrainResult result =
        train_split(dataset, method, DomainSplit::consecutive(m), windowing, tracker, cfg);
    for (int j = 0; j < kNumDomains; ++j) {
      matrix.values(m - 1, j) =
          p90_distance(evaluate_model(result.checkpoint, dataset, j, Split::kTest, windowing, eval));
    }
    if (on_model) on_model(m, result);
  }
  matrix.validate();
  return matrix;
}

}  // namespace imuot
