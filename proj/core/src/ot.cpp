#include "imuot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "imuot/error.hpp"

namespace imuot::ot {

namespace {

double unit_cost(double d, int exponent) { return exponent == 2 ? d * d : d; }

void check_weights(const Vector& w, const char* name) {
  if (w.size() == 0) throw ArgumentError(std::string(name) + " weights are empty");
  if (!w.allFinite() || (w.array() < 0.0).any()) {
    throw ArgumentError(std::string(name) + " weights must be finite and non-negative");
  }
  if (std::abs(w.sum() - 1.0) > 1e-9) {
    throw ArgumentError(std::string(name) + " weights must sum to 1");
  }
}

std::vector<Eigen::Index> support(const Vector& w) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) idx.push_back(i);
  }
  return idx;
}

// log sum_j exp(m_ij) per row.
Vector row_logsumexp(const Matrix& m) {
  const Vector mx = m.rowwise().maxCoeff();
  const Vector s = (m.colwise() - mx).array().exp().rowwise().sum();
  return mx.array() + s.array().log();
}

Vector col_logsumexp(const Matrix& m) {
  const Eigen::RowVectorXd mx = m.colwise().maxCoeff();
  const Eigen::RowVectorXd s = (m.rowwise() - mx).array().exp().colwise().sum();
  return (mx.array() + s.array().log()).transpose();
}

}  // namespace

EmpiricalDistribution EmpiricalDistribution::uniform(Matrix points) {
  EmpiricalDistribution d;
  const auto n = points.rows();
  d.points = std::move(points);
  d.weights = Vector::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  return d;
}

void EmpiricalDistribution::validate() const {
  if (points.rows() != weights.size()) {
    throw ArgumentError("distribution has " + std::to_string(points.rows()) + " points but " +
                        std::to_string(weights.size()) + " weights");
  }
  check_weights(weights, "distribution");
}

void CostMatrix::validate() const {
  if (values.size() == 0) throw ArgumentError("cost matrix is empty");
  if (!values.allFinite()) throw ArgumentError("cost matrix has non-finite entries");
  if ((values.array() < 0.0).any()) throw ArgumentError("cost matrix has negative entries");
}

double SinkhornConfig::resolve_epsilon(const Matrix& cost) const {
  if (epsilon > 0.0) return epsilon;
  const double mean = cost.size() > 0 ? cost.mean() : 0.0;
  return mean > 0.0 ? epsilon_scale * mean : 1.0;
}

void SinkhornConfig::validate() const {
  if (epsilon < 0.0 || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive");
  if (epsilon == 0.0 && !(epsilon_scale > 0.0)) throw ConfigError("epsilon_scale must be positive");
  if (!(marginal_tol > 0.0)) throw ConfigError("marginal_tol must be positive");
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  if (cost_exponent != 1 && cost_exponent != 2) throw ConfigError("cost_exponent must be 1 or 2");
}

// Epsilon annealing for small regularisation: start at kAnnealStart * mean(C).
constexpr double kAnnealStart = 0.01;
constexpr double kAnnealTol = 1e-4;
constexpr int kAnnealIters = 200;

double wasserstein_1d(std::span<const double> a, std::span<const double> b, int cost_exponent) {
  if (a.empty() || b.empty()) throw ArgumentError("wasserstein_1d needs non-empty samples");
  if (cost_exponent != 1 && cost_exponent != 2) throw ArgumentError("cost_exponent must be 1 or 2");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const std::size_t n = sa.size();
  const std::size_t m = sb.size();
  if (n == m) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += unit_cost(std::abs(sa[i] - sb[i]), cost_exponent);
    return total / static_cast<double>(n);
  }

  // Merge the quantile breakpoints i/n and j/m; positions are kept as
  // integers on the common grid 1/(n*m) so the interval lengths are exact.
  const double denom = static_cast<double>(n) * static_cast<double>(m);
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t pos = 0;
  double total = 0.0;
  while (i < n && j < m) {
    const std::size_t next_a = (i + 1) * m;
    const std::size_t next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    total += static_cast<double>(next - pos) * unit_cost(std::abs(sa[i] - sb[j]), cost_exponent);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return total / denom;
}

Coupling sinkhorn(const CostMatrix& cost, const Vector& mu_weights, const Vector& nu_weights,
                  const SinkhornConfig& cfg) {
  cfg.validate();
  cost.validate();
  const Matrix& c_full = cost.values;
  if (c_full.rows() != mu_weights.size() || c_full.cols() != nu_weights.size()) {
    throw ArgumentError("cost matrix shape does not match the weight vectors");
  }
  check_weights(mu_weights, "mu");
  check_weights(nu_weights, "nu");

  // Zero-weight points carry no mass; solve on the support only.
  const auto rows = support(mu_weights);
  const auto cols = support(nu_weights);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(cols.size());
  Matrix c(n, m);
  Vector mu(n);
  Vector nu(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    mu[i] = mu_weights[rows[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < m; ++j) {
      c(i, j) = c_full(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
    }
  }
  for (Eigen::Index j = 0; j < m; ++j) nu[j] = nu_weights[cols[static_cast<std::size_t>(j)]];

  const double eps = cfg.resolve_epsilon(c_full);
  const Vector log_mu = mu.array().log();
  const Vector log_nu = nu.array().log();

  // Scaled potentials u = f / eps, v = g / eps; gamma_ij = exp(K_ij + u_i + v_j).
  // Between absorptions the updates run on G = exp(K + u + v) with scalings a, b, so
  // u + log a and v + log b are the log-domain iterates; large or tiny scalings are
  // folded back into the potentials.
  Matrix kernel;
  Vector u = Vector::Zero(n);
  Vector v = Vector::Zero(m);
  Vector a = Vector::Ones(n);
  Vector b = Vector::Ones(m);
  Matrix g;
  auto refresh = [&] {
    g = ((kernel.colwise() + u).rowwise() + v.transpose()).array().exp().matrix();
  };
  auto absorb = [&] {
    u.array() += a.array().log();
    v.array() += b.array().log();
    a.setOnes();
    b.setOnes();
  };
  auto log_step = [&] {
    Matrix work = kernel;
    work.rowwise() += v.transpose();
    u = log_mu - row_logsumexp(work);
    work = kernel;
    work.colwise() += u;
    v = log_nu - col_logsumexp(work);
    refresh();
  };
  auto usable = [](const Vector& x) { return x.allFinite() && x.minCoeff() > 1e-200; };
  constexpr double kLogLimit = 50.0;

  Vector best_u;
  Vector best_v;
  double best_violation = 0.0;
  auto score = [&](const Vector& gb) {
    // Columns are exact after the b-update; only the rows can be off.
    const double violation = (a.cwiseProduct(gb) - mu).cwiseAbs().maxCoeff();
    if (violation < best_violation) {
      best_violation = violation;
      best_u = u + a.array().log().matrix();
      best_v = v + b.array().log().matrix();
    }
    return violation;
  };
  int iterations = 0;

  // One solve at a fixed epsilon, warm-started from the current potentials.
  auto solve = [&](double stage_eps, double tol, int max_iters) {
    kernel = -c / stage_eps;
    a.setOnes();
    b.setOnes();
    best_u = u;
    best_v = v;
    best_violation = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
      if (it == 0) {
        log_step();
        ++iterations;
        continue;
      }
      const Vector gb = g * b;
      if (usable(gb) && score(gb) <= tol) break;
      ++iterations;
      const Vector a_prev = a;
      bool ok = usable(gb);
      if (ok) {
        a = mu.cwiseQuotient(gb);
        const Vector gta = g.transpose() * a;
        ok = usable(gta);
        if (ok) b = nu.cwiseQuotient(gta);
      }
      if (!ok) {
        a = a_prev;
        absorb();
        log_step();
      } else if (a.array().log().abs().maxCoeff() > kLogLimit ||
                 b.array().log().abs().maxCoeff() > kLogLimit) {
        absorb();
        refresh();
      }
    }
    if (best_violation > tol) {
      // Loop ran out of iterations; the last update has not been scored yet.
      const Vector gb = g * b;
      if (usable(gb)) score(gb);
    }
    u = best_u;
    v = best_v;
  };

  // Small epsilon: anneal from a coarse epsilon, halving per stage.
  const double coarse = kAnnealStart * c.mean();
  double stage_eps = eps;
  if (eps < coarse) {
    stage_eps = coarse;
    while (stage_eps > eps) {
      solve(stage_eps, kAnnealTol, kAnnealIters);
      const double next = std::max(eps, 0.5 * stage_eps);
      u *= stage_eps / next;
      v *= stage_eps / next;
      stage_eps = next;
      if (next == eps) break;
    }
  }
  solve(eps, cfg.marginal_tol, cfg.max_iters);

  Matrix gamma_support = kernel;
  gamma_support.colwise() += best_u;
  gamma_support.rowwise() += best_v.transpose();
  gamma_support = gamma_support.array().exp();
  if (!gamma_support.allFinite()) throw NumericalError("sinkhorn produced non-finite coupling");

  Coupling out;
  out.gamma = Matrix::Zero(c_full.rows(), c_full.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      out.gamma(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) =
          gamma_support(i, j);
    }
  }
  out.transport_cost = (out.gamma.array() * c_full.array()).sum();
  const double row_err = (out.gamma.rowwise().sum() - mu_weights).cwiseAbs().maxCoeff();
  const double col_err =
      (out.gamma.colwise().sum().transpose() - nu_weights).cwiseAbs().maxCoeff();
  out.marginal_violation = std::max(row_err, col_err);
  out.iterations = iterations;
  out.converged = out.marginal_violation <= cfg.marginal_tol;
  return out;
}

CostMatrix feature_cost(const Matrix& a, const Matrix& b, double alpha) {
  if (a.cols() != b.cols()) throw ArgumentError("feature dimensions differ");
  CostMatrix c;
  c.alpha = alpha;
  c.values.resize(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      c.values(i, j) = alpha * (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return c;
}

CostMatrix joint_cost(const Matrix& src_latents, const Matrix& src_labels, const Matrix& tgt_latents,
                      const Matrix& tgt_predictions, double alpha) {
  if (src_latents.cols() != tgt_latents.cols()) throw ArgumentError("latent dimensions differ");
  if (src_labels.cols() != tgt_predictions.cols()) throw ArgumentError("label dimensions differ");
  if (src_latents.rows() != src_labels.rows() || tgt_latents.rows() != tgt_predictions.rows()) {
    throw ArgumentError("latent and label row counts differ");
  }
  CostMatrix c = feature_cost(src_latents, tgt_latents, alpha);
  for (Eigen::Index j = 0; j < tgt_predictions.rows(); ++j) {
    for (Eigen::Index i = 0; i < src_labels.rows(); ++i) {
      c.values(i, j) += (src_labels.row(i) - tgt_predictions.row(j)).squaredNorm();
    }
  }
  return c;
}

DivergenceResult sinkhorn_divergence(const EmpiricalDistribution& mu,
                                     const EmpiricalDistribution& nu,
                                     const CostBuilder& cross_cost, const CostBuilder& self_cost,
                                     const SinkhornConfig& cfg) {
  mu.validate();
  nu.validate();
  DivergenceResult r;
  r.coupling = sinkhorn(cross_cost(mu.points, nu.points), mu.weights, nu.weights, cfg);
  r.coupling_mu = sinkhorn(self_cost(mu.points, mu.points), mu.weights, mu.weights, cfg);
  r.coupling_nu = sinkhorn(self_cost(nu.points, nu.points), nu.weights, nu.weights, cfg);
  r.cross = r.coupling.transport_cost;
  r.self_mu = r.coupling_mu.transport_cost;
  r.self_nu = r.coupling_nu.transport_cost;
  r.value = r.cross - 0.5 * (r.self_mu + r.self_nu);
  r.converged = r.coupling.converged && r.coupling_mu.converged && r.coupling_nu.converged;
  return r;
}

DivergenceResult sinkhorn_divergence(const EmpiricalDistribution& mu,
                                     const EmpiricalDistribution& nu,
                                     const CostBuilder& cost_builder, const SinkhornConfig& cfg) {
  return sinkhorn_divergence(mu, nu, cost_builder, cost_builder, cfg);
}

double shannon_entropy(const Matrix& gamma) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < gamma.size(); ++k) {
    const double g = gamma.data()[k];
    if (g > 0.0) h -= g * std::log(g);
  }
  return h;
}

}  // namespace imuot::ot
