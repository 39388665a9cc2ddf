#pragma once

#include <Eigen/Core>

#include <functional>
#include <span>
#include <vector>

namespace imuot::ot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Weighted point cloud; one point per row.
struct EmpiricalDistribution {
  Matrix points;
  Vector weights;

  static EmpiricalDistribution uniform(Matrix points);
  void validate() const;
};

struct CostMatrix {
  Matrix values;
  double alpha = 1.0;  // scale applied to the feature term

  void validate() const;
};

struct Coupling {
  Matrix gamma;
  double transport_cost = 0.0;  // <gamma, C>_F
  double marginal_violation = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SinkhornConfig {
  // Entropic regularisation. When unset, 0.1 * mean(C) is used.
  double epsilon = 0.0;
  double epsilon_scale = 0.1;
  int max_iters = 500;
  double marginal_tol = 1e-6;
  int cost_exponent = 2;

  double resolve_epsilon(const Matrix& cost) const;
  void validate() const;
};

// Exact 1-D Wasserstein distance between two equally weighted scalar samples.
// The samples need not be sorted or of equal size.
double wasserstein_1d(std::span<const double> a, std::span<const double> b, int cost_exponent = 1);

// Log-domain Sinkhorn for min <gamma, C> - epsilon * H(gamma).
// Returns the best iterate; `converged` reports whether marginal_tol was met.
Coupling sinkhorn(const CostMatrix& cost, const Vector& mu_weights, const Vector& nu_weights,
                  const SinkhornConfig& cfg);

// C_ij = alpha * ||a_i - b_j||^2
CostMatrix feature_cost(const Matrix& a, const Matrix& b, double alpha);

// C_ij = alpha * ||z_i^s - z_j^t||^2 + ||y_i^s - yhat_j^t||^2
CostMatrix joint_cost(const Matrix& src_latents, const Matrix& src_labels, const Matrix& tgt_latents,
                      const Matrix& tgt_predictions, double alpha);

using CostBuilder = std::function<CostMatrix(const Matrix&, const Matrix&)>;

struct DivergenceResult {
  double value = 0.0;
  double cross = 0.0;
  double self_mu = 0.0;
  double self_nu = 0.0;
  Coupling coupling;     // cross coupling gamma(mu, nu)
  Coupling coupling_mu;  // gamma(mu, mu)
  Coupling coupling_nu;  // gamma(nu, nu)
  bool converged = false;
};

// Debiased divergence W(mu, nu) - 0.5 (W(mu, mu) + W(nu, nu)).
// `cross_cost` builds the mu-nu cost; `self_cost` builds the two self terms.
DivergenceResult sinkhorn_divergence(const EmpiricalDistribution& mu,
                                     const EmpiricalDistribution& nu,
                                     const CostBuilder& cross_cost, const CostBuilder& self_cost,
                                     const SinkhornConfig& cfg);

// Same cost builder for all three terms.
DivergenceResult sinkhorn_divergence(const EmpiricalDistribution& mu,
                                     const EmpiricalDistribution& nu,
                                     const CostBuilder& cost_builder, const SinkhornConfig& cfg);

// Entropy -sum gamma log gamma with 0 log 0 = 0.
double shannon_entropy(const Matrix& gamma);

}  // namespace imuot::ot
