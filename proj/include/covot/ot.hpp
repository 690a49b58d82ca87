#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "covot/measures.hpp"
#include "covot/network_simplex.hpp"
#include "covot/spd.hpp"

namespace covot {

/// Optimal coupling between two empirical measures for squared-Euclidean
/// cost, with cost = W_2^2.
struct TransportPlan {
  EmpiricalMeasure src;
  EmpiricalMeasure dst;
  std::vector<TransportationSimplex::Entry> coupling;
  double cost = 0.0;
  bool degenerate_optimum = false;  // another optimal basis exists

  Eigen::VectorXd row_sums() const;
  Eigen::VectorXd col_sums() const;
};

/// Combined support cap for the exact solver.
inline constexpr int kMaxSupport = 5000;

/// Exact optimal transport plan (network simplex optimum).
TransportPlan solve_w2(const EmpiricalMeasure& mu0, const EmpiricalMeasure& mu1);

/// Squared Gaussian Wasserstein distance
///   W_2^2 = |m0-m1|^2 + tr[C0 + C1 - 2 (C1^{1/2} C0 C1^{1/2})^{1/2}],
/// or, with a strictly PD `weight` W, the same formula for the weighted norm
/// |.|_W with effective covariances W^{-1/2} C_i W^{-1/2}.
double gaussian_w2_sq(const Gaussian& g0, const Gaussian& g1,
                      const std::optional<SpdMatrix>& weight = std::nullopt);

/// Symmetrized cross-covariance of a coupling,
///   Cov(plan) = (1/2) sum_ij f_ij [(x_i-m0) (y_j-m1)^T + transpose].
Eigen::MatrixXd plan_cross_covariance(const TransportPlan& plan);

/// Moments of the displacement interpolation ((1-t)x + t y)_# plan.
/// Verifies the quadratic covariance identity against direct summation and
/// the PSD interpolation sandwich for optimal plans.
Moments w2_geodesic_moments(const TransportPlan& plan, double t);

}  // namespace covot
