#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "covot/measures.hpp"
#include "covot/ot.hpp"

namespace covot {

/// Result of the omega fixed point for covariance-constrained transport
/// between normalized, d-fold reflection symmetric marginals.
struct OmegaGeodesic {
  Eigen::VectorXd omega;      // in [0, pi/2]^d
  TransportPlan plan;         // optimal plan between the dilated marginals
  EmpiricalMeasure base0;     // undilated marginals behind the plan indices
  EmpiricalMeasure base1;
  double constrained_dist_sq = 0.0;
  int iterations = 0;
  double residual = 0.0;          // max_k |cos w_k - E[gamma_k(0) gamma_k(1)]|
  bool used_generators = false;   // solved on positive-orthant generators
  double max_clamp = 0.0;         // largest arccos-argument clamp applied
};

/// Component-wise dilation [G^w x]_k = sqrt(w_k / sin w_k) x_k.
EmpiricalMeasure dilate(const EmpiricalMeasure& mu, const Eigen::VectorXd& omega);

/// sin(w s)/sin(w) with the linear limit for w -> 0.
double sin_ratio(double omega, double s);

/// Damped Picard iteration w <- (1-theta) w + theta arccos E[g_k(0) g_k(1)]
/// started from w = 0. Marginals must be normalized (mean 0, covariance Id
/// within 1e-8) and d-fold reflection symmetric.
OmegaGeodesic fixed_point_omega(const EmpiricalMeasure& mu0, const EmpiricalMeasure& mu1,
                                double tol = 1e-10, int max_iter = 200,
                                double damping = 0.5);

/// Multi-start diagnostic: runs the iteration from the box corners (and the
/// center) and returns the distinct fixed points found.
std::vector<Eigen::VectorXd> fixed_point_omega_multistart(const EmpiricalMeasure& mu0,
                                                          const EmpiricalMeasure& mu1,
                                                          double tol = 1e-10,
                                                          int max_iter = 200,
                                                          double damping = 0.5);

/// Family of mass trajectories indexed by coupling pair.
struct TrajectoryFamily {
  Eigen::MatrixXd start_points;  // P x d
  Eigen::MatrixXd end_points;    // P x d
  Eigen::VectorXd masses;        // P
  std::function<Eigen::VectorXd(int, double)> sampler;

  int pairs() const { return static_cast<int>(masses.size()); }
  Eigen::VectorXd mean(double s) const;
  Eigen::MatrixXd second_moment(double s) const;  // E[gamma(s) gamma(s)^T]
};

/// Sine-interpolation trajectories of a converged fixed point, expanded to
/// the full reflection orbit when the plan was solved on generators.
TrajectoryFamily constrained_trajectories(const OmegaGeodesic& result);

struct ModulatedSplit {
  double total_sq;
  double shape_sq;
  double moment_sq;
  OmegaGeodesic shape;
};

/// Splitting of the covariance-modulated distance for marginals whose
/// normalizations are d-fold reflection symmetric: shape part from the omega
/// fixed point, moment part from the moment geodesic solvers.
ModulatedSplit modulated_distance_symmetric(const EmpiricalMeasure& mu0,
                                            const EmpiricalMeasure& mu1,
                                            double tol = 1e-10, int max_iter = 200,
                                            double damping = 0.5);

/// Displacement interpolation of the classical W2 plan re-normalized to mean
/// zero and identity covariance at every time. Comparison baseline for
/// constrained_trajectories.
TrajectoryFamily normalized_w2_geodesic(const EmpiricalMeasure& mu0,
                                        const EmpiricalMeasure& mu1);

}  // namespace covot
