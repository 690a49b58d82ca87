#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "covot/spd.hpp"

namespace covot {

/// Time-sampled curve on (mean, covariance) space together with the adapted
/// left square roots A_t (A A^T = C, A^{-1} Adot symmetric) and co-rotations
/// R_t = C_t^{-1/2} A_t.
struct MomentCurve {
  Eigen::VectorXd times;              // N, increasing grid on [0,1]
  Eigen::MatrixXd means;              // N x d
  std::vector<SpdMatrix> covs;        // N
  std::vector<Eigen::MatrixXd> roots;      // N, A_t
  std::vector<Eigen::MatrixXd> rotations;  // N, R_t in SO(d)
  std::optional<Eigen::VectorXd> alpha;    // constant mean costate
  std::optional<Eigen::MatrixXd> skew_q;   // rotation costate (constrained case)

  int size() const { return static_cast<int>(times.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
};

/// The three equivalent values of the moment action:
///  primal    int 1/2 <mdot, C^{-1} mdot> + 1/8 tr(Cdot C^{-1} Cdot C^{-1})
///  root      int 1/2 |A^{-1} mdot|^2 + 1/2 ||A^{-1} Adot||_HS^2
///  sym_root  int 1/2 <mdot, C^{-1} mdot> + 1/8 ||Sdot S^{-1} + S^{-1} Sdot||_HS^2
/// evaluated by trapezoidal quadrature with high-order interior differences.
struct ActionValues {
  double primal;
  double root_form;
  double sqrt_form;
};
ActionValues action_moment(const MomentCurve& curve);

/// Time derivatives of a sampled path by 4th-order central differences in the
/// interior and 2nd-order one-sided stencils at the ends.
Eigen::MatrixXd sampled_derivative(const Eigen::VectorXd& times, const Eigen::MatrixXd& values);

/// Column-major vectorization of a square matrix, and its inverse applied to
/// one row of a stacked sample matrix. Rows of Eigen matrices are not
/// contiguous, so the row must be copied before mapping it back.
inline Eigen::VectorXd flatten_matrix(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}
inline Eigen::MatrixXd unflatten_row(const Eigen::MatrixXd& stacked, int row, int d) {
  const Eigen::VectorXd v = stacked.row(row).transpose();
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), d, d);
}

struct AdaptedRootResult {
  std::vector<Eigen::MatrixXd> roots;
  std::vector<Eigen::MatrixXd> rotations;
};

/// Integrates Adot = 1/2 Cdot A^{-T} from A0 along a sampled SPD curve (RK4,
/// Hermite interpolation of C between samples).
AdaptedRootResult adapted_root(const Eigen::VectorXd& times, const std::vector<SpdMatrix>& covs,
                               const Eigen::MatrixXd& a0);

/// Same integration with exact curve callbacks.
AdaptedRootResult adapted_root(const Eigen::VectorXd& times,
                               const std::function<Eigen::MatrixXd(double)>& cov,
                               const std::function<Eigen::MatrixXd(double)>& cov_dot,
                               const Eigen::MatrixXd& a0);

/// Closed-form solution of the scalar mean-variance geodesic problem.
struct VarianceMomentSolution {
  double n;        // |m1 - m0|
  double sigma0;
  double sigma1;
  double beta;     // sqrt(2) * sqrt(dist_sq)
  double t0;
  double dist_sq;
};

struct VarianceMomentResult {
  VarianceMomentSolution sol;
  Eigen::VectorXd times;
  Eigen::MatrixXd means;   // N x d
  Eigen::VectorXd sigmas;  // N
};

VarianceMomentResult solve_variance_moments(const Eigen::VectorXd& m0,
                                            const Eigen::VectorXd& m1, double sigma0,
                                            double sigma1, int grid_n = 201);

struct DiagonalMomentResult {
  MomentCurve curve;
  double dist_sq;
};

/// Moment geodesic for simultaneously diagonal covariances with the mean
/// shift supported on coordinate `axis`: that coordinate follows the scalar
/// mean-variance solution, the others interpolate geometrically.
DiagonalMomentResult solve_diagonal_moments(const Eigen::VectorXd& m0,
                                            const Eigen::VectorXd& m1,
                                            const Eigen::VectorXd& lambda0,
                                            const Eigen::VectorXd& lambda1, int axis,
                                            int grid_n = 201);

struct ShootResult {
  MomentCurve curve;
  double action = 0.0;
  double residual = 0.0;
  bool converged = false;
  int newton_iterations = 0;
};

/// Boundary-value solver for the moment geodesic system
///   mdot = C alpha,   d/dt (A^{-1} Adot) = [A^{-1} Adot, Q] - (A^T alpha)^{x2}
/// by damped-Newton shooting over (alpha, Z0 [, Q]); Q = 0 without a rotation
/// constraint. With a constraint R, the terminal root must satisfy
/// A_1 = C1^{1/2} R. Throws NoConvergence with the best iterate attached.
ShootResult shoot_moment_geodesic(const Eigen::VectorXd& m0, const SpdMatrix& c0,
                                  const Eigen::VectorXd& m1, const SpdMatrix& c1,
                                  const std::optional<Eigen::MatrixXd>& rotation_constraint =
                                      std::nullopt,
                                  double tol = 1e-8, int grid_n = 201);

/// Multi-start variant reporting every convergent branch with its action,
/// sorted by action. No global optimality is claimed.
std::vector<ShootResult> shoot_moment_branches(const Eigen::VectorXd& m0, const SpdMatrix& c0,
                                               const Eigen::VectorXd& m1, const SpdMatrix& c1,
                                               const std::optional<Eigen::MatrixXd>&
                                                   rotation_constraint,
                                               double tol, int grid_n, int num_starts,
                                               unsigned seed = 12345);

struct RotationSearchResult {
  double angle = 0.0;    // optimal rotation angle
  double dist_sq = 0.0;  // rotation-constrained optimum at that angle
  std::vector<std::pair<double, double>> samples;  // (angle, dist_sq) grid
};

/// Grid-plus-refine search of inf_R D_R over SO(2).
RotationSearchResult moment_rotation_search_2d(const Eigen::VectorXd& m0, const SpdMatrix& c0,
                                               const Eigen::VectorXd& m1, const SpdMatrix& c1,
                                               int grid_n = 16, double tol = 1e-7);

}  // namespace covot
