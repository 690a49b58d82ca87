#pragma once

#include <Eigen/Dense>

#include "covot/errors.hpp"

namespace covot {

/// Symmetric positive semi-definite matrix with cached eigendata.
///
/// Construction symmetrizes the input exactly and rejects matrices whose
/// asymmetry exceeds 1e-12 relative, or whose smallest eigenvalue is below
/// -1e-10 * ||C||_2. Eigenvalues in [-1e-10*||C||_2, 0) are clamped to zero.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  explicit SpdMatrix(const Eigen::MatrixXd& m);

  static SpdMatrix identity(int d);
  static SpdMatrix zero(int d);
  /// Builds M M^T from an arbitrary square M (always PSD).
  static SpdMatrix from_product(const Eigen::MatrixXd& m);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  /// Ascending eigenvalues (clamped at zero) and the matching eigenvectors.
  const Eigen::VectorXd& eigenvalues() const;
  const Eigen::MatrixXd& eigenvectors() const;

  /// Strict-positivity threshold: 1e-12 * ||C||_2.
  double eps_pd() const;
  int rank() const;
  bool strictly_positive() const;

  /// Symmetric square root. With `strict`, eigenvalues are floored at eps_pd.
  SpdMatrix sqrt(bool strict = false) const;
  /// Inverse symmetric square root; requires strict positivity.
  SpdMatrix inv_sqrt() const;
  /// Matrix logarithm; requires strict positivity.
  Eigen::MatrixXd log() const;
  /// Spectral power C^t. Requires strict positivity when t < 0.
  SpdMatrix pow(double t) const;
  SpdMatrix inverse() const;

  double trace() const { return m_.trace(); }
  double norm2() const;  // spectral norm = largest eigenvalue

 private:
  Eigen::MatrixXd m_;
  void ensure_eig() const;
  mutable bool have_eig_ = false;
  mutable Eigen::VectorXd evals_;
  mutable Eigen::MatrixXd evecs_;
};

/// Maximum dimension accepted by the dense routines.
inline constexpr int kMaxDim = 64;

SpdMatrix sym_sqrt(const SpdMatrix& c, bool strict = false);
Eigen::MatrixXd sym_log(const SpdMatrix& c);
SpdMatrix spd_power(const SpdMatrix& c, double t);

struct MatrixNorms {
  double hs;        // Hilbert-Schmidt (Frobenius)
  double spectral;  // largest singular value
};
MatrixNorms norms(const Eigen::MatrixXd& m);

double hs_norm(const Eigen::MatrixXd& m);
double spectral_norm(const Eigen::MatrixXd& m);

/// Geodesic of the affine-invariant metric:
/// C_t = C0^{1/2} (C0^{-1/2} C1 C0^{-1/2})^t C0^{1/2}.
SpdMatrix spd_geodesic(const SpdMatrix& c0, const SpdMatrix& c1, double t);

/// Squared affine-invariant moment distance for equal means:
/// (1/8) || log(C0^{-1/2} C1 C0^{-1/2}) ||_HS^2.
double spd_geodesic_dist_sq(const SpdMatrix& c0, const SpdMatrix& c1);

/// True when A - B is PSD up to `slack` on the smallest eigenvalue.
bool psd_leq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double slack = 1e-10);

Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& m);

}  // namespace covot
