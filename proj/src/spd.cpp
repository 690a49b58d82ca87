#include "covot/spd.hpp"

#include <cmath>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

namespace covot {

namespace {

void check_square(const Eigen::MatrixXd& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    std::ostringstream os;
    os << who << ": expected a nonempty square matrix, got " << m.rows() << "x" << m.cols();
    throw PreconditionError(os.str());
  }
  if (m.rows() > kMaxDim) {
    std::ostringstream os;
    os << who << ": dimension " << m.rows() << " exceeds dense cap " << kMaxDim;
    throw PreconditionError(os.str());
  }
  if (!m.allFinite()) throw PreconditionError(std::string(who) + ": non-finite entries");
}

}  // namespace

SpdMatrix::SpdMatrix(const Eigen::MatrixXd& m) {
  check_square(m, "SpdMatrix");
  const double scale = m.cwiseAbs().maxCoeff();
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (scale > 0 && asym > 1e-12 * scale) {
    std::ostringstream os;
    os << "SpdMatrix: relative asymmetry " << asym / scale << " exceeds 1e-12";
    throw NonSymmetricError(os.str());
  }
  m_ = 0.5 * (m + m.transpose());
  ensure_eig();
  const double norm = std::max(std::abs(evals_(0)), std::abs(evals_(evals_.size() - 1)));
  if (evals_(0) < -1e-10 * norm) {
    std::ostringstream os;
    os << "SpdMatrix: eigenvalue " << evals_(0) << " below -1e-10*||C||_2";
    throw NegativeEigenvalueError(os.str());
  }
  evals_ = evals_.cwiseMax(0.0);
}

SpdMatrix SpdMatrix::identity(int d) { return SpdMatrix(Eigen::MatrixXd::Identity(d, d)); }

SpdMatrix SpdMatrix::zero(int d) { return SpdMatrix(Eigen::MatrixXd::Zero(d, d)); }

SpdMatrix SpdMatrix::from_product(const Eigen::MatrixXd& m) {
  check_square(m, "SpdMatrix::from_product");
  Eigen::MatrixXd c = m * m.transpose();
  return SpdMatrix(0.5 * (c + c.transpose()));
}

void SpdMatrix::ensure_eig() const {
  if (have_eig_) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_);
  if (es.info() != Eigen::Success)
    throw PreconditionError("SpdMatrix: eigendecomposition failed");
  evals_ = es.eigenvalues();
  evecs_ = es.eigenvectors();
  have_eig_ = true;
}

const Eigen::VectorXd& SpdMatrix::eigenvalues() const {
  ensure_eig();
  return evals_;
}

const Eigen::MatrixXd& SpdMatrix::eigenvectors() const {
  ensure_eig();
  return evecs_;
}

double SpdMatrix::eps_pd() const {
  ensure_eig();
  return 1e-12 * evals_(evals_.size() - 1);
}

int SpdMatrix::rank() const {
  ensure_eig();
  const double tol = eps_pd();
  int r = 0;
  for (int i = 0; i < evals_.size(); ++i)
    if (evals_(i) > tol) ++r;
  return r;
}

bool SpdMatrix::strictly_positive() const {
  ensure_eig();
  return evals_(0) > eps_pd();
}

double SpdMatrix::norm2() const {
  ensure_eig();
  return evals_(evals_.size() - 1);
}

SpdMatrix SpdMatrix::sqrt(bool strict) const {
  ensure_eig();
  Eigen::VectorXd lam = evals_;
  if (strict) lam = lam.cwiseMax(eps_pd());
  Eigen::MatrixXd s = evecs_ * lam.cwiseSqrt().asDiagonal() * evecs_.transpose();
  return SpdMatrix(0.5 * (s + s.transpose()));
}

SpdMatrix SpdMatrix::inv_sqrt() const {
  if (!strictly_positive())
    throw SingularMatrixError("inv_sqrt: matrix is not strictly positive definite");
  Eigen::VectorXd lam = evals_.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd s = evecs_ * lam.asDiagonal() * evecs_.transpose();
  return SpdMatrix(0.5 * (s + s.transpose()));
}

Eigen::MatrixXd SpdMatrix::log() const {
  if (!strictly_positive())
    throw SingularMatrixError("sym_log: matrix is not strictly positive definite");
  Eigen::VectorXd lam = evals_.array().log();
  Eigen::MatrixXd l = evecs_ * lam.asDiagonal() * evecs_.transpose();
  return 0.5 * (l + l.transpose());
}

SpdMatrix SpdMatrix::pow(double t) const {
  ensure_eig();
  if (t < 0 && rank() < dim())
    throw SingularMatrixError("spd_power: negative power of a rank-deficient matrix");
  Eigen::VectorXd lam(evals_.size());
  for (int i = 0; i < evals_.size(); ++i)
    lam(i) = evals_(i) > 0 ? std::pow(evals_(i), t) : (t == 0.0 ? 1.0 : 0.0);
  Eigen::MatrixXd p = evecs_ * lam.asDiagonal() * evecs_.transpose();
  return SpdMatrix(0.5 * (p + p.transpose()));
}

SpdMatrix SpdMatrix::inverse() const {
  if (!strictly_positive())
    throw SingularMatrixError("inverse: matrix is not strictly positive definite");
  return pow(-1.0);
}

SpdMatrix sym_sqrt(const SpdMatrix& c, bool strict) { return c.sqrt(strict); }

Eigen::MatrixXd sym_log(const SpdMatrix& c) { return c.log(); }

SpdMatrix spd_power(const SpdMatrix& c, double t) { return c.pow(t); }

MatrixNorms norms(const Eigen::MatrixXd& m) {
  check_square(m, "norms");
  return {hs_norm(m), spectral_norm(m)};
}

double hs_norm(const Eigen::MatrixXd& m) { return m.norm(); }

double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd mtm = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (mtm + mtm.transpose()));
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

SpdMatrix spd_geodesic(const SpdMatrix& c0, const SpdMatrix& c1, double t) {
  if (!c0.strictly_positive() || !c1.strictly_positive())
    throw SingularMatrixError("spd_geodesic: endpoints must be strictly positive definite");
  const Eigen::MatrixXd s0 = c0.sqrt().mat();
  const Eigen::MatrixXd w = c0.inv_sqrt().mat();
  SpdMatrix mid = SpdMatrix(w * c1.mat() * w);
  Eigen::MatrixXd g = s0 * mid.pow(t).mat() * s0;
  return SpdMatrix(0.5 * (g + g.transpose()));
}

double spd_geodesic_dist_sq(const SpdMatrix& c0, const SpdMatrix& c1) {
  const Eigen::MatrixXd w = c0.inv_sqrt().mat();
  SpdMatrix mid = SpdMatrix(w * c1.mat() * w);
  return hs_norm(mid.log()) * hs_norm(mid.log()) / 8.0;
}

bool psd_leq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double slack) {
  Eigen::MatrixXd d = b - a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (d + d.transpose()));
  return es.eigenvalues().minCoeff() >= -slack;
}

Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& m) { return m.exp(); }

}  // namespace covot
