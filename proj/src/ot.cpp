#include "covot/ot.hpp"

#include <cmath>
#include <sstream>

namespace covot {

Eigen::VectorXd TransportPlan::row_sums() const {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(src.size());
  for (const auto& e : coupling) r(e.i) += e.mass;
  return r;
}

Eigen::VectorXd TransportPlan::col_sums() const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(dst.size());
  for (const auto& e : coupling) c(e.j) += e.mass;
  return c;
}

TransportPlan solve_w2(const EmpiricalMeasure& mu0, const EmpiricalMeasure& mu1) {
  if (mu0.dim() != mu1.dim()) throw PreconditionError("solve_w2: dimension mismatch");
  if (mu0.size() + mu1.size() > kMaxSupport) {
    std::ostringstream os;
    os << "solve_w2: combined support " << mu0.size() + mu1.size() << " exceeds "
       << kMaxSupport;
    throw SizeExceededError(os.str());
  }
  if (std::abs(mu0.weights().sum() - mu1.weights().sum()) > 1e-9)
    throw InfeasibleWeightsError("solve_w2: weight sums mismatch");

  TransportationSimplex simplex;
  auto res = simplex.solve(mu0.points(), mu0.weights(), mu1.points(), mu1.weights());

  TransportPlan plan{mu0, mu1, std::move(res.entries), res.cost, res.degenerate_optimum};
  const double row_err = (plan.row_sums() - mu0.weights()).cwiseAbs().maxCoeff();
  const double col_err = (plan.col_sums() - mu1.weights()).cwiseAbs().maxCoeff();
  if (row_err > 1e-9 || col_err > 1e-9)
    throw InfeasibleWeightsError("solve_w2: marginal mismatch in computed plan");
  return plan;
}

double gaussian_w2_sq(const Gaussian& g0, const Gaussian& g1,
                      const std::optional<SpdMatrix>& weight) {
  Eigen::VectorXd dm = g0.mean - g1.mean;
  SpdMatrix c0 = g0.cov;
  SpdMatrix c1 = g1.cov;
  double mean_term;
  if (weight) {
    if (!weight->strictly_positive())
      throw SingularMatrixError("gaussian_w2: weight matrix must be strictly PD");
    const Eigen::MatrixXd w = weight->inv_sqrt().mat();
    c0 = SpdMatrix(w * c0.mat() * w);
    c1 = SpdMatrix(w * c1.mat() * w);
    mean_term = (w * dm).squaredNorm();
  } else {
    mean_term = dm.squaredNorm();
  }
  const Eigen::MatrixXd r1 = c1.sqrt().mat();
  const SpdMatrix cross = SpdMatrix(r1 * c0.mat() * r1);
  const double trace_term = c0.trace() + c1.trace() - 2.0 * cross.sqrt().trace();
  return mean_term + std::max(0.0, trace_term);
}

Eigen::MatrixXd plan_cross_covariance(const TransportPlan& plan) {
  const int d = plan.src.dim();
  const Eigen::VectorXd m0 = plan.src.moments().mean;
  const Eigen::VectorXd m1 = plan.dst.moments().mean;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : plan.coupling) {
    const Eigen::VectorXd x = plan.src.point(e.i) - m0;
    const Eigen::VectorXd y = plan.dst.point(e.j) - m1;
    cov.noalias() += 0.5 * e.mass * (x * y.transpose() + y * x.transpose());
  }
  return cov;
}

Moments w2_geodesic_moments(const TransportPlan& plan, double t) {
  if (t < 0.0 || t > 1.0) throw OutOfRangeError("w2_geodesic_moments: t outside [0,1]");
  const int d = plan.src.dim();
  const Moments mom0 = plan.src.moments();
  const Moments mom1 = plan.dst.moments();

  // Direct summation over the coupling.
  Eigen::VectorXd mean = (1.0 - t) * mom0.mean + t * mom1.mean;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : plan.coupling) {
    const Eigen::VectorXd z =
        (1.0 - t) * plan.src.point(e.i) + t * plan.dst.point(e.j) - mean;
    c.noalias() += e.mass * z * z.transpose();
  }
  c = 0.5 * (c + c.transpose());

  // Quadratic identity in t through the plan's cross-covariance.
  const Eigen::MatrixXd cross = plan_cross_covariance(plan);
  const Eigen::MatrixXd c_identity = (1.0 - t) * (1.0 - t) * mom0.cov.mat() +
                                     t * t * mom1.cov.mat() + 2.0 * t * (1.0 - t) * cross;
  const double scale = std::max(1.0, mom0.cov.norm2() + mom1.cov.norm2());
  if ((c - c_identity).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw PreconditionError("w2_geodesic_moments: covariance identity violated");

  // PSD sandwich between the squared and the linear interpolation.
  const Eigen::MatrixXd lower =
      (1.0 - t) * (1.0 - t) * mom0.cov.mat() + t * t * mom1.cov.mat();
  const Eigen::MatrixXd upper = (1.0 - t) * mom0.cov.mat() + t * mom1.cov.mat();
  if (!psd_leq(lower, c, 1e-10 * scale) || !psd_leq(c, upper, 1e-10 * scale))
    throw PreconditionError("w2_geodesic_moments: interpolation sandwich violated");

  SpdMatrix cov(c);
  return {mean, cov, cov.trace()};
}

}  // namespace covot
