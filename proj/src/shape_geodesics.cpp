#include "covot/shape_geodesics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>

#include "covot/moment_geodesics.hpp"

namespace covot {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sinc(double x) {
  if (std::abs(x) < 1e-5) return 1.0 - x * x / 6.0 * (1.0 - x * x / 20.0);
  return std::sin(x) / x;
}

// omega / sin(omega), continuous at 0
double omega_over_sin(double w) { return 1.0 / sinc(w); }

void check_normalized(const EmpiricalMeasure& mu, const char* who) {
  const Moments mom = mu.moments();
  const int d = mu.dim();
  if (mom.mean.cwiseAbs().maxCoeff() > 1e-8 ||
      (mom.cov.mat() - MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-8) {
    std::ostringstream os;
    os << who << ": marginal is not normalized (mean 0, covariance Id within 1e-8)";
    throw PreconditionError(os.str());
  }
}

// Positive-orthant generator of an exactly symmetric measure, or nullopt when
// some support point sits on a coordinate hyperplane.
std::optional<EmpiricalMeasure> extract_generator(const EmpiricalMeasure& mu) {
  const int d = mu.dim();
  const int orbits = 1 << d;
  std::vector<int> keep;
  for (int i = 0; i < mu.size(); ++i) {
    bool positive = true;
    for (int k = 0; k < d && positive; ++k) {
      const double v = mu.points()(i, k);
      if (std::abs(v) <= 1e-12) return std::nullopt;  // hyperplane mass
      positive = v > 0.0;
    }
    if (positive) keep.push_back(i);
  }
  if (keep.empty()) return std::nullopt;
  MatrixXd pts(static_cast<int>(keep.size()), d);
  VectorXd w(static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i) {
    pts.row(static_cast<int>(i)) = mu.points().row(keep[i]);
    w(static_cast<int>(i)) = mu.weights()(keep[i]) * orbits;
  }
  if (std::abs(w.sum() - 1.0) > 1e-9) return std::nullopt;
  return EmpiricalMeasure(pts, w, /*merge_duplicates=*/false);
}

struct FixedPointIteration {
  VectorXd omega;
  TransportPlan plan;
  double residual;
  int iterations;
  double max_clamp;
  bool converged;
};

// One evaluation of the fixed-point map: dilate, solve OT, and read off the
// correlations E[gamma_k(0) gamma_k(1)] = (sin w_k / w_k) sum f_ij xi_k eta_k.
VectorXd plan_correlations(const TransportPlan& plan, const VectorXd& omega,
                           double* max_clamp) {
  const int d = plan.src.dim();
  VectorXd corr = VectorXd::Zero(d);
  for (const auto& e : plan.coupling)
    corr += e.mass * plan.src.point(e.i).cwiseProduct(plan.dst.point(e.j));
  for (int k = 0; k < d; ++k) {
    corr(k) *= sinc(omega(k));  // undo the two dilation factors
    if (corr(k) > 1.0) {
      *max_clamp = std::max(*max_clamp, corr(k) - 1.0);
      corr(k) = 1.0;
    } else if (corr(k) < 0.0) {
      *max_clamp = std::max(*max_clamp, -corr(k));
      corr(k) = 0.0;
    }
  }
  return corr;
}

FixedPointIteration iterate_fixed_point(const EmpiricalMeasure& mu0,
                                        const EmpiricalMeasure& mu1, VectorXd omega,
                                        double tol, int max_iter, double damping) {
  const int d = mu0.dim();
  double max_clamp = 0.0;
  double best_step = 1e300;
  int it = 0;
  TransportPlan plan = solve_w2(dilate(mu0, omega), dilate(mu1, omega));
  for (; it < max_iter; ++it) {
    const VectorXd corr = plan_correlations(plan, omega, &max_clamp);
    VectorXd mapped(d);
    for (int k = 0; k < d; ++k) mapped(k) = std::acos(corr(k));
    const VectorXd next = (1.0 - damping) * omega + damping * mapped;
    const double step = (next - omega).cwiseAbs().maxCoeff();
    best_step = std::min(best_step, step);
    omega = next;
    plan = solve_w2(dilate(mu0, omega), dilate(mu1, omega));
    if (step < tol) {
      // residual of the fixed-point condition at the final omega
      const VectorXd final_corr = plan_correlations(plan, omega, &max_clamp);
      double res = 0.0;
      for (int k = 0; k < d; ++k)
        res = std::max(res, std::abs(std::cos(omega(k)) - final_corr(k)));
      return {omega, std::move(plan), res, it + 1, max_clamp, true};
    }
  }
  return {omega, std::move(plan), best_step, it, max_clamp, false};
}

double constrained_cost(const VectorXd& omega, double dilated_w2_sq) {
  double corr_term = 0.0;
  for (int k = 0; k < omega.size(); ++k) {
    const double w = omega(k);
    corr_term += 2.0 * omega_over_sin(w) *
                 (1.0 - std::cos(w) - 0.5 * w * std::sin(w));
  }
  return dilated_w2_sq - corr_term;
}

}  // namespace

EmpiricalMeasure dilate(const EmpiricalMeasure& mu, const VectorXd& omega) {
  const int d = mu.dim();
  if (omega.size() != d) throw PreconditionError("dilate: omega dimension mismatch");
  for (int k = 0; k < d; ++k)
    if (omega(k) < 0.0 || omega(k) > M_PI / 2.0 + 1e-12)
      throw OutOfRangeError("dilate: omega outside [0, pi/2]");
  MatrixXd pts = mu.points();
  for (int k = 0; k < d; ++k) pts.col(k) *= std::sqrt(omega_over_sin(omega(k)));
  return EmpiricalMeasure(pts, mu.weights(), /*merge_duplicates=*/false);
}

double sin_ratio(double omega, double s) {
  if (omega < 1e-6) return s * sinc(omega * s) / sinc(omega);
  return std::sin(omega * s) / std::sin(omega);
}

OmegaGeodesic fixed_point_omega(const EmpiricalMeasure& mu0, const EmpiricalMeasure& mu1,
                                double tol, int max_iter, double damping) {
  if (mu0.dim() != mu1.dim()) throw PreconditionError("fixed_point_omega: dimension mismatch");
  const int d = mu0.dim();
  check_normalized(mu0, "fixed_point_omega");
  check_normalized(mu1, "fixed_point_omega");
  if (!is_reflection_symmetric(mu0) || !is_reflection_symmetric(mu1))
    throw NotSymmetricError("fixed_point_omega: marginals must be d-fold reflection symmetric");

  auto gen0 = extract_generator(mu0);
  auto gen1 = extract_generator(mu1);
  const bool reduced = gen0.has_value() && gen1.has_value();
  const EmpiricalMeasure& base0 = reduced ? *gen0 : mu0;
  const EmpiricalMeasure& base1 = reduced ? *gen1 : mu1;

  auto it = iterate_fixed_point(base0, base1, VectorXd::Zero(d), tol, max_iter, damping);
  if (!it.converged) {
    std::ostringstream os;
    os << "fixed_point_omega: no convergence after " << it.iterations
       << " iterations, best step " << it.residual;
    throw NoConvergenceError(os.str(), it.residual, it.iterations);
  }

  OmegaGeodesic out{it.omega,
                    std::move(it.plan),
                    base0,
                    base1,
                    constrained_cost(it.omega, 0.0),
                    it.iterations,
                    it.residual,
                    reduced,
                    it.max_clamp};
  out.constrained_dist_sq = constrained_cost(it.omega, out.plan.cost);
  return out;
}

std::vector<VectorXd> fixed_point_omega_multistart(const EmpiricalMeasure& mu0,
                                                   const EmpiricalMeasure& mu1, double tol,
                                                   int max_iter, double damping) {
  const int d = mu0.dim();
  check_normalized(mu0, "fixed_point_omega");
  check_normalized(mu1, "fixed_point_omega");
  if (!is_reflection_symmetric(mu0) || !is_reflection_symmetric(mu1))
    throw NotSymmetricError("fixed_point_omega: marginals must be d-fold reflection symmetric");

  auto gen0 = extract_generator(mu0);
  auto gen1 = extract_generator(mu1);
  const bool reduced = gen0.has_value() && gen1.has_value();
  const EmpiricalMeasure& base0 = reduced ? *gen0 : mu0;
  const EmpiricalMeasure& base1 = reduced ? *gen1 : mu1;

  std::vector<VectorXd> starts;
  const int corner_bits = std::min(d, 3);
  for (int mask = 0; mask < (1 << corner_bits); ++mask) {
    VectorXd w = VectorXd::Zero(d);
    for (int k = 0; k < corner_bits; ++k)
      if ((mask >> k) & 1) w(k) = M_PI / 2.0;
    starts.push_back(w);
  }
  starts.push_back(VectorXd::Constant(d, M_PI / 4.0));

  std::vector<VectorXd> found;
  for (const auto& w0 : starts) {
    auto it = iterate_fixed_point(base0, base1, w0, tol, max_iter, damping);
    if (!it.converged) continue;
    bool fresh = true;
    for (const auto& w : found)
      if ((w - it.omega).cwiseAbs().maxCoeff() < 1e-6) fresh = false;
    if (fresh) found.push_back(it.omega);
  }
  return found;
}

VectorXd TrajectoryFamily::mean(double s) const {
  VectorXd m = VectorXd::Zero(start_points.cols());
  for (int p = 0; p < pairs(); ++p) m += masses(p) * sampler(p, s);
  return m;
}

MatrixXd TrajectoryFamily::second_moment(double s) const {
  const int d = static_cast<int>(start_points.cols());
  MatrixXd m = MatrixXd::Zero(d, d);
  for (int p = 0; p < pairs(); ++p) {
    const VectorXd g = sampler(p, s);
    m.noalias() += masses(p) * g * g.transpose();
  }
  return m;
}

TrajectoryFamily constrained_trajectories(const OmegaGeodesic& result) {
  const int d = result.base0.dim();
  const VectorXd omega = result.omega;

  // Coupling pairs on the undilated supports; expand the reflection orbit
  // when the fixed point was solved on generators.
  std::vector<std::array<int, 2>> idx;
  std::vector<double> mass;
  std::vector<int> sign_mask;
  const int orbits = result.used_generators ? (1 << d) : 1;
  for (int s = 0; s < orbits; ++s) {
    for (const auto& e : result.plan.coupling) {
      idx.push_back({e.i, e.j});
      mass.push_back(e.mass / orbits);
      sign_mask.push_back(s);
    }
  }

  const int pairs = static_cast<int>(mass.size());
  TrajectoryFamily fam;
  fam.start_points.resize(pairs, d);
  fam.end_points.resize(pairs, d);
  fam.masses.resize(pairs);
  for (int p = 0; p < pairs; ++p) {
    VectorXd x = result.base0.point(idx[p][0]);
    VectorXd y = result.base1.point(idx[p][1]);
    for (int k = 0; k < d; ++k)
      if ((sign_mask[p] >> k) & 1) {
        x(k) = -x(k);
        y(k) = -y(k);
      }
    fam.start_points.row(p) = x.transpose();
    fam.end_points.row(p) = y.transpose();
    fam.masses(p) = mass[p];
  }

  const MatrixXd starts = fam.start_points;
  const MatrixXd ends = fam.end_points;
  fam.sampler = [starts, ends, omega, d](int p, double s) {
    VectorXd g(d);
    for (int k = 0; k < d; ++k)
      g(k) = sin_ratio(omega(k), 1.0 - s) * starts(p, k) +
             sin_ratio(omega(k), s) * ends(p, k);
    return g;
  };
  return fam;
}

ModulatedSplit modulated_distance_symmetric(const EmpiricalMeasure& mu0,
                                            const EmpiricalMeasure& mu1, double tol,
                                            int max_iter, double damping) {
  const auto [norm0, map0] = normalize(mu0);
  const auto [norm1, map1] = normalize(mu1);
  if (!is_reflection_symmetric(norm0) || !is_reflection_symmetric(norm1))
    throw UnsupportedGeometryError(
        "modulated_distance_symmetric: normalized marginals must be d-fold reflection "
        "symmetric");

  OmegaGeodesic shape = fixed_point_omega(norm0, norm1, tol, max_iter, damping);

  const Moments mom0 = mu0.moments();
  const Moments mom1 = mu1.moments();
  const int d = mu0.dim();
  const VectorXd dm = mom1.mean - mom0.mean;

  // Diagonal covariances with an axis-aligned mean shift admit the explicit
  // per-coordinate solution; anything else goes through the shooting solver.
  const double off0 = (mom0.cov.mat() - MatrixXd(mom0.cov.mat().diagonal().asDiagonal()))
                          .cwiseAbs()
                          .maxCoeff();
  const double off1 = (mom1.cov.mat() - MatrixXd(mom1.cov.mat().diagonal().asDiagonal()))
                          .cwiseAbs()
                          .maxCoeff();
  int shift_axis = -1;
  bool single_axis = true;
  for (int k = 0; k < d; ++k) {
    if (std::abs(dm(k)) > 1e-12 * std::max(1.0, dm.norm())) {
      if (shift_axis >= 0) single_axis = false;
      shift_axis = k;
    }
  }

  double moment_sq;
  const double diag_tol = 1e-10 * std::max(mom0.cov.norm2(), mom1.cov.norm2());
  if (off0 <= diag_tol && off1 <= diag_tol && single_axis) {
    moment_sq = solve_diagonal_moments(mom0.mean, mom1.mean,
                                       mom0.cov.mat().diagonal(), mom1.cov.mat().diagonal(),
                                       shift_axis < 0 ? 0 : shift_axis)
                    .dist_sq;
  } else {
    const ShootResult shot =
        shoot_moment_geodesic(mom0.mean, mom0.cov, mom1.mean, mom1.cov);
    if (!shot.converged)
      throw NoConvergenceError("modulated_distance_symmetric: moment shooting failed",
                               shot.residual, shot.newton_iterations);
    moment_sq = shot.action;
  }

  return {shape.constrained_dist_sq + moment_sq, shape.constrained_dist_sq, moment_sq,
          std::move(shape)};
}

TrajectoryFamily normalized_w2_geodesic(const EmpiricalMeasure& mu0,
                                        const EmpiricalMeasure& mu1) {
  check_normalized(mu0, "normalized_w2_geodesic");
  check_normalized(mu1, "normalized_w2_geodesic");
  auto plan = solve_w2(mu0, mu1);

  const int pairs = static_cast<int>(plan.coupling.size());
  const int d = mu0.dim();
  TrajectoryFamily fam;
  fam.start_points.resize(pairs, d);
  fam.end_points.resize(pairs, d);
  fam.masses.resize(pairs);
  for (int p = 0; p < pairs; ++p) {
    fam.start_points.row(p) = mu0.points().row(plan.coupling[p].i);
    fam.end_points.row(p) = mu1.points().row(plan.coupling[p].j);
    fam.masses(p) = plan.coupling[p].mass;
  }

  const MatrixXd starts = fam.start_points;
  const MatrixXd ends = fam.end_points;
  auto shared_plan = std::make_shared<TransportPlan>(std::move(plan));
  fam.sampler = [starts, ends, shared_plan, d](int p, double s) -> VectorXd {
    const Moments mom = w2_geodesic_moments(*shared_plan, s);
    if (mom.cov.rank() < d) {
      throw DegenerateCovarianceError(
          "normalized_w2_geodesic: interpolant covariance is rank deficient",
          mom.cov.rank(), mom.cov.eigenvectors().rightCols(mom.cov.rank()));
    }
    const VectorXd z = (1.0 - s) * starts.row(p).transpose() + s * ends.row(p).transpose();
    return mom.cov.inv_sqrt().mat() * (z - mom.mean);
  };
  return fam;
}

}  // namespace covot
