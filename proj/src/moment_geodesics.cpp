#include "covot/moment_geodesics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "covot/errors.hpp"

namespace covot {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double uniform_step(const VectorXd& times, const char* who) {
  const int n = static_cast<int>(times.size());
  if (n < 5) throw PreconditionError(std::string(who) + ": need at least 5 samples");
  const double h = (times(n - 1) - times(0)) / (n - 1);
  for (int k = 0; k + 1 < n; ++k)
    if (std::abs(times(k + 1) - times(k) - h) > 1e-9 * std::max(1.0, std::abs(h)))
      throw PreconditionError(std::string(who) + ": grid must be uniform");
  return h;
}

VectorXd uniform_grid(int n) {
  VectorXd t(n);
  for (int k = 0; k < n; ++k) t(k) = static_cast<double>(k) / (n - 1);
  return t;
}

double trapezoid(const VectorXd& times, const VectorXd& f) {
  double s = 0.0;
  for (int k = 0; k + 1 < times.size(); ++k)
    s += 0.5 * (times(k + 1) - times(k)) * (f(k) + f(k + 1));
  return s;
}

MatrixXd sym_part(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }
MatrixXd asym_part(const MatrixXd& m) { return 0.5 * (m - m.transpose()); }

int sym_dof(int d) { return d * (d + 1) / 2; }
int skew_dof(int d) { return d * (d - 1) / 2; }

VectorXd sym_to_vec(const MatrixXd& s) {
  const int d = static_cast<int>(s.rows());
  VectorXd v(sym_dof(d));
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) v(p++) = s(i, j);
  return v;
}

MatrixXd vec_to_sym(const VectorXd& v, int d) {
  MatrixXd s(d, d);
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      s(i, j) = v(p);
      s(j, i) = v(p);
      ++p;
    }
  return s;
}

VectorXd skew_to_vec(const MatrixXd& q) {
  const int d = static_cast<int>(q.rows());
  VectorXd v(skew_dof(d));
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) v(p++) = q(i, j);
  return v;
}

MatrixXd vec_to_skew(const VectorXd& v, int d) {
  MatrixXd q = MatrixXd::Zero(d, d);
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      q(i, j) = v(p);
      q(j, i) = -v(p);
      ++p;
    }
  return q;
}

}  // namespace

Eigen::MatrixXd sampled_derivative(const VectorXd& times, const MatrixXd& values) {
  const int n = static_cast<int>(times.size());
  if (values.rows() != n) throw PreconditionError("sampled_derivative: size mismatch");
  const double h = uniform_step(times, "sampled_derivative");
  MatrixXd out(n, values.cols());
  out.row(0) = (-3.0 * values.row(0) + 4.0 * values.row(1) - values.row(2)) / (2.0 * h);
  out.row(1) = (values.row(2) - values.row(0)) / (2.0 * h);
  for (int k = 2; k + 2 < n; ++k)
    out.row(k) = (values.row(k - 2) - 8.0 * values.row(k - 1) + 8.0 * values.row(k + 1) -
                  values.row(k + 2)) /
                 (12.0 * h);
  out.row(n - 2) = (values.row(n - 1) - values.row(n - 3)) / (2.0 * h);
  out.row(n - 1) =
      (3.0 * values.row(n - 1) - 4.0 * values.row(n - 2) + values.row(n - 3)) / (2.0 * h);
  return out;
}

ActionValues action_moment(const MomentCurve& curve) {
  const int n = curve.size();
  const int d = curve.dim();
  if (static_cast<int>(curve.covs.size()) != n)
    throw PreconditionError("action_moment: covs/times size mismatch");
  for (const auto& c : curve.covs)
    if (!c.strictly_positive())
      throw SingularMatrixError("action_moment: covariance not strictly PD");

  std::vector<MatrixXd> roots = curve.roots;
  if (static_cast<int>(roots.size()) != n)
    roots = adapted_root(curve.times, curve.covs, curve.covs[0].sqrt().mat()).roots;

  // Flatten C, A, and Sigma = C^{1/2} for differentiation.
  MatrixXd c_flat(n, d * d), a_flat(n, d * d), s_flat(n, d * d);
  for (int k = 0; k < n; ++k) {
    c_flat.row(k) = flatten_matrix(curve.covs[k].mat()).transpose();
    a_flat.row(k) = flatten_matrix(roots[k]).transpose();
    s_flat.row(k) = flatten_matrix(curve.covs[k].sqrt().mat()).transpose();
  }
  const MatrixXd mdot = sampled_derivative(curve.times, curve.means);
  const MatrixXd cdot_flat = sampled_derivative(curve.times, c_flat);
  const MatrixXd adot_flat = sampled_derivative(curve.times, a_flat);
  const MatrixXd sdot_flat = sampled_derivative(curve.times, s_flat);

  VectorXd f_primal(n), f_root(n), f_sqrt(n);
  for (int k = 0; k < n; ++k) {
    const MatrixXd cinv = curve.covs[k].inverse().mat();
    const VectorXd md = mdot.row(k).transpose();
    const MatrixXd cd = unflatten_row(cdot_flat, k, d);
    const double mean_term = 0.5 * md.dot(cinv * md);
    f_primal(k) = mean_term + 0.125 * (cd * cinv * cd * cinv).trace();

    const MatrixXd a = unflatten_row(a_flat, k, d);
    const MatrixXd ad = unflatten_row(adot_flat, k, d);
    const MatrixXd ainv = a.inverse();
    f_root(k) = 0.5 * (ainv * md).squaredNorm() + 0.5 * (ainv * ad).squaredNorm();

    const MatrixXd s = unflatten_row(s_flat, k, d);
    const MatrixXd sd = unflatten_row(sdot_flat, k, d);
    const MatrixXd sinv = s.inverse();
    f_sqrt(k) = mean_term + 0.125 * (sd * sinv + sinv * sd).squaredNorm();
  }
  return {trapezoid(curve.times, f_primal), trapezoid(curve.times, f_root),
          trapezoid(curve.times, f_sqrt)};
}

AdaptedRootResult adapted_root(const VectorXd& times,
                               const std::function<MatrixXd(double)>& cov,
                               const std::function<MatrixXd(double)>& cov_dot,
                               const MatrixXd& a0) {
  const int n = static_cast<int>(times.size());
  const int d = static_cast<int>(a0.rows());
  {
    const MatrixXd c0 = cov(times(0));
    if ((a0 * a0.transpose() - c0).norm() > 1e-8 * std::max(1.0, c0.norm()))
      throw PreconditionError("adapted_root: A0 A0^T does not match C(0)");
  }
  AdaptedRootResult out;
  out.roots.reserve(n);
  out.rotations.reserve(n);
  out.roots.push_back(a0);

  auto deriv = [&](double t, const MatrixXd& a) -> MatrixXd {
    return 0.5 * cov_dot(t) * a.inverse().transpose();
  };

  MatrixXd a = a0;
  for (int k = 0; k + 1 < n; ++k) {
    const double t = times(k);
    const double h = times(k + 1) - times(k);
    const MatrixXd k1 = deriv(t, a);
    const MatrixXd k2 = deriv(t + 0.5 * h, a + 0.5 * h * k1);
    const MatrixXd k3 = deriv(t + 0.5 * h, a + 0.5 * h * k2);
    const MatrixXd k4 = deriv(t + h, a + h * k3);
    a += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!a.allFinite()) throw SingularMatrixError("adapted_root: root integration blew up");
    out.roots.push_back(a);
  }
  for (int k = 0; k < n; ++k) {
    const SpdMatrix c(cov(times(k)));
    if (!c.strictly_positive())
      throw SingularMatrixError("adapted_root: covariance not strictly PD");
    out.rotations.push_back(c.inv_sqrt().mat() * out.roots[k]);
  }
  (void)d;
  return out;
}

AdaptedRootResult adapted_root(const VectorXd& times, const std::vector<SpdMatrix>& covs,
                               const MatrixXd& a0) {
  const int n = static_cast<int>(times.size());
  if (static_cast<int>(covs.size()) != n)
    throw PreconditionError("adapted_root: covs/times size mismatch");
  const int d = covs[0].dim();
  const double h = uniform_step(times, "adapted_root");

  MatrixXd c_flat(n, d * d);
  for (int k = 0; k < n; ++k)
    c_flat.row(k) = flatten_matrix(covs[k].mat()).transpose();
  const MatrixXd cdot_flat = sampled_derivative(times, c_flat);

  auto c_at = [&](int k) { return unflatten_row(c_flat, k, d); };
  auto cd_at = [&](int k) { return unflatten_row(cdot_flat, k, d); };

  // Piecewise cubic Hermite interpolation of the sampled covariance curve;
  // the integration only needs its derivative.
  auto cov_dot_fn = [&](double t) -> MatrixXd {
    const double s = std::clamp((t - times(0)) / h, 0.0, static_cast<double>(n - 1));
    int k = std::min(n - 2, static_cast<int>(s));
    const double u = s - k;
    const double d00 = (6 * u * u - 6 * u) / h;
    const double d10 = 3 * u * u - 4 * u + 1;
    const double d01 = (6 * u - 6 * u * u) / h;
    const double d11 = 3 * u * u - 2 * u;
    return d00 * c_at(k) + d10 * cd_at(k) + d01 * c_at(k + 1) + d11 * cd_at(k + 1);
  };

  AdaptedRootResult out;
  out.roots.reserve(n);
  out.rotations.reserve(n);
  MatrixXd a = a0;
  {
    const MatrixXd c0 = covs[0].mat();
    if ((a0 * a0.transpose() - c0).norm() > 1e-8 * std::max(1.0, c0.norm()))
      throw PreconditionError("adapted_root: A0 A0^T does not match covs[0]");
  }
  out.roots.push_back(a);
  auto deriv = [&](double t, const MatrixXd& m) -> MatrixXd {
    return 0.5 * cov_dot_fn(t) * m.inverse().transpose();
  };
  for (int k = 0; k + 1 < n; ++k) {
    const double t = times(k);
    const MatrixXd k1 = deriv(t, a);
    const MatrixXd k2 = deriv(t + 0.5 * h, a + 0.5 * h * k1);
    const MatrixXd k3 = deriv(t + 0.5 * h, a + 0.5 * h * k2);
    const MatrixXd k4 = deriv(t + h, a + h * k3);
    a += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!a.allFinite()) throw SingularMatrixError("adapted_root: root integration blew up");
    out.roots.push_back(a);
  }
  for (int k = 0; k < n; ++k) {
    if (!covs[k].strictly_positive())
      throw SingularMatrixError("adapted_root: covariance not strictly PD");
    out.rotations.push_back(covs[k].inv_sqrt().mat() * out.roots[k]);
  }
  return out;
}

VarianceMomentResult solve_variance_moments(const VectorXd& m0, const VectorXd& m1,
                                            double sigma0, double sigma1, int grid_n) {
  if (sigma0 <= 0.0 || sigma1 <= 0.0)
    throw PreconditionError("solve_variance_moments: sigma must be positive");
  if (m0.size() != m1.size())
    throw PreconditionError("solve_variance_moments: mean dimension mismatch");

  const double n = (m1 - m0).norm();
  const double scale = std::max({sigma0, sigma1, 1e-300});
  VarianceMomentResult res;
  res.times = uniform_grid(grid_n);
  res.means.resize(grid_n, m0.size());
  res.sigmas.resize(grid_n);

  if (n <= 1e-13 * scale) {
    const double dist_sq = 0.5 * std::pow(std::log(sigma0) - std::log(sigma1), 2);
    for (int k = 0; k < grid_n; ++k) {
      const double t = res.times(k);
      res.means.row(k) = m0.transpose();
      res.sigmas(k) = std::pow(sigma0, 1.0 - t) * std::pow(sigma1, t);
    }
    res.sol = {0.0, sigma0, sigma1, std::sqrt(2.0 * dist_sq), 0.0, dist_sq};
    return res;
  }

  // disc^2 = (n^2 + s0^2 + s1^2)^2 - 4 s0^2 s1^2 in factored, cancellation-free form
  const double disc = std::sqrt((n * n + (sigma0 - sigma1) * (sigma0 - sigma1)) *
                                (n * n + (sigma0 + sigma1) * (sigma0 + sigma1)));
  // beta = log((p + disc) / (2 s0 s1)) via log1p; p - 2 s0 s1 = n^2 + (s0 - s1)^2
  const double beta = std::log1p(
      (n * n + (sigma0 - sigma1) * (sigma0 - sigma1) + disc) / (2.0 * sigma0 * sigma1));
  const double dist_sq = 0.5 * beta * beta;

  // t0 = log((s0^2 - s1^2 - n^2 + disc) / (2 n s0)), stable in both regimes
  const double q = n * n + sigma1 * sigma1 - sigma0 * sigma0;
  const double t0 = q >= 0.0 ? std::log(2.0 * sigma0 * n / (disc + q))
                             : std::log((disc - q) / (2.0 * n * sigma0));

  const double sinh_b = std::sinh(beta);
  const double cosh_bt0 = std::cosh(beta + t0);
  const double cosh_t0 = std::cosh(t0);
  const VectorXd dm = m1 - m0;
  for (int k = 0; k < grid_n; ++k) {
    const double t = res.times(k);
    const double cosh_cur = std::cosh(beta * t + t0);
    res.means.row(k) =
        (m0 + dm * (std::sinh(beta * t) * cosh_bt0 / (sinh_b * cosh_cur))).transpose();
    res.sigmas(k) = n * cosh_bt0 * cosh_t0 / (sinh_b * cosh_cur);
  }
  res.sol = {n, sigma0, sigma1, beta, t0, dist_sq};
  return res;
}

DiagonalMomentResult solve_diagonal_moments(const VectorXd& m0, const VectorXd& m1,
                                            const VectorXd& lambda0, const VectorXd& lambda1,
                                            int axis, int grid_n) {
  const int d = static_cast<int>(m0.size());
  if (m1.size() != d || lambda0.size() != d || lambda1.size() != d)
    throw PreconditionError("solve_diagonal_moments: dimension mismatch");
  if (axis < 0 || axis >= d) throw PreconditionError("solve_diagonal_moments: bad axis");
  if (lambda0.minCoeff() <= 0.0 || lambda1.minCoeff() <= 0.0)
    throw SingularMatrixError("solve_diagonal_moments: eigenvalues must be positive");
  const VectorXd dm = m1 - m0;
  for (int i = 0; i < d; ++i)
    if (i != axis && std::abs(dm(i)) > 1e-12 * std::max(1.0, dm.norm()))
      throw UnsupportedGeometryError(
          "solve_diagonal_moments: mean shift has components off the given axis");

  Eigen::VectorXd m0_axis(1), m1_axis(1);
  m0_axis(0) = m0(axis);
  m1_axis(0) = m1(axis);
  const auto scalar = solve_variance_moments(m0_axis, m1_axis, std::sqrt(lambda0(axis)),
                                             std::sqrt(lambda1(axis)), grid_n);

  MomentCurve curve;
  curve.times = scalar.times;
  curve.means.resize(grid_n, d);
  curve.covs.reserve(grid_n);
  curve.roots.reserve(grid_n);
  curve.rotations.reserve(grid_n);

  double dist_sq = scalar.sol.dist_sq;
  for (int i = 0; i < d; ++i)
    if (i != axis) dist_sq += 0.125 * std::pow(std::log(lambda1(i)) - std::log(lambda0(i)), 2);

  for (int k = 0; k < grid_n; ++k) {
    const double t = curve.times(k);
    VectorXd mean = m0;
    mean(axis) = scalar.means(k, 0);
    curve.means.row(k) = mean.transpose();
    VectorXd lam(d);
    for (int i = 0; i < d; ++i)
      lam(i) = i == axis ? scalar.sigmas(k) * scalar.sigmas(k)
                         : std::pow(lambda0(i), 1.0 - t) * std::pow(lambda1(i), t);
    curve.covs.emplace_back(MatrixXd(lam.asDiagonal()));
    curve.roots.emplace_back(MatrixXd(lam.cwiseSqrt().asDiagonal()));
    curve.rotations.emplace_back(MatrixXd::Identity(d, d));
  }

  // Constant mean costate alpha from mdot = C alpha at t = 0.
  VectorXd alpha = VectorXd::Zero(d);
  if (scalar.sol.n > 0.0) {
    const double beta = scalar.sol.beta;
    const double t0 = scalar.sol.t0;
    const double md0 = (m1(axis) - m0(axis)) * beta * std::cosh(beta + t0) /
                       (std::cosh(t0) * std::sinh(beta));
    alpha(axis) = md0 / lambda0(axis);
  }
  curve.alpha = alpha;
  return {curve, dist_sq};
}

namespace {

struct ShootState {
  VectorXd m;
  MatrixXd a;
  MatrixXd z;
};

struct ShootProblem {
  VectorXd m0, m1;
  MatrixXd a0;       // C0^{1/2}
  SpdMatrix c1;
  MatrixXd a1;       // target root (constrained case)
  bool constrained = false;
  int d = 0;
  int grid_n = 0;
};

// Integrates mdot = A A^T alpha, Adot = A Z, Zdot = [Z,Q] - (A^T alpha)^{x2}.
std::vector<ShootState> integrate_shoot(const ShootProblem& pb, const VectorXd& alpha,
                                        const MatrixXd& z0, const MatrixXd& q) {
  const int n = pb.grid_n;
  const double h = 1.0 / (n - 1);
  std::vector<ShootState> traj;
  traj.reserve(n);
  ShootState s{pb.m0, pb.a0, z0};
  traj.push_back(s);
  auto deriv = [&](const ShootState& st) -> ShootState {
    const VectorXd at_alpha = st.a.transpose() * alpha;
    ShootState ds;
    ds.m = st.a * at_alpha;
    ds.a = st.a * st.z;
    ds.z = st.z * q - q * st.z - at_alpha * at_alpha.transpose();
    return ds;
  };
  auto axpy = [](const ShootState& s0, double c, const ShootState& d0) -> ShootState {
    return {s0.m + c * d0.m, s0.a + c * d0.a, s0.z + c * d0.z};
  };
  for (int k = 0; k + 1 < n; ++k) {
    const ShootState k1 = deriv(s);
    const ShootState k2 = deriv(axpy(s, 0.5 * h, k1));
    const ShootState k3 = deriv(axpy(s, 0.5 * h, k2));
    const ShootState k4 = deriv(axpy(s, h, k3));
    s.m += (h / 6.0) * (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m);
    s.a += (h / 6.0) * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a);
    s.z += (h / 6.0) * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
    traj.push_back(s);
  }
  return traj;
}

VectorXd shoot_residual(const ShootProblem& pb, const VectorXd& u,
                        std::vector<ShootState>* traj_out) {
  const int d = pb.d;
  const VectorXd alpha = u.head(d);
  const MatrixXd z0 = vec_to_sym(u.segment(d, sym_dof(d)), d);
  const MatrixXd q = pb.constrained ? vec_to_skew(u.tail(skew_dof(d)), d)
                                    : MatrixXd::Zero(d, d);
  auto traj = integrate_shoot(pb, alpha, z0, q);
  const ShootState& end = traj.back();

  const int res_dim = pb.constrained ? d + d * d : d + sym_dof(d);
  VectorXd r(res_dim);
  if (!end.m.allFinite() || !end.a.allFinite()) {
    r.setConstant(1e30);
    return r;
  }
  r.head(d) = end.m - pb.m1;
  if (pb.constrained) {
    MatrixXd diff = end.a - pb.a1;
    r.tail(d * d) = Eigen::Map<const VectorXd>(diff.data(), d * d);
  } else {
    const MatrixXd c_end = end.a * end.a.transpose();
    r.tail(sym_dof(d)) = sym_to_vec(c_end - pb.c1.mat());
  }
  if (traj_out) *traj_out = std::move(traj);
  return r;
}

double report_residual(const ShootProblem& pb, const std::vector<ShootState>& traj) {
  const ShootState& end = traj.back();
  const MatrixXd c_end = end.a * end.a.transpose();
  double g = (end.m - pb.m1).norm() + (c_end - pb.c1.mat()).norm();
  if (pb.constrained)
    g += (pb.c1.inv_sqrt().mat() * end.a - pb.c1.inv_sqrt().mat() * pb.a1).norm();
  return g;
}

}  // namespace

namespace {

ShootProblem make_shoot_problem(const VectorXd& m0, const SpdMatrix& c0, const VectorXd& m1,
                                const SpdMatrix& c1,
                                const std::optional<MatrixXd>& rotation_constraint,
                                int grid_n) {
  const int d = static_cast<int>(m0.size());
  if (!c0.strictly_positive() || !c1.strictly_positive())
    throw SingularMatrixError("shoot_moment_geodesic: endpoints must be strictly PD");
  if (m1.size() != d || c0.dim() != d || c1.dim() != d)
    throw PreconditionError("shoot_moment_geodesic: dimension mismatch");

  ShootProblem pb;
  pb.m0 = m0;
  pb.m1 = m1;
  pb.a0 = c0.sqrt().mat();
  pb.c1 = c1;
  pb.d = d;
  pb.grid_n = grid_n;
  if (rotation_constraint) {
    const MatrixXd& r = *rotation_constraint;
    if ((r.transpose() * r - MatrixXd::Identity(d, d)).norm() > 1e-8 ||
        r.determinant() < 0.0)
      throw PreconditionError("shoot_moment_geodesic: rotation constraint not in SO(d)");
    pb.constrained = true;
    pb.a1 = c1.sqrt().mat() * r;
  }
  return pb;
}

// Warm start from the equal-mean closed form: constant Z along the
// affine-invariant geodesic, alpha from mdot = C alpha averaged over it.
VectorXd shoot_warm_start(const ShootProblem& pb, const SpdMatrix& c0, const SpdMatrix& c1) {
  const int d = pb.d;
  const int nu = pb.constrained ? d + sym_dof(d) + skew_dof(d) : d + sym_dof(d);
  VectorXd u = VectorXd::Zero(nu);
  if (pb.constrained) {
    // Split A0^{-1} A1 = e^B e^Q with Q = -B^asym by a short fixed-point
    // iteration on Q; then Z0 = B^sym.
    const MatrixXd v = pb.a0.inverse() * pb.a1;
    MatrixXd q = MatrixXd::Zero(d, d);
    MatrixXd b = v.log();
    for (int it = 0; it < 50; ++it) {
      const MatrixXd b_new = (v * (-q).exp()).log();
      if (!b_new.allFinite()) break;
      b = b_new;
      const MatrixXd q_new = -asym_part(b);
      if ((q_new - q).norm() < 1e-12) {
        q = q_new;
        break;
      }
      q = q_new;
    }
    u.segment(d, sym_dof(d)) = sym_to_vec(sym_part(b));
    u.tail(skew_dof(d)) = skew_to_vec(q);
  } else {
    const MatrixXd c0_inv_half = c0.inv_sqrt().mat();
    const SpdMatrix mid(c0_inv_half * c1.mat() * c0_inv_half);
    u.segment(d, sym_dof(d)) = sym_to_vec(0.5 * mid.log());
  }
  if ((pb.m1 - pb.m0).norm() > 0.0) {
    MatrixXd c_int = MatrixXd::Zero(d, d);
    const int quad_n = 33;
    for (int k = 0; k < quad_n; ++k) {
      const double t = static_cast<double>(k) / (quad_n - 1);
      const double w = (k == 0 || k == quad_n - 1) ? 0.5 : 1.0;
      c_int += w * spd_geodesic(c0, c1, t).mat();
    }
    c_int /= (quad_n - 1);
    u.head(d) = c_int.ldlt().solve(pb.m1 - pb.m0);
  }
  return u;
}

ShootResult shoot_from_start(const ShootProblem& pb, VectorXd u, double tol,
                             VectorXd* u_out = nullptr) {
  const int d = pb.d;
  std::vector<ShootState> traj;
  VectorXd r = shoot_residual(pb, u, &traj);
  double best_norm = r.norm();
  const int max_newton = 60;
  int it = 0;
  for (; it < max_newton && report_residual(pb, traj) >= tol; ++it) {
    MatrixXd jac(r.size(), u.size());
    for (int j = 0; j < u.size(); ++j) {
      const double eps = 1e-6 * std::max(1.0, std::abs(u(j)));
      VectorXd up = u;
      up(j) += eps;
      jac.col(j) = (shoot_residual(pb, up, nullptr) - r) / eps;
    }
    const VectorXd du = jac.colPivHouseholderQr().solve(-r);
    if (!du.allFinite()) break;

    double lam = 1.0;
    bool accepted = false;
    for (int half = 0; half < 14; ++half, lam *= 0.5) {
      std::vector<ShootState> trial_traj;
      const VectorXd trial_u = u + lam * du;
      const VectorXd trial_r = shoot_residual(pb, trial_u, &trial_traj);
      if (trial_r.norm() < (1.0 - 1e-4 * lam) * best_norm) {
        u = trial_u;
        r = trial_r;
        traj = std::move(trial_traj);
        best_norm = r.norm();
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  ShootResult out;
  out.newton_iterations = it;
  out.residual = report_residual(pb, traj);
  out.converged = out.residual < tol;
  if (u_out) *u_out = u;

  const int grid_n = pb.grid_n;
  MomentCurve curve;
  curve.times = uniform_grid(grid_n);
  curve.means.resize(grid_n, d);
  curve.covs.reserve(grid_n);
  curve.roots.reserve(grid_n);
  curve.rotations.reserve(grid_n);
  const VectorXd alpha = u.head(d);
  const MatrixXd q = pb.constrained ? vec_to_skew(u.tail(skew_dof(d)), d)
                                    : MatrixXd::Zero(d, d);
  VectorXd density(grid_n);
  for (int k = 0; k < grid_n; ++k) {
    const ShootState& s = traj[k];
    curve.means.row(k) = s.m.transpose();
    curve.covs.push_back(SpdMatrix::from_product(s.a));
    curve.roots.push_back(s.a);
    curve.rotations.push_back(curve.covs.back().inv_sqrt().mat() * s.a);
    const VectorXd at_alpha = s.a.transpose() * alpha;
    density(k) = at_alpha.squaredNorm() + s.z.squaredNorm();
  }
  curve.alpha = alpha;
  if (pb.constrained) curve.skew_q = q;
  out.curve = std::move(curve);
  out.action = 0.5 * trapezoid(out.curve.times, density);
  return out;
}

}  // namespace

ShootResult shoot_moment_geodesic(const VectorXd& m0, const SpdMatrix& c0, const VectorXd& m1,
                                  const SpdMatrix& c1,
                                  const std::optional<MatrixXd>& rotation_constraint,
                                  double tol, int grid_n) {
  const ShootProblem pb = make_shoot_problem(m0, c0, m1, c1, rotation_constraint, grid_n);
  ShootResult direct = shoot_from_start(pb, shoot_warm_start(pb, c0, c1), tol);
  if (direct.converged || !pb.constrained) return direct;

  // Continuation in the rotation: the unconstrained optimum solves the
  // constrained problem at its own terminal co-rotation with Q = 0, and the
  // requested rotation is approached along the SO(d) geodesic from there.
  const ShootProblem free_pb =
      make_shoot_problem(m0, c0, m1, c1, std::nullopt, grid_n);
  VectorXd u_free;
  const ShootResult free_res =
      shoot_from_start(free_pb, shoot_warm_start(free_pb, c0, c1), tol, &u_free);
  if (!free_res.converged) return direct;

  const int d = pb.d;
  // Project the free terminal co-rotation onto SO(d).
  MatrixXd r_free = free_res.curve.rotations.back();
  {
    Eigen::JacobiSVD<MatrixXd> svd(r_free, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r_free = svd.matrixU() * svd.matrixV().transpose();
  }
  const MatrixXd r_target = c1.inv_sqrt().mat() * pb.a1;
  const MatrixXd w = (r_free.transpose() * r_target).log();

  VectorXd u(pb.d + sym_dof(d) + skew_dof(d));
  for (int num_steps : {4, 8, 16, 32}) {
    u.head(d + sym_dof(d)) = u_free;
    u.tail(skew_dof(d)).setZero();
    bool ok = true;
    ShootResult last;
    for (int s = 1; s <= num_steps && ok; ++s) {
      ShootProblem step_pb = pb;
      const MatrixXd r_s = r_free * ((static_cast<double>(s) / num_steps) * w).exp();
      step_pb.a1 = c1.sqrt().mat() * r_s;
      last = shoot_from_start(step_pb, u, tol, &u);
      ok = last.converged;
    }
    if (ok) return last;
  }
  return direct;
}

std::vector<ShootResult> shoot_moment_branches(const VectorXd& m0, const SpdMatrix& c0,
                                               const VectorXd& m1, const SpdMatrix& c1,
                                               const std::optional<MatrixXd>&
                                                   rotation_constraint,
                                               double tol, int grid_n, int num_starts,
                                               unsigned seed) {
  const ShootProblem pb = make_shoot_problem(m0, c0, m1, c1, rotation_constraint, grid_n);
  const VectorXd base = shoot_warm_start(pb, c0, c1);

  std::vector<ShootResult> branches;
  auto consider = [&](const ShootResult& res) {
    if (!res.converged) return;
    for (const auto& b : branches)
      if (std::abs(b.action - res.action) < 1e-6 * std::max(1.0, b.action)) return;
    branches.push_back(res);
  };

  consider(shoot_from_start(pb, base, tol));
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 1; s < num_starts; ++s) {
    VectorXd u = base;
    const double scale = 0.3 * ((s + 1) / 2);
    for (int j = 0; j < u.size(); ++j) u(j) += scale * normal(gen);
    consider(shoot_from_start(pb, u, tol));
  }
  std::sort(branches.begin(), branches.end(),
            [](const ShootResult& a, const ShootResult& b) { return a.action < b.action; });
  return branches;
}

RotationSearchResult moment_rotation_search_2d(const VectorXd& m0, const SpdMatrix& c0,
                                               const VectorXd& m1, const SpdMatrix& c1,
                                               int grid_n, double tol) {
  if (m0.size() != 2) throw UnsupportedGeometryError("rotation search implemented for d = 2");
  auto rot = [](double th) {
    MatrixXd r(2, 2);
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    return r;
  };
  auto eval = [&](double th) {
    const ShootResult res = shoot_moment_geodesic(m0, c0, m1, c1, rot(th), tol, 121);
    return res.converged ? res.action : 1e30;
  };

  RotationSearchResult out;
  double best_th = 0.0, best_val = 1e30;
  for (int k = 0; k < grid_n; ++k) {
    const double th = 2.0 * M_PI * k / grid_n;
    const double val = eval(th);
    out.samples.emplace_back(th, val);
    if (val < best_val) {
      best_val = val;
      best_th = th;
    }
  }
  // Golden-section refinement around the best grid angle.
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = best_th - 2.0 * M_PI / grid_n;
  double hi = best_th + 2.0 * M_PI / grid_n;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = eval(x1), f2 = eval(x2);
  for (int it = 0; it < 40 && hi - lo > 1e-6; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = eval(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = eval(x2);
    }
  }
  const double th_ref = 0.5 * (lo + hi);
  const double val_ref = eval(th_ref);
  if (val_ref < best_val) {
    best_val = val_ref;
    best_th = th_ref;
  }
  out.angle = best_th;
  out.dist_sq = best_val;
  return out;
}

}  // namespace covot
