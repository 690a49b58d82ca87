#include <doctest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "covot/moment_geodesics.hpp"
#include "support/oracles.hpp"

using covot::MomentCurve;
using covot::SpdMatrix;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd grid(int n) {
  VectorXd t(n);
  for (int k = 0; k < n; ++k) t(k) = static_cast<double>(k) / (n - 1);
  return t;
}

MomentCurve rotating_curve(int n) {
  MomentCurve curve;
  curve.times = grid(n);
  curve.means.resize(n, 2);
  for (int k = 0; k < n; ++k) {
    const double t = curve.times(k);
    curve.means.row(k) << 0.3 * std::sin(t), 0.2 * t * t;
    const double theta = 0.7 * t;
    MatrixXd r(2, 2);
    r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    VectorXd lam(2);
    lam << 1.0 + 0.5 * t, 0.5 + 0.3 * t * t;
    curve.covs.emplace_back(MatrixXd(r * lam.asDiagonal() * r.transpose()));
  }
  return curve;
}

// Discretized mean-variance action over piecewise-linear (m, sigma) with the
// analytic gradient, for the brute-force minimization oracle.
double variance_action_pl(const VectorXd& u, VectorXd* gradient, const VectorXd& m0,
                          const VectorXd& m1, double s0, double s1, int segments) {
  const int d = static_cast<int>(m0.size());
  const double h = 1.0 / segments;
  auto node_m = [&](int k) -> VectorXd {
    if (k == 0) return m0;
    if (k == segments) return m1;
    return u.segment((k - 1) * (d + 1), d);
  };
  auto node_s = [&](int k) -> double {
    if (k == 0) return s0;
    if (k == segments) return s1;
    return u((k - 1) * (d + 1) + d);
  };
  double f = 0.0;
  if (gradient) gradient->setZero();
  for (int k = 0; k < segments; ++k) {
    const VectorXd dm = node_m(k + 1) - node_m(k);
    const double ds = node_s(k + 1) - node_s(k);
    const double sbar = 0.5 * (node_s(k) + node_s(k + 1));
    if (sbar <= 1e-8) return 1e12;
    const double energy = dm.squaredNorm() + ds * ds;
    f += energy / (2.0 * h * sbar * sbar);
    if (!gradient) continue;
    for (int end = 0; end < 2; ++end) {
      const int node = k + end;
      if (node == 0 || node == segments) continue;
      const int base = (node - 1) * (d + 1);
      const double sign = end ? 1.0 : -1.0;
      gradient->segment(base, d) += sign * dm / (h * sbar * sbar);
      (*gradient)(base + d) += sign * ds / (h * sbar * sbar);
      (*gradient)(base + d) -= energy / (2.0 * h * sbar * sbar * sbar);
    }
  }
  return f;
}

double minimized_variance_action(const VectorXd& m0, const VectorXd& m1, double s0,
                                 double s1, int segments) {
  const int d = static_cast<int>(m0.size());
  VectorXd u((segments - 1) * (d + 1));
  for (int k = 1; k < segments; ++k) {
    const double t = static_cast<double>(k) / segments;
    u.segment((k - 1) * (d + 1), d) = (1 - t) * m0 + t * m1;
    u((k - 1) * (d + 1) + d) = (1 - t) * s0 + t * s1;
  }
  auto fg = [&](const VectorXd& v, VectorXd* g) {
    return variance_action_pl(v, g, m0, m1, s0, s1, segments);
  };
  const VectorXd best = oracles::minimize_bb(fg, u, 6000, 1e-11);
  return variance_action_pl(best, nullptr, m0, m1, s0, s1, segments);
}

}  // namespace

TEST_CASE("action_moment vanishes on constant curves") {
  MomentCurve curve;
  const int n = 101;
  curve.times = grid(n);
  curve.means = MatrixXd::Zero(n, 2);
  MatrixXd c(2, 2);
  c << 1.4, 0.3, 0.3, 0.9;
  for (int k = 0; k < n; ++k) curve.covs.emplace_back(c);
  const auto vals = covot::action_moment(curve);
  CHECK(vals.primal == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(vals.root_form == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(vals.sqrt_form == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("action_moment of the exponential variance curve is 1/2") {
  const int n = 1000;
  MomentCurve curve;
  curve.times = grid(n);
  curve.means = MatrixXd::Zero(n, 1);
  for (int k = 0; k < n; ++k)
    curve.covs.emplace_back(MatrixXd::Constant(1, 1, std::exp(2.0 * curve.times(k))));
  const auto vals = covot::action_moment(curve);
  CHECK(vals.primal == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(vals.root_form == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(vals.sqrt_form == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("the three action forms agree on a rotating-eigenbasis curve") {
  const auto curve = rotating_curve(1000);
  const auto vals = covot::action_moment(curve);
  CHECK(vals.primal == doctest::Approx(vals.root_form).epsilon(1e-6));
  CHECK(vals.primal == doctest::Approx(vals.sqrt_form).epsilon(1e-6));
}

TEST_CASE("adapted_root on constant and commuting diagonal curves") {
  const int n = 201;
  const VectorXd t = grid(n);
  MatrixXd c(2, 2);
  c << 2.0, 0.5, 0.5, 1.0;
  std::vector<SpdMatrix> constant(n, SpdMatrix(c));
  const MatrixXd a0 = SpdMatrix(c).sqrt().mat();
  const auto res = covot::adapted_root(t, constant, a0);
  CHECK((res.roots.back() - a0).norm() < 1e-10);

  std::vector<SpdMatrix> diag;
  for (int k = 0; k < n; ++k) {
    VectorXd lam(2);
    lam << std::exp(2.0 * t(k)), 1.0;
    diag.emplace_back(MatrixXd(lam.asDiagonal()));
  }
  const auto res2 = covot::adapted_root(t, diag, MatrixXd::Identity(2, 2));
  for (int k = 0; k < n; k += 40) {
    MatrixXd expected(2, 2);
    expected << std::exp(t(k)), 0, 0, 1;
    CHECK((res2.roots[k] - expected).norm() < 1e-8);
    CHECK((res2.rotations[k] - MatrixXd::Identity(2, 2)).norm() < 1e-8);
  }
}

TEST_CASE("adapted_root drift and co-rotation equation on a rotating curve") {
  const auto curve = rotating_curve(801);
  const MatrixXd a0 = curve.covs[0].sqrt().mat();
  const auto res = covot::adapted_root(curve.times, curve.covs, a0);

  double drift = 0.0;
  for (int k = 0; k < curve.size(); ++k)
    drift = std::max(drift,
                     (res.roots[k] * res.roots[k].transpose() - curve.covs[k].mat()).norm());
  CHECK(drift < 1e-8);

  // orthogonality of R_t and the commutator evolution equation
  const int n = curve.size();
  const int d = 2;
  MatrixXd r_flat(n, d * d), s_flat(n, d * d);
  for (int k = 0; k < n; ++k) {
    r_flat.row(k) = covot::flatten_matrix(res.rotations[k]).transpose();
    s_flat.row(k) = covot::flatten_matrix(curve.covs[k].sqrt().mat()).transpose();
  }
  const MatrixXd rdot = covot::sampled_derivative(curve.times, r_flat);
  const MatrixXd sdot = covot::sampled_derivative(curve.times, s_flat);
  double max_residual = 0.0;
  for (int k = 0; k < n; ++k) {
    const MatrixXd r = covot::unflatten_row(r_flat, k, d);
    CHECK((r.transpose() * r - MatrixXd::Identity(d, d)).norm() < 1e-7);
    CHECK(r.determinant() > 0.0);
    const MatrixXd rd = covot::unflatten_row(rdot, k, d);
    const MatrixXd s = covot::unflatten_row(s_flat, k, d);
    const MatrixXd sd = covot::unflatten_row(sdot, k, d);
    const MatrixXd sinv = s.inverse();
    const MatrixXd expected = 0.5 * (sd * sinv - sinv * sd) * r;
    max_residual = std::max(max_residual, (rd - expected).norm());
  }
  CHECK(max_residual < 1e-6);
}

TEST_CASE("solve_variance_moments trivial and geometric cases") {
  VectorXd m(1);
  m << 0.7;
  const auto trivial = covot::solve_variance_moments(m, m, 1.3, 1.3);
  CHECK(trivial.sol.dist_sq == doctest::Approx(0.0));
  CHECK((trivial.sigmas.array() - 1.3).abs().maxCoeff() < 1e-14);

  const auto geo = covot::solve_variance_moments(m, m, 1.0, std::exp(1.0));
  CHECK(geo.sol.dist_sq == doctest::Approx(0.5).epsilon(1e-14));
  for (int k = 0; k < geo.times.size(); ++k)
    CHECK(geo.sigmas(k) == doctest::Approx(std::exp(geo.times(k))).epsilon(1e-12));
}

TEST_CASE("solve_variance_moments arcosh value and oracle minimization") {
  VectorXd m0(1), m1(1);
  m0 << 0.0;
  m1 << 2.0;
  const auto res = covot::solve_variance_moments(m0, m1, 1.0, 1.0);
  const double expected = 0.5 * std::pow(std::acosh(3.0), 2);
  CHECK(res.sol.dist_sq == doctest::Approx(expected).epsilon(1e-12));
  CHECK(res.sol.beta == doctest::Approx(std::sqrt(2.0 * res.sol.dist_sq)).epsilon(1e-12));
  CHECK(res.sigmas(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.sigmas(res.times.size() - 1) == doctest::Approx(1.0).epsilon(1e-12));

  const double numeric = minimized_variance_action(m0, m1, 1.0, 1.0, 400);
  CHECK(std::abs(numeric - expected) / expected < 1e-3);
}

TEST_CASE("solve_variance_moments boundary values, symmetry, invariance") {
  auto gen = oracles::rng(71);
  std::uniform_real_distribution<double> unif(0.3, 3.0);
  for (int rep = 0; rep < 30; ++rep) {
    const VectorXd m0 = oracles::random_vector(gen, 2);
    const VectorXd m1 = oracles::random_vector(gen, 2);
    const double s0 = unif(gen), s1 = unif(gen);
    const auto res = covot::solve_variance_moments(m0, m1, s0, s1);
    CHECK(std::abs(res.sigmas(0) - s0) < 1e-10);
    CHECK(std::abs(res.sigmas(res.times.size() - 1) - s1) < 1e-10);
    CHECK((res.means.row(0).transpose() - m0).norm() < 1e-10);
    CHECK((res.means.row(res.times.size() - 1).transpose() - m1).norm() < 1e-10);
    CHECK(res.sol.beta ==
          doctest::Approx(std::sqrt(2.0) * std::sqrt(res.sol.dist_sq)).epsilon(1e-12));

    const auto swapped = covot::solve_variance_moments(m1, m0, s1, s0);
    CHECK(res.sol.dist_sq == doctest::Approx(swapped.sol.dist_sq).epsilon(1e-11));

    const VectorXd shift = oracles::random_vector(gen, 2);
    const auto moved = covot::solve_variance_moments(m0 + shift, m1 + shift, s0, s1);
    CHECK(res.sol.dist_sq == doctest::Approx(moved.sol.dist_sq).epsilon(1e-11));
  }
}

TEST_CASE("solve_variance_moments asymptotics for large mean shifts") {
  VectorXd m0(1), m1(1);
  m0 << 0.0;
  for (double n : {100.0, 1000.0}) {
    m1 << n;
    const auto res = covot::solve_variance_moments(m0, m1, 1.0, 1.0);
    const double predicted = 0.5 * std::pow(std::log(n * n), 2);
    CHECK(std::abs(res.sol.dist_sq - predicted) / predicted < 0.05);
  }
}

TEST_CASE("solve_diagonal_moments reduces to geometric interpolation and scalar case") {
  VectorXd m(2);
  m << 0.4, -0.2;
  VectorXd lam0(2), lam1(2);
  lam0 << 1.0, 2.0;
  lam1 << 3.0, 0.5;
  const auto res = covot::solve_diagonal_moments(m, m, lam0, lam1, 0);
  const SpdMatrix c0{MatrixXd(lam0.asDiagonal())};
  const SpdMatrix c1{MatrixXd(lam1.asDiagonal())};
  for (int k = 0; k < res.curve.size(); k += 50) {
    const double t = res.curve.times(k);
    CHECK((res.curve.covs[k].mat() - covot::spd_geodesic(c0, c1, t).mat()).norm() < 1e-10);
  }
  CHECK(res.dist_sq == doctest::Approx(covot::spd_geodesic_dist_sq(c0, c1)).epsilon(1e-12));

  // shift along e1 with unit eigenvalues reduces to the scalar solution
  VectorXd m0(2), m1(2);
  m0 << 0, 0;
  m1 << 2, 0;
  const auto shifted =
      covot::solve_diagonal_moments(m0, m1, VectorXd::Ones(2), VectorXd::Ones(2), 0);
  CHECK(shifted.dist_sq ==
        doctest::Approx(0.5 * std::pow(std::acosh(3.0), 2)).epsilon(1e-12));

  CHECK_THROWS_AS(covot::solve_diagonal_moments(m0, m1, lam0, lam1, 1),
                  covot::UnsupportedGeometryError);
}

TEST_CASE("diagonal moment distance obeys the arcosh coordinate bound") {
  // moderate shifts only; the bound is not sharp and fails for large ones
  auto gen = oracles::rng(73);
  std::uniform_real_distribution<double> lam_dist(0.5, 2.0);
  std::uniform_real_distribution<double> shift(0.1, 0.8);
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd lam(2);
    lam << lam_dist(gen), lam_dist(gen);
    VectorXd m0 = VectorXd::Zero(2), m1 = VectorXd::Zero(2);
    m1(0) = shift(gen) * lam(0);
    const auto res = covot::solve_diagonal_moments(m0, m1, lam, lam, 0);
    double bound = 0.0;
    for (int i = 0; i < 2; ++i)
      bound += std::pow(std::acosh((m1(i) - m0(i)) / (2.0 * lam(i)) + 1.0), 2);
    CHECK(res.dist_sq <= bound + 1e-12);
  }
}

TEST_CASE("shooting with equal means matches the closed-form geodesic") {
  auto gen = oracles::rng(79);
  VectorXd m = oracles::random_vector(gen, 2);
  const SpdMatrix c0 = oracles::random_spd(gen, 2);
  const SpdMatrix c1 = oracles::random_spd(gen, 2);
  const auto res = covot::shoot_moment_geodesic(m, c0, m, c1);
  REQUIRE(res.converged);
  for (int k = 0; k < res.curve.size(); k += 20) {
    const double t = res.curve.times(k);
    CHECK((res.curve.covs[k].mat() - covot::spd_geodesic(c0, c1, t).mat()).norm() < 1e-6);
    CHECK((res.curve.means.row(k).transpose() - m).norm() < 1e-9);
  }
  CHECK(res.action == doctest::Approx(covot::spd_geodesic_dist_sq(c0, c1)).epsilon(1e-8));
}

TEST_CASE("rotation-constrained shooting has the exponential product structure") {
  VectorXd m = VectorXd::Zero(2);
  MatrixXd c0m(2, 2), c1m(2, 2);
  c0m << 1.2, 0.2, 0.2, 0.8;
  c1m << 0.9, -0.3, -0.3, 1.5;
  const double theta = 0.4;
  MatrixXd r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);

  const auto res = covot::shoot_moment_geodesic(m, SpdMatrix(c0m), m, SpdMatrix(c1m), r, 1e-9);
  REQUIRE(res.converged);
  REQUIRE(res.curve.skew_q.has_value());
  REQUIRE(res.curve.alpha.has_value());
  CHECK(res.curve.alpha->norm() < 1e-7);

  // A_t = A_0 exp(t B) exp(t Q): fit B from the terminal data and the costate
  // Q via e^B = A0^{-1} A1 e^{-Q}, then check the product form pointwise.
  const MatrixXd a0 = SpdMatrix(c0m).sqrt().mat();
  const MatrixXd q = *res.curve.skew_q;
  const MatrixXd a1 = SpdMatrix(c1m).sqrt().mat() * r;
  const MatrixXd b = (a0.inverse() * a1 * (-q).exp()).log();
  double max_dev = 0.0;
  for (int k = 0; k < res.curve.size(); k += 25) {
    const double t = res.curve.times(k);
    const MatrixXd expected = a0 * (t * b).exp() * (t * q).exp();
    max_dev = std::max(max_dev, (res.curve.roots[k] - expected).norm());
  }
  CHECK(max_dev < 1e-5);

  // terminal rotation hit
  const MatrixXd r_end =
      SpdMatrix(c1m).inv_sqrt().mat() * res.curve.roots.back();
  CHECK((r_end - r).norm() < 1e-6);
}

TEST_CASE("shooting matches the diagonal solver on a shifted-mean instance") {
  VectorXd m0(2), m1(2);
  m0 << 0, 0;
  m1 << 1.0, 0;
  VectorXd lam0(2), lam1(2);
  lam0 << 1.0, 0.7;
  lam1 << 1.8, 1.3;
  const auto diag = covot::solve_diagonal_moments(m0, m1, lam0, lam1, 0);
  const auto shot = covot::shoot_moment_geodesic(
      m0, SpdMatrix(MatrixXd(lam0.asDiagonal())), m1, SpdMatrix(MatrixXd(lam1.asDiagonal())));
  REQUIRE(shot.converged);
  CHECK(std::abs(shot.action - diag.dist_sq) < 1e-4);
  for (int frac = 0; frac <= 4; ++frac) {
    const int ks = (shot.curve.size() - 1) * frac / 4;
    const int kd = (diag.curve.size() - 1) * frac / 4;
    CHECK((shot.curve.covs[ks].mat() - diag.curve.covs[kd].mat()).norm() < 1e-4);
    CHECK((shot.curve.means.row(ks) - diag.curve.means.row(kd)).norm() < 1e-4);
  }
}

TEST_CASE("shooting output satisfies horizontality, constant density, a-priori bound") {
  auto gen = oracles::rng(83);
  VectorXd m0 = oracles::random_vector(gen, 2);
  VectorXd m1 = m0 + 0.8 * oracles::random_vector(gen, 2);
  const SpdMatrix c0 = oracles::random_spd(gen, 2, 0.5, 2.0);
  const SpdMatrix c1 = oracles::random_spd(gen, 2, 0.5, 2.0);
  const auto res = covot::shoot_moment_geodesic(m0, c0, m1, c1);
  REQUIRE(res.converged);

  // horizontality of A^{-1} Adot in the discretized sense
  const int n = res.curve.size();
  MatrixXd a_flat(n, 4);
  for (int k = 0; k < n; ++k)
    a_flat.row(k) = covot::flatten_matrix(res.curve.roots[k]).transpose();
  const MatrixXd adot = covot::sampled_derivative(res.curve.times, a_flat);
  for (int k = 0; k < n; k += 20) {
    const MatrixXd a = covot::unflatten_row(a_flat, k, 2);
    const MatrixXd ad = covot::unflatten_row(adot, k, 2);
    const MatrixXd z = a.inverse() * ad;
    CHECK((z - z.transpose()).norm() < 1e-6);
  }

  // action density constant along the optimizer
  const auto vals = covot::action_moment(res.curve);
  CHECK(vals.primal == doctest::Approx(res.action).epsilon(1e-5));
  MatrixXd c_flat(n, 4);
  for (int k = 0; k < n; ++k)
    c_flat.row(k) = covot::flatten_matrix(res.curve.covs[k].mat()).transpose();
  const MatrixXd mdot = covot::sampled_derivative(res.curve.times, res.curve.means);
  const MatrixXd cdot = covot::sampled_derivative(res.curve.times, c_flat);
  double lo = 1e300, hi = -1e300;
  for (int k = 2; k + 2 < n; ++k) {
    const MatrixXd cinv = res.curve.covs[k].inverse().mat();
    const VectorXd md = mdot.row(k).transpose();
    const MatrixXd cd = covot::unflatten_row(cdot, k, 2);
    const double density = md.dot(cinv * md) + 0.25 * (cd * cinv * cd * cinv).trace();
    lo = std::min(lo, density);
    hi = std::max(hi, density);
  }
  CHECK(hi - lo < 1e-5 * std::max(1.0, hi));

  // a priori covariance sandwich with the curve's own action
  const double factor = std::exp(2.0 * std::sqrt(2.0 * res.action));
  for (int k = 0; k < n; k += 20) {
    CHECK(covot::psd_leq(res.curve.covs[k].mat(), factor * c0.mat(), 1e-9));
    CHECK(covot::psd_leq(c0.mat() / factor, res.curve.covs[k].mat(), 1e-9));
  }
}

TEST_CASE("rotation search over SO(2) is consistent with the free problem") {
  VectorXd m = VectorXd::Zero(2);
  MatrixXd c0m(2, 2), c1m(2, 2);
  c0m << 1.5, 0.4, 0.4, 0.7;
  c1m << 0.8, -0.1, -0.1, 1.1;
  const SpdMatrix c0(c0m), c1(c1m);
  const auto free = covot::shoot_moment_geodesic(m, c0, m, c1);
  REQUIRE(free.converged);
  const auto search = covot::moment_rotation_search_2d(m, c0, m, c1, 16, 1e-8);
  CHECK(search.dist_sq == doctest::Approx(free.action).epsilon(1e-4));
  CHECK(search.dist_sq >= free.action - 1e-6);
}

TEST_CASE("branch search returns at least the primary geodesic") {
  VectorXd m = VectorXd::Zero(2);
  MatrixXd c0m(2, 2), c1m(2, 2);
  c0m << 1.0, 0.0, 0.0, 1.0;
  c1m << 2.0, 0.5, 0.5, 1.0;
  const auto branches = covot::shoot_moment_branches(m, SpdMatrix(c0m), m, SpdMatrix(c1m),
                                                     std::nullopt, 1e-8, 121, 4);
  REQUIRE(!branches.empty());
  CHECK(branches.front().converged);
  for (size_t k = 1; k < branches.size(); ++k)
    CHECK(branches[k].action >= branches.front().action - 1e-9);
}
