#include <doctest.h>

#include "covot/flows.hpp"
#include "covot/rng.hpp"
#include "covot/ot.hpp"
#include "support/oracles.hpp"

using covot::FlowTrace;
using covot::Gaussian;
using covot::QuadraticTarget;
using covot::SpdMatrix;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("covariance flow: equilibrium is stationary") {
  auto gen = oracles::rng(101);
  const SpdMatrix b = oracles::random_spd(gen, 2);
  const VectorXd x0 = oracles::random_vector(gen, 2);
  const auto trace = covot::covariance_moment_flow(x0, b, {x0, b}, 3.0, 600);
  for (int k = 0; k < trace.times.size(); k += 100) {
    CHECK((trace.means.row(k).transpose() - x0).norm() < 1e-12);
    CHECK((trace.covs[k].mat() - b.mat()).norm() < 1e-12);
  }
  CHECK(trace.max_closed_dev < 1e-10);
}

TEST_CASE("covariance flow: scalar closed form at t = ln 2") {
  const VectorXd m0 = VectorXd::Constant(1, 2.0);
  const VectorXd x0 = VectorXd::Zero(1);
  const SpdMatrix c0(4.0 * MatrixXd::Identity(1, 1));
  const SpdMatrix b = SpdMatrix::identity(1);
  const auto trace = covot::covariance_moment_flow(m0, c0, {x0, b}, std::log(2.0), 500);
  const int last = static_cast<int>(trace.times.size()) - 1;
  CHECK(trace.covs[last](0, 0) == doctest::Approx(16.0 / 13.0).epsilon(1e-9));
  CHECK(trace.max_closed_dev < 1e-9);
}

TEST_CASE("covariance flow: mean decays exactly at rate one in the moving norm") {
  auto gen = oracles::rng(103);
  const SpdMatrix c0 = oracles::random_spd(gen, 2, 0.5, 3.0);
  const SpdMatrix b = oracles::random_spd(gen, 2, 0.5, 3.0);
  const VectorXd x0 = oracles::random_vector(gen, 2);
  const VectorXd m0 = x0 + oracles::random_vector(gen, 2);
  const auto trace = covot::covariance_moment_flow(m0, c0, {x0, b}, 4.0, 1200);

  const double at0 = std::sqrt(
      (m0 - x0).dot(c0.inverse().mat() * (m0 - x0)));
  for (int k = 0; k < trace.times.size(); k += 150) {
    const VectorXd dm = trace.means.row(k).transpose() - x0;
    const double now = std::sqrt(dm.dot(trace.covs[k].inverse().mat() * dm));
    CHECK(std::abs(now - std::exp(-trace.times(k)) * at0) < 1e-8);
  }
}

TEST_CASE("covariance flow: closed form within 1e-6 of RK4 on a random instance") {
  auto gen = oracles::rng(107);
  const SpdMatrix c0 = oracles::random_spd(gen, 3, 0.4, 2.5);
  const SpdMatrix b = oracles::random_spd(gen, 3, 0.4, 2.5);
  const VectorXd x0 = oracles::random_vector(gen, 3);
  const VectorXd m0 = x0 + oracles::random_vector(gen, 3);
  const auto trace = covot::covariance_moment_flow(m0, c0, {x0, b}, 5.0, 2000);
  CHECK(trace.max_closed_dev < 1e-6);
}

TEST_CASE("variance flow: equilibrium, d=1 coincidence, bounds, OU reparametrization") {
  auto gen = oracles::rng(109);
  const SpdMatrix b1 = oracles::random_spd(gen, 2);
  const VectorXd x1 = oracles::random_vector(gen, 2);
  const auto eq = covot::variance_moment_flow(x1, b1, {x1, b1}, 2.0, 400);
  for (int k = 0; k < eq.times.size(); k += 100)
    CHECK((eq.covs[k].mat() - b1.mat()).norm() < 1e-12);

  // d = 1: the covariance- and variance-modulated moment systems coincide
  const VectorXd m0 = VectorXd::Constant(1, 1.5);
  const VectorXd x0 = VectorXd::Zero(1);
  const SpdMatrix c0(2.5 * MatrixXd::Identity(1, 1));
  const SpdMatrix b(0.8 * MatrixXd::Identity(1, 1));
  const auto cov_flow = covot::covariance_moment_flow(m0, c0, {x0, b}, 3.0, 1000);
  const auto var_flow = covot::variance_moment_flow(m0, c0, {x0, b}, 3.0, 1000);
  for (int k = 0; k < cov_flow.times.size(); k += 200) {
    CHECK(std::abs(cov_flow.covs[k](0, 0) - var_flow.covs[k](0, 0)) < 1e-10);
    CHECK(std::abs(cov_flow.means(k, 0) - var_flow.means(k, 0)) < 1e-10);
  }

  // variance bounds and the Ornstein-Uhlenbeck closed form in tau
  auto gen2 = oracles::rng(113);
  const SpdMatrix c2 = oracles::random_spd(gen2, 2, 0.4, 2.0);
  const SpdMatrix b2 = oracles::random_spd(gen2, 2, 0.4, 2.0);
  const VectorXd z0 = oracles::random_vector(gen2, 2);
  const VectorXd z1 = z0 + oracles::random_vector(gen2, 2);
  const auto trace = covot::variance_moment_flow(z1, c2, {z0, b2}, 4.0, 2000);
  CHECK(trace.reparam_residual < 1e-6);
  const double lower =
      2.0 * std::min(1.0 / b2.inverse().norm2(), 1.0 / c2.inverse().norm2());
  const double upper = 2.0 * std::max(b2.norm2(), c2.norm2());
  for (int k = 0; k < trace.times.size(); k += 200) {
    CHECK(trace.variance(k) >= lower - 1e-9);
    CHECK(trace.variance(k) <= upper + 1e-9);
  }
}

TEST_CASE("decay report: equilibrium diagnostics vanish; lambda formula") {
  const VectorXd x0 = VectorXd::Zero(1);
  const SpdMatrix b = SpdMatrix::identity(1);
  const auto eq = covot::covariance_moment_flow(x0, b, {x0, b}, 2.0, 200);
  const auto rep = covot::decay_report(eq, std::nullopt, {x0, b});
  for (const auto& row : rep.rows) {
    CHECK(std::abs(row.rel_entropy) < 1e-12);
    CHECK(std::abs(row.fisher_cov) < 1e-12);
    CHECK(std::abs(row.w2) < 1e-6);
  }
  CHECK(rep.all_bounds_hold);

  // d=1, B=1, C0=4: lambda = max{1, 1/4} max{1, 4} = 4
  const SpdMatrix c0(4.0 * MatrixXd::Identity(1, 1));
  CHECK(covot::relative_condition_number(b, c0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(covot::kappa_condition(b, c0) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("decay report: bounds hold along random covariance flows") {
  auto gen = oracles::rng(127);
  for (int rep_i = 0; rep_i < 5; ++rep_i) {
    const int d = 2 + (rep_i % 2);
    const SpdMatrix c0 = oracles::random_spd(gen, d, 0.3, 3.0);
    const SpdMatrix b = oracles::random_spd(gen, d, 1.0, 3.0);
    const VectorXd x0 = oracles::random_vector(gen, d);
    const VectorXd m0 = x0 + oracles::random_vector(gen, d);
    const auto trace = covot::covariance_moment_flow(m0, c0, {x0, b}, 5.0, 1000);
    const auto report = covot::decay_report(trace, std::nullopt, {x0, b});
    CHECK(report.all_bounds_hold);
    CHECK(report.mean_decay_residual < 1e-8);
  }
}

TEST_CASE("decay report: prefactor-one regime for dominated targets") {
  auto gen = oracles::rng(131);
  const int d = 2;
  const SpdMatrix b = oracles::random_spd(gen, d, 0.5, 1.5);
  const SpdMatrix c0(b.mat() + oracles::random_spd(gen, d, 0.1, 1.0).mat());
  const VectorXd x0 = oracles::random_vector(gen, d);
  const auto trace = covot::covariance_moment_flow(x0, c0, {x0, b}, 5.0, 1000);
  const auto report = covot::decay_report(trace, std::nullopt, {x0, b});
  CHECK(report.mean_zero_start);
  CHECK(report.cov_dominates);
  for (const auto& row : report.rows) {
    CHECK(row.prefactor_one_ok);
    CHECK(row.fisher_rate4_ok);
  }
}

TEST_CASE("variance flow satisfies the LSI entropy decay") {
  auto gen = oracles::rng(137);
  for (int rep_i = 0; rep_i < 5; ++rep_i) {
    const SpdMatrix c0 = oracles::random_spd(gen, 2, 0.4, 2.5);
    const SpdMatrix b = oracles::random_spd(gen, 2, 0.4, 2.5);
    const VectorXd x0 = oracles::random_vector(gen, 2);
    const VectorXd m0 = x0 + 0.7 * oracles::random_vector(gen, 2);
    const auto trace = covot::variance_moment_flow(m0, c0, {x0, b}, 4.0, 1000);
    const auto report = covot::decay_report(trace, std::nullopt, {x0, b});
    CHECK(report.all_bounds_hold);
  }
}

TEST_CASE("eks: collapsed ensemble stays frozen") {
  MatrixXd pos(5, 2);
  for (int j = 0; j < 5; ++j) pos.row(j) << 1.0, -2.0;
  const VectorXd x0 = VectorXd::Zero(2);
  const QuadraticTarget target{x0, SpdMatrix::identity(2)};
  const auto res = covot::eks_simulate({pos}, target, 0.5, 0.01, 7);
  CHECK((res.final_positions - pos).norm() == doctest::Approx(0.0));
  CHECK(res.degenerate_seen);
}

TEST_CASE("eks: correlation and preconditioned drifts agree for linear forward maps") {
  auto gen = oracles::rng(139);
  const int j_count = 40;
  MatrixXd pos = oracles::random_matrix(gen, j_count, 2);
  covot::LinearForward lin;
  lin.a = oracles::random_matrix(gen, 3, 2);
  lin.y = oracles::random_vector(gen, 3);
  lin.gamma_inv = oracles::random_spd(gen, 3, 0.5, 2.0).mat();
  lin.sigma_inv = oracles::random_spd(gen, 2, 0.5, 2.0).mat();

  covot::EksOptions opts;
  opts.compare_drift_forms = true;
  const auto res = covot::eks_simulate({pos}, lin, 0.2, 0.002, 11, opts);
  CHECK(res.max_drift_mismatch < 1e-10);
}

TEST_CASE("eks: zero likelihood reduces to the prior drift exactly") {
  auto gen = oracles::rng(149);
  MatrixXd pos = oracles::random_matrix(gen, 30, 2);
  const SpdMatrix sigma = oracles::random_spd(gen, 2, 0.5, 2.0);

  covot::LinearForward lin;
  lin.a = MatrixXd::Identity(2, 2);
  lin.y = VectorXd::Zero(2);
  lin.gamma_inv = MatrixXd::Zero(2, 2);
  lin.sigma_inv = sigma.inverse().mat();

  const QuadraticTarget prior{VectorXd::Zero(2), sigma};
  const auto a = covot::eks_simulate({pos}, lin, 0.3, 0.005, 21);
  const auto b = covot::eks_simulate({pos}, prior, 0.3, 0.005, 21);
  CHECK((a.final_positions - b.final_positions).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("eks: moments track the moment ODE at modest ensemble size") {
  const int j_count = 2000;
  MatrixXd pos(j_count, 2);
  const VectorXd m0 = VectorXd::Constant(2, 1.0);
  MatrixXd c0(2, 2);
  c0 << 0.5, 0.1, 0.1, 0.8;
  const MatrixXd root = SpdMatrix(c0).sqrt().mat();
  for (int j = 0; j < j_count; ++j) {
    VectorXd z(2);
    for (int k = 0; k < 2; ++k) z(k) = covot::rng::normal(555, 0, j, k);
    pos.row(j) = (m0 + root * z).transpose();
  }
  const covot::EmpiricalMeasure cloud(pos, VectorXd::Constant(j_count, 1.0 / j_count),
                                      false);
  const auto emp0 = cloud.moments();

  VectorXd x0(2);
  x0 << 2.0, -1.0;
  MatrixXd bm(2, 2);
  bm << 1.0, -0.2, -0.2, 0.7;
  const QuadraticTarget target{x0, SpdMatrix(bm)};

  covot::EksOptions opts;
  opts.snapshot_times = {1.0};
  const auto res = covot::eks_simulate({pos}, target, 1.0, 0.002, 77, opts);

  const auto ode =
      covot::covariance_moment_flow(emp0.mean, emp0.cov, target, 1.0, 500);
  const int last = static_cast<int>(ode.times.size()) - 1;
  REQUIRE(res.snapshot_means.size() == 1);
  const VectorXd mean_err =
      res.snapshot_means.back() - ode.means.row(last).transpose();
  CHECK(mean_err.norm() / ode.means.row(last).norm() < 0.1);
  CHECK((res.snapshot_covs.back() - ode.covs[last].mat()).norm() /
            ode.covs[last].mat().norm() <
        0.1);
}

TEST_CASE("eks: oversized step is rejected") {
  auto gen = oracles::rng(151);
  MatrixXd pos = 3.0 * oracles::random_matrix(gen, 20, 2);
  const QuadraticTarget target{VectorXd::Zero(2),
                               SpdMatrix(0.05 * MatrixXd::Identity(2, 2))};
  CHECK_THROWS_AS(covot::eks_simulate({pos}, target, 1.0, 0.3, 3),
                  covot::PreconditionError);
}

TEST_CASE("ou contraction: identical pairs, covariance decay, mean saturation") {
  const Gaussian a{VectorXd::Zero(2), SpdMatrix::identity(2)};
  const auto same = covot::ou_contraction_check(a, a, 3.0, 50);
  for (const auto& row : same) CHECK(row.w2 < 1e-12);

  const Gaussian wide{VectorXd::Zero(2), SpdMatrix(4.0 * MatrixXd::Identity(2, 2))};
  const auto rows = covot::ou_contraction_check(wide, a, 3.0, 50);
  for (const auto& row : rows) CHECK(row.w2 <= row.bound * (1.0 + 1e-8));

  const Gaussian shifted{VectorXd::Constant(2, 1.5), SpdMatrix::identity(2)};
  const auto sat = covot::ou_contraction_check(shifted, a, 3.0, 50);
  for (const auto& row : sat) CHECK(std::abs(row.w2 - row.bound) < 1e-10);
}

TEST_CASE("theorem bracket equals the weighted Gaussian distance (zero shape term)") {
  auto gen = oracles::rng(157);
  for (int rep = 0; rep < 10; ++rep) {
    const int d = 2 + rep % 2;
    const SpdMatrix c0 = oracles::random_spd(gen, d, 0.4, 2.5);
    const SpdMatrix b = oracles::random_spd(gen, d, 0.4, 2.5);
    const VectorXd x0 = oracles::random_vector(gen, d);
    const VectorXd m0 = x0 + oracles::random_vector(gen, d);

    const VectorXd dm = m0 - x0;
    const MatrixXd bh = b.sqrt().mat();
    const MatrixXd inner = bh * c0.inverse().mat() * bh;
    const double bracket =
        dm.dot(c0.inverse().mat() * dm) +
        (MatrixXd::Identity(d, d) - SpdMatrix(inner).sqrt().mat()).squaredNorm();
    const double weighted = covot::gaussian_w2_sq({m0, c0}, {x0, b}, c0);
    CHECK(bracket == doctest::Approx(weighted).epsilon(1e-8));
  }
}
