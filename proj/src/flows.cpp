#include "covot/flows.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "covot/ot.hpp"
#include "covot/rng.hpp"

namespace covot {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd time_grid(double horizon, int steps) {
  VectorXd t(steps + 1);
  for (int k = 0; k <= steps; ++k) t(k) = horizon * k / steps;
  return t;
}

MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

struct MomentState {
  VectorXd m;
  MatrixXd c;
};

template <typename Deriv>
std::vector<MomentState> rk4_moments(const VectorXd& m0, const MatrixXd& c0,
                                     const VectorXd& times, Deriv deriv) {
  std::vector<MomentState> traj;
  traj.reserve(times.size());
  MomentState s{m0, c0};
  traj.push_back(s);
  for (int k = 0; k + 1 < times.size(); ++k) {
    const double h = times(k + 1) - times(k);
    const MomentState d1 = deriv(s);
    const MomentState s2{s.m + 0.5 * h * d1.m, sym(s.c + 0.5 * h * d1.c)};
    const MomentState d2 = deriv(s2);
    const MomentState s3{s.m + 0.5 * h * d2.m, sym(s.c + 0.5 * h * d2.c)};
    const MomentState d3 = deriv(s3);
    const MomentState s4{s.m + h * d3.m, sym(s.c + h * d3.c)};
    const MomentState d4 = deriv(s4);
    s.m += (h / 6.0) * (d1.m + 2.0 * d2.m + 2.0 * d3.m + d4.m);
    s.c = sym(s.c + (h / 6.0) * (d1.c + 2.0 * d2.c + 2.0 * d3.c + d4.c));
    traj.push_back(s);
  }
  return traj;
}

}  // namespace

FlowTrace covariance_moment_flow(const VectorXd& m0, const SpdMatrix& c0,
                                 const QuadraticTarget& target, double horizon, int steps) {
  if (!c0.strictly_positive() || !target.b.strictly_positive())
    throw SingularMatrixError("covariance_moment_flow: C0 and B must be strictly PD");
  const int d = c0.dim();
  const MatrixXd binv = target.b.inverse().mat();
  const VectorXd times = time_grid(horizon, steps);

  auto deriv = [&](const MomentState& s) -> MomentState {
    return {-s.c * (binv * (s.m - target.x0)), sym(2.0 * s.c - 2.0 * s.c * binv * s.c)};
  };
  const auto traj = rk4_moments(m0, c0.mat(), times, deriv);

  // Closed form: C_t by the inverse-interpolation formula, m_t through the
  // adapted root A_t which obeys the linear equation Adot = (Id - C_t B^{-1}) A.
  const MatrixXd c0_inv = c0.inverse().mat();
  auto cov_closed = [&](double t) -> MatrixXd {
    const double e2 = std::exp(-2.0 * t);
    const MatrixXd inv = (1.0 - e2) * binv + e2 * c0_inv;
    return sym(inv.inverse());
  };
  const MatrixXd a0 = c0.sqrt().mat();
  const MatrixXd a0_inv = a0.inverse();
  auto root_deriv = [&](double t, const MatrixXd& a) -> MatrixXd {
    return a - cov_closed(t) * binv * a;
  };

  FlowTrace out;
  out.kind = FlowKind::covariance;
  out.times = times;
  out.means.resize(times.size(), d);
  out.means_closed.resize(times.size(), d);
  out.covs.reserve(times.size());
  out.covs_closed.reserve(times.size());
  out.variance.resize(times.size());
  out.initial_mean = m0;
  out.initial_cov = c0;

  MatrixXd a = a0;
  const VectorXd v0 = a0_inv * (m0 - target.x0);
  double max_dev = 0.0;
  for (int k = 0; k < times.size(); ++k) {
    const double t = times(k);
    out.means.row(k) = traj[k].m.transpose();
    out.covs.emplace_back(traj[k].c);
    out.variance(k) = traj[k].c.trace();

    const MatrixXd c_cf = cov_closed(t);
    out.covs_closed.emplace_back(c_cf);
    const VectorXd m_cf = target.x0 + std::exp(-t) * (a * v0);
    out.means_closed.row(k) = m_cf.transpose();

    max_dev = std::max(max_dev, (traj[k].c - c_cf).norm());
    max_dev = std::max(max_dev, (traj[k].m - m_cf).norm());

    if (k + 1 < times.size()) {
      const double h = times(k + 1) - times(k);
      const MatrixXd k1 = root_deriv(t, a);
      const MatrixXd k2 = root_deriv(t + 0.5 * h, a + 0.5 * h * k1);
      const MatrixXd k3 = root_deriv(t + 0.5 * h, a + 0.5 * h * k2);
      const MatrixXd k4 = root_deriv(t + h, a + h * k3);
      a += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  out.max_closed_dev = max_dev;
  return out;
}

FlowTrace variance_moment_flow(const VectorXd& m0, const SpdMatrix& c0,
                               const QuadraticTarget& target, double horizon, int steps) {
  if (!c0.strictly_positive() || !target.b.strictly_positive())
    throw SingularMatrixError("variance_moment_flow: C0 and B must be strictly PD");
  const int d = c0.dim();
  const MatrixXd binv = target.b.inverse().mat();
  const VectorXd times = time_grid(horizon, steps);
  const MatrixXd eye = MatrixXd::Identity(d, d);

  // RK4 on the augmented state (m, C, tau) with tau_dot = tr C, so the time
  // change carries the integrator's full accuracy.
  struct State {
    VectorXd m;
    MatrixXd c;
    double tau;
  };
  auto deriv = [&](const State& s) -> State {
    const double var = s.c.trace();
    return {-var * (binv * (s.m - target.x0)),
            var * sym(2.0 * eye - binv * s.c - s.c * binv), var};
  };
  auto axpy = [](const State& s, double a, const State& d2) -> State {
    return {s.m + a * d2.m, s.c + a * d2.c, s.tau + a * d2.tau};
  };

  FlowTrace out;
  out.kind = FlowKind::variance;
  out.times = times;
  out.means.resize(times.size(), d);
  out.covs.reserve(times.size());
  out.variance.resize(times.size());
  out.tau.resize(times.size());
  out.initial_mean = m0;
  out.initial_cov = c0;

  State s{m0, c0.mat(), 0.0};
  for (int k = 0; k < times.size(); ++k) {
    out.means.row(k) = s.m.transpose();
    out.covs.emplace_back(sym(s.c));
    out.variance(k) = s.c.trace();
    out.tau(k) = s.tau;
    if (k + 1 == times.size()) break;
    const double h = times(k + 1) - times(k);
    const State d1 = deriv(s);
    const State d2 = deriv(axpy(s, 0.5 * h, d1));
    const State d3 = deriv(axpy(s, 0.5 * h, d2));
    const State d4 = deriv(axpy(s, h, d3));
    s.m += (h / 6.0) * (d1.m + 2.0 * d2.m + 2.0 * d3.m + d4.m);
    s.c = sym(s.c + (h / 6.0) * (d1.c + 2.0 * d2.c + 2.0 * d3.c + d4.c));
    s.tau += (h / 6.0) * (d1.tau + 2.0 * d2.tau + 2.0 * d3.tau + d4.tau);
  }

  // Ornstein-Uhlenbeck closed form in tau:
  //   m(tau) = x0 + e^{-B^{-1} tau}(m0 - x0),
  //   C(tau) = B + e^{-B^{-1} tau}(C0 - B) e^{-B^{-1} tau}.
  double residual = 0.0;
  const MatrixXd dev0 = c0.mat() - target.b.mat();
  for (int k = 0; k < times.size(); ++k) {
    const MatrixXd decay = (-out.tau(k) * binv).exp();
    const MatrixXd c_ou = target.b.mat() + decay * dev0 * decay.transpose();
    const VectorXd m_ou = target.x0 + decay * (m0 - target.x0);
    residual = std::max(residual, (out.covs[k].mat() - c_ou).norm());
    residual = std::max(residual, (out.means.row(k).transpose() - m_ou).norm());
  }
  out.reparam_residual = residual;
  return out;
}

double relative_condition_number(const SpdMatrix& b, const SpdMatrix& c0) {
  const MatrixXd bh = b.sqrt().mat();
  const MatrixXd bih = b.inv_sqrt().mat();
  const double up = spectral_norm(bh * c0.inverse().mat() * bh);
  const double down = spectral_norm(bih * c0.mat() * bih);
  return std::max(1.0, up) * std::max(1.0, down);
}

double kappa_condition(const SpdMatrix& b, const SpdMatrix& c0) {
  const MatrixXd bih = b.inv_sqrt().mat();
  return b.norm2() * std::max(1.0, spectral_norm(bih * c0.mat() * bih));
}

double lsi_rate_variance(const SpdMatrix& b, const SpdMatrix& c0) {
  const double d = static_cast<double>(b.dim());
  const double kappa_b = b.norm2() * b.inverse().norm2();
  return std::min(d / kappa_b, d / (c0.inverse().norm2() * b.norm2()));
}

DecayReport decay_report(const FlowTrace& trace, const std::optional<Gaussian>& shape0,
                         const QuadraticTarget& target, double slack) {
  const SpdMatrix& c0 = trace.initial_cov;
  const VectorXd& m0 = trace.initial_mean;
  const Gaussian star{target.x0, target.b};
  const int d = c0.dim();

  DecayReport rep;
  rep.lambda_cond = relative_condition_number(target.b, c0);
  rep.kappa = kappa_condition(target.b, c0);
  rep.lambda_var = lsi_rate_variance(target.b, c0);
  rep.mean_zero_start = (m0 - target.x0).norm() <= 1e-12 * std::max(1.0, m0.norm());
  rep.cov_dominates = psd_leq(target.b.mat(), c0.mat(), 1e-12 * target.b.norm2());
  rep.all_bounds_hold = true;
  rep.mean_decay_residual = 0.0;

  const EntropyTerms at0 = gaussian_entropy_terms({m0, c0}, star);
  const double w2w0 = std::sqrt(gaussian_w2_sq({m0, c0}, star, c0));
  const double mean0 = std::sqrt(
      std::max(0.0, (m0 - target.x0).dot(c0.inverse().mat() * (m0 - target.x0))));
  const double fish_pre = std::pow(
      std::max(1.0, spectral_norm(target.b.sqrt().mat() * c0.inverse().mat() *
                                  target.b.sqrt().mat())),
      2);

  const bool prefactor_regime = rep.mean_zero_start && rep.cov_dominates;
  for (int k = 0; k < trace.times.size(); ++k) {
    const double t = trace.times(k);
    const Gaussian g{trace.means.row(k).transpose(), trace.covs[k]};
    const EntropyTerms terms = gaussian_entropy_terms(g, star);
    const double w2 = std::sqrt(gaussian_w2_sq(g, star));
    const double w2w = std::sqrt(gaussian_w2_sq(g, star, c0));
    const VectorXd dm = g.mean - target.x0;
    const double mean_decay =
        std::sqrt(std::max(0.0, dm.dot(trace.covs[k].inverse().mat() * dm)));

    DecayRow row{};
    row.t = t;
    row.rel_entropy = terms.rel_entropy;
    row.fisher_cov = terms.fisher_cov;
    row.w2 = w2;
    row.w2_weighted = w2w;
    row.mean_decay = mean_decay;

    if (trace.kind == FlowKind::covariance) {
      const double e2 = std::exp(-2.0 * t);
      row.entropy_ok =
          terms.rel_entropy <= rep.lambda_cond * e2 * at0.rel_entropy + slack;
      row.fisher_ok = terms.fisher_cov <=
                      rep.lambda_cond * rep.lambda_cond * e2 * at0.fisher_cov + slack;
      row.w2_ok = w2 <= std::exp(-t) * rep.kappa * w2w0 + slack;
      row.prefactor_one_ok =
          !prefactor_regime ||
          (terms.rel_entropy <= e2 * at0.rel_entropy + slack &&
           terms.fisher_cov <= e2 * at0.fisher_cov + slack);
      row.fisher_rate4_ok =
          !rep.mean_zero_start ||
          terms.fisher_cov <= fish_pre * std::exp(-4.0 * t) * at0.fisher_cov + slack;
      rep.mean_decay_residual = std::max(
          rep.mean_decay_residual, std::abs(mean_decay - std::exp(-t) * mean0));
    } else {
      row.entropy_ok =
          terms.rel_entropy <= std::exp(-2.0 * rep.lambda_var * t) * at0.rel_entropy + slack;
      row.fisher_ok = true;
      row.w2_ok = true;
      row.prefactor_one_ok = true;
      row.fisher_rate4_ok = true;
    }
    rep.all_bounds_hold = rep.all_bounds_hold && row.entropy_ok && row.fisher_ok &&
                          row.w2_ok && row.prefactor_one_ok && row.fisher_rate4_ok;

    if (shape0) {
      // Normalized shape evolves by the standard Ornstein-Uhlenbeck flow.
      const double e1 = std::exp(-t);
      const double e2 = std::exp(-2.0 * t);
      const Gaussian eta{e1 * shape0->mean,
                         SpdMatrix(MatrixXd::Identity(d, d) +
                                   e2 * (shape0->cov.mat() - MatrixXd::Identity(d, d)))};
      const Gaussian std_normal{VectorXd::Zero(d), SpdMatrix::identity(d)};
      rep.shape_entropy.push_back(gaussian_entropy_terms(eta, std_normal).rel_entropy);
      rep.shape_w2.push_back(std::sqrt(gaussian_w2_sq(eta, std_normal)));
    }
    rep.rows.push_back(row);
  }
  return rep;
}

QuadraticTarget LinearForward::equivalent_target() const {
  const MatrixXd b_inv = a.transpose() * gamma_inv * a + sigma_inv;
  const SpdMatrix b = SpdMatrix(b_inv).inverse();
  const VectorXd x0 = b.mat() * (a.transpose() * (gamma_inv * y));
  return {x0, b};
}

EksResult eks_simulate(const ParticleEnsemble& initial, const EksModel& model,
                       double horizon, double dt, std::uint64_t seed,
                       const EksOptions& options) {
  const int j_count = static_cast<int>(initial.positions.rows());
  const int d = static_cast<int>(initial.positions.cols());
  if (j_count < 2)
    throw PreconditionError("eks_simulate: need at least two particles");
  if (dt <= 0.0 || horizon <= 0.0)
    throw PreconditionError("eks_simulate: dt and horizon must be positive");

  // Equivalent quadratic data when available (stability check, drift forms).
  std::optional<QuadraticTarget> quad;
  if (std::holds_alternative<QuadraticTarget>(model))
    quad = std::get<QuadraticTarget>(model);
  else if (std::holds_alternative<LinearForward>(model))
    quad = std::get<LinearForward>(model).equivalent_target();

  MatrixXd x = initial.positions;
  auto empirical_cov = [&](const MatrixXd& pos) -> MatrixXd {
    const VectorXd mean = pos.colwise().mean().transpose();
    MatrixXd centered = pos.rowwise() - mean.transpose();
    return sym(centered.transpose() * centered / j_count);
  };

  if (quad) {
    const SpdMatrix c_init(empirical_cov(x));
    const MatrixXd bih = quad->b.inv_sqrt().mat();
    const double top = spectral_norm(bih * c_init.mat() * bih);
    if (dt * top >= 0.5)
      throw PreconditionError(
          "eks_simulate: dt * lambda_max(C B^{-1}) >= 0.5, step too large");
  }

  const int steps = static_cast<int>(std::ceil(horizon / dt - 1e-12));
  // Noise lives in its own seed domain so callers may reuse the raw seed for
  // initial sampling without colliding with step-0 increments.
  const std::uint64_t noise_seed = rng::mix64(seed ^ 0x454b53ULL);
  EksResult out;
  out.min_stability_gap = std::numeric_limits<double>::infinity();

  std::vector<int> snap_steps;
  for (double ts : options.snapshot_times)
    snap_steps.push_back(static_cast<int>(std::lround(ts / dt)));

  auto record_snapshot = [&](int step_index) {
    for (size_t q = 0; q < snap_steps.size(); ++q) {
      if (snap_steps[q] != step_index) continue;
      out.snapshot_times.push_back(options.snapshot_times[q]);
      out.snapshots.push_back(x);
      const VectorXd mean = x.colwise().mean().transpose();
      out.snapshot_means.push_back(mean);
      out.snapshot_covs.push_back(empirical_cov(x));
    }
  };
  record_snapshot(0);

  for (int step = 0; step < steps; ++step) {
    const MatrixXd c_raw = empirical_cov(x);
    const SpdMatrix c(c_raw);
    if (c.rank() < d) out.degenerate_seen = true;
    if (quad) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(
          sym(c_raw - 0.5 * quad->b.mat()));
      out.min_stability_gap = std::min(out.min_stability_gap, es.eigenvalues().minCoeff());
    }
    const MatrixXd noise_root = c.sqrt().mat();

    MatrixXd drift(j_count, d);
    if (std::holds_alternative<QuadraticTarget>(model)) {
      const auto& t = std::get<QuadraticTarget>(model);
      const MatrixXd cbinv = c_raw * t.b.inverse().mat();
      drift = -(x.rowwise() - t.x0.transpose()) * cbinv.transpose();
    } else {
      const bool linear = std::holds_alternative<LinearForward>(model);
      const MatrixXd& gamma_inv = linear ? std::get<LinearForward>(model).gamma_inv
                                         : std::get<NonlinearForward>(model).gamma_inv;
      const MatrixXd& sigma_inv = linear ? std::get<LinearForward>(model).sigma_inv
                                         : std::get<NonlinearForward>(model).sigma_inv;
      const VectorXd& y = linear ? std::get<LinearForward>(model).y
                                 : std::get<NonlinearForward>(model).y;
      MatrixXd g_vals;
      if (linear) {
        g_vals = x * std::get<LinearForward>(model).a.transpose();
      } else {
        const auto& nl = std::get<NonlinearForward>(model);
        g_vals.resize(j_count, nl.obs_dim);
        for (int j = 0; j < j_count; ++j)
          g_vals.row(j) = nl.g(x.row(j).transpose()).transpose();
      }
      const Eigen::RowVectorXd g_bar = g_vals.colwise().mean();
      // P = (1/J) sum_k x_k (G_k - Gbar)^T collapses the pairwise sum.
      const MatrixXd p = x.transpose() * (g_vals.rowwise() - g_bar) / j_count;
      const MatrixXd resid = (g_vals.rowwise() - y.transpose()) * gamma_inv.transpose();
      drift = -resid * p.transpose() - x * (c_raw * sigma_inv).transpose();

      if (options.compare_drift_forms && linear && quad) {
        const MatrixXd binv = quad->b.inverse().mat();
        const MatrixXd precond =
            -(x.rowwise() - quad->x0.transpose()) * (c_raw * binv).transpose();
        out.max_drift_mismatch =
            std::max(out.max_drift_mismatch, (drift - precond).cwiseAbs().maxCoeff());
      }
    }

    const double root_dt = std::sqrt(2.0 * dt);
    for (int j = 0; j < j_count; ++j) {
      VectorXd xi(d);
      for (int k = 0; k < d; ++k)
        xi(k) = rng::normal(noise_seed, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(k));
      x.row(j) += dt * drift.row(j) + root_dt * (noise_root * xi).transpose();
    }

    if (x.cwiseAbs().maxCoeff() > 1e8)
      throw UnstableStepError("eks_simulate: particle norm exceeded 1e8");
    record_snapshot(step + 1);
  }

  out.final_positions = x;
  if (!std::isfinite(out.min_stability_gap)) out.min_stability_gap = 0.0;
  return out;
}

std::vector<ContractionRow> ou_contraction_check(const Gaussian& g0a, const Gaussian& g0b,
                                                 double horizon, int steps) {
  const int d = static_cast<int>(g0a.mean.size());
  const MatrixXd eye = MatrixXd::Identity(d, d);
  const double base = std::sqrt(gaussian_w2_sq(g0a, g0b));
  std::vector<ContractionRow> rows;
  for (int k = 0; k <= steps; ++k) {
    const double t = horizon * k / steps;
    const double e1 = std::exp(-t);
    const double e2 = std::exp(-2.0 * t);
    const Gaussian at{e1 * g0a.mean, SpdMatrix(eye + e2 * (g0a.cov.mat() - eye))};
    const Gaussian bt{e1 * g0b.mean, SpdMatrix(eye + e2 * (g0b.cov.mat() - eye))};
    rows.push_back({t, std::sqrt(gaussian_w2_sq(at, bt)), e1 * base});
  }
  return rows;
}

}  // namespace covot
