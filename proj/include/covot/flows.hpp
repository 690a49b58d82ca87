#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "covot/measures.hpp"
#include "covot/spd.hpp"

namespace covot {

/// Quadratic potential H(x) = 1/2 |x - x0|_B^2 with Gaussian target N_{x0,B}.
struct QuadraticTarget {
  Eigen::VectorXd x0;
  SpdMatrix b;
};

enum class FlowKind { covariance, variance };

/// Moment trajectory of a modulated Fokker-Planck flow, with the closed-form
/// companion trace for the covariance-modulated case and the reparametrized
/// consistency residual for the variance-modulated case.
struct FlowTrace {
  FlowKind kind = FlowKind::covariance;
  Eigen::VectorXd times;
  Eigen::MatrixXd means;                  // RK4 trace, N x d
  std::vector<SpdMatrix> covs;            // RK4 trace
  Eigen::MatrixXd means_closed;           // covariance kind: closed form
  std::vector<SpdMatrix> covs_closed;     // covariance kind: closed form
  double max_closed_dev = 0.0;            // covariance kind
  Eigen::VectorXd tau;                    // variance kind: tau(t) = int var dt
  double reparam_residual = 0.0;          // variance kind: OU closed-form check
  Eigen::VectorXd variance;               // tr C along the trace
  Eigen::VectorXd initial_mean;
  SpdMatrix initial_cov;
};

/// Covariance-modulated moment flow mdot = -C B^{-1}(m - x0),
/// Cdot = 2C - 2C B^{-1} C. Returns the RK4 trace and the closed-form trace
///   C_t^{-1} = (1 - e^{-2t}) B^{-1} + e^{-2t} C0^{-1},
///   A_t^{-1}(m_t - x0) = e^{-t} A_0^{-1}(m_0 - x0),
/// with their maximal deviation.
FlowTrace covariance_moment_flow(const Eigen::VectorXd& m0, const SpdMatrix& c0,
                                 const QuadraticTarget& target, double horizon, int steps);

/// Variance-modulated moment flow mdot = -var B^{-1}(m - x0),
/// Cdot = var (2 Id - B^{-1} C - C B^{-1}), var = tr C. The trace carries
/// tau(t) = int_0^t var ds and the deviation of (m, C)(t) from the
/// Ornstein-Uhlenbeck closed form evaluated at tau(t).
FlowTrace variance_moment_flow(const Eigen::VectorXd& m0, const SpdMatrix& c0,
                               const QuadraticTarget& target, double horizon, int steps);

struct DecayRow {
  double t;
  double rel_entropy;
  double fisher_cov;
  double w2;           // W2(N_t, N_*)
  double w2_weighted;  // W_{2,C0}(N_t, N_*)
  double mean_decay;   // |m_t - x0|_{C_t}
  bool entropy_ok;
  bool fisher_ok;
  bool w2_ok;
  bool prefactor_one_ok;  // only meaningful when the regime applies
  bool fisher_rate4_ok;   // only meaningful when m0 = x0
};

struct DecayReport {
  std::vector<DecayRow> rows;
  double lambda_cond;    // relative condition number of (B, C0)
  double kappa;          // ||B||_2 max{1, ||B^{-1/2} C0 B^{-1/2}||_2}
  double lambda_var;     // LSI rate min{d/kappa(B), d/(||C0^{-1}|| ||B||)}
  bool mean_zero_start;  // m0 == x0
  bool cov_dominates;    // C0 >= B in PSD order
  bool all_bounds_hold;
  double mean_decay_residual;  // max |  |m_t-x0|_{C_t} - e^{-t}|m0-x0|_{C0} |
  // Shape diagnostics (present when a normalized shape Gaussian is supplied;
  // it evolves by the Ornstein-Uhlenbeck moment flow).
  std::vector<double> shape_entropy;
  std::vector<double> shape_w2;
};

DecayReport decay_report(const FlowTrace& trace, const std::optional<Gaussian>& shape0,
                         const QuadraticTarget& target, double slack = 1e-10);

double relative_condition_number(const SpdMatrix& b, const SpdMatrix& c0);
double kappa_condition(const SpdMatrix& b, const SpdMatrix& c0);
double lsi_rate_variance(const SpdMatrix& b, const SpdMatrix& c0);

struct ParticleEnsemble {
  Eigen::MatrixXd positions;  // J x d
};

struct LinearForward {
  Eigen::MatrixXd a;          // K x d forward operator
  Eigen::VectorXd y;          // observed data, K
  Eigen::MatrixXd gamma_inv;  // noise precision, K x K (0 allowed)
  Eigen::MatrixXd sigma_inv;  // prior precision, d x d
  /// Equivalent quadratic target B^{-1} = A^T Gamma^{-1} A + Sigma^{-1},
  /// x0 = B A^T Gamma^{-1} y.
  QuadraticTarget equivalent_target() const;
};

struct NonlinearForward {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> g;
  int obs_dim;
  Eigen::VectorXd y;
  Eigen::MatrixXd gamma_inv;
  Eigen::MatrixXd sigma_inv;
};

using EksModel = std::variant<QuadraticTarget, LinearForward, NonlinearForward>;

struct EksOptions {
  std::vector<double> snapshot_times;
  bool compare_drift_forms = false;  // linear model only
};

struct EksResult {
  std::vector<double> snapshot_times;
  std::vector<Eigen::MatrixXd> snapshots;        // ensembles at snapshot times
  std::vector<Eigen::VectorXd> snapshot_means;   // empirical means
  std::vector<Eigen::MatrixXd> snapshot_covs;    // empirical covariances
  double max_drift_mismatch = 0.0;  // correlation vs preconditioned form
  bool degenerate_seen = false;     // empirical covariance lost rank
  double min_stability_gap = 0.0;   // min eigenvalue of C - B/2 over the run
  Eigen::MatrixXd final_positions;
};

/// Euler-Maruyama simulation of the ensemble Kalman sampler
///   dx_j = -C(X) grad H(x_j) dt + sqrt(2 C(X)) dW_j
/// with the empirical covariance recomputed every step and counter-based
/// noise keyed by (seed, step, particle).
EksResult eks_simulate(const ParticleEnsemble& initial, const EksModel& model,
                       double horizon, double dt, std::uint64_t seed,
                       const EksOptions& options = {});

struct ContractionRow {
  double t;
  double w2;
  double bound;  // e^{-t} W2(eta_0^a, eta_0^b)
};

/// Evolves two Gaussians by the Ornstein-Uhlenbeck moment flow
/// (mdot = -m, Cdot = 2(Id - C)) and tabulates the W2 contraction.
std::vector<ContractionRow> ou_contraction_check(const Gaussian& g0a, const Gaussian& g0b,
                                                 double horizon, int steps);

}  // namespace covot
