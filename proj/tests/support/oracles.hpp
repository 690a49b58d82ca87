#pragma once

// Test-only oracles kept independent of the library implementations they
// check: quadrature, power iteration, brute-force assignment enumeration, and
// a Barzilai-Borwein minimizer for discretized action functionals.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "covot/measures.hpp"
#include "covot/spd.hpp"

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::mt19937_64 rng(unsigned seed) { return std::mt19937_64(seed); }

inline MatrixXd random_matrix(std::mt19937_64& gen, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(gen);
  return m;
}

inline VectorXd random_vector(std::mt19937_64& gen, int n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(gen);
  return v;
}

/// Random SPD matrix with eigenvalues in [lo, hi].
inline covot::SpdMatrix random_spd(std::mt19937_64& gen, int d, double lo = 0.3,
                                   double hi = 3.0) {
  const MatrixXd g = random_matrix(gen, d, d);
  const Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ();
  std::uniform_real_distribution<double> unif(lo, hi);
  VectorXd lam(d);
  for (int i = 0; i < d; ++i) lam(i) = unif(gen);
  MatrixXd m = q * lam.asDiagonal() * q.transpose();
  return covot::SpdMatrix(0.5 * (m + m.transpose()));
}

/// Largest singular value by power iteration on M^T M.
inline double power_iteration_spectral(const MatrixXd& m, int iters = 2000) {
  const MatrixXd mtm = m.transpose() * m;
  VectorXd v = VectorXd::Ones(m.cols()).normalized();
  for (int k = 0; k < iters; ++k) v = (mtm * v).normalized();
  return std::sqrt(v.dot(mtm * v));
}

/// Composite Simpson quadrature on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// 1-d Gaussian density.
inline double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
}

/// Quadrature evaluation of E(N_{m,c} | N_{x0,b}) in one dimension.
inline double rel_entropy_quadrature_1d(double m, double c, double x0, double b) {
  auto f = [&](double x) {
    const double rho = normal_pdf(x, m, c);
    const double pi = normal_pdf(x, x0, b);
    return rho > 1e-300 ? rho * std::log(rho / pi) : 0.0;
  };
  const double lo = std::min(m - 14.0 * std::sqrt(c), x0 - 14.0 * std::sqrt(b));
  const double hi = std::max(m + 14.0 * std::sqrt(c), x0 + 14.0 * std::sqrt(b));
  return simpson(f, lo, hi, 40000);
}

/// Quadrature evaluation of I_cov(N_{m,c} | N_{x0,b}) in one dimension.
inline double fisher_cov_quadrature_1d(double m, double c, double x0, double b) {
  auto f = [&](double x) {
    const double rho = normal_pdf(x, m, c);
    const double grad = -(x - m) / c + (x - x0) / b;  // grad log(rho/pi)
    return rho * c * grad * grad;
  };
  const double lo = std::min(m - 14.0 * std::sqrt(c), x0 - 14.0 * std::sqrt(b));
  const double hi = std::max(m + 14.0 * std::sqrt(c), x0 + 14.0 * std::sqrt(b));
  return simpson(f, lo, hi, 40000);
}

/// Tensor-grid quadrature of I_cov(N_{m,C} | N_{x0,B}) in two dimensions;
/// distinguishes the congruent from the naively transcribed Fisher formula.
inline double fisher_cov_quadrature_2d(const VectorXd& m, const MatrixXd& c,
                                       const VectorXd& x0, const MatrixXd& b) {
  const MatrixXd cinv = c.inverse();
  const MatrixXd binv = b.inverse();
  const Eigen::LLT<MatrixXd> llt(c);
  const MatrixXd chalf = covot::SpdMatrix(c).sqrt().mat();
  const double det_c = c.determinant();
  const int n = 320;
  const double span = 10.0;
  const double sd = std::sqrt(std::max(c(0, 0), c(1, 1)));
  const double h = 2.0 * span * sd / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      VectorXd x(2);
      x << m(0) - span * sd + i * h, m(1) - span * sd + j * h;
      const VectorXd dm = x - m;
      const double rho =
          std::exp(-0.5 * dm.dot(cinv * dm)) / (2.0 * M_PI * std::sqrt(det_c));
      const VectorXd grad = -cinv * dm + binv * (x - x0);
      const double wi = (i == 0 || i == n) ? 0.5 : 1.0;
      const double wj = (j == 0 || j == n) ? 0.5 : 1.0;
      total += wi * wj * rho * (chalf * grad).squaredNorm() * h * h;
    }
  return total;
}

/// Brute-force minimum assignment cost over all permutations (equal weights).
inline double brute_force_w2_equal(const MatrixXd& x, const MatrixXd& y) {
  const int n = static_cast<int>(x.rows());
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  double best = 1e300;
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) cost += (x.row(i) - y.row(perm[i])).squaredNorm();
    best = std::min(best, cost / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Barzilai-Borwein descent with a nonmonotone Armijo safeguard. `grad` must
/// fill the gradient and return the objective.
inline VectorXd minimize_bb(const std::function<double(const VectorXd&, VectorXd*)>& fg,
                            VectorXd x, int max_iter = 4000, double gtol = 1e-10) {
  VectorXd g(x.size());
  double f = fg(x, &g);
  double step = 1e-3;
  VectorXd x_prev = x, g_prev = g;
  double f_best = f;
  VectorXd x_best = x;
  for (int it = 0; it < max_iter; ++it) {
    if (g.norm() < gtol) break;
    VectorXd x_new = x - step * g;
    VectorXd g_new(x.size());
    double f_new = fg(x_new, &g_new);
    int backtrack = 0;
    while (!(f_new < f + 1e-10 * std::abs(f) + 1e-14) && backtrack < 40) {
      step *= 0.5;
      x_new = x - step * g;
      f_new = fg(x_new, &g_new);
      ++backtrack;
    }
    x_prev = x;
    g_prev = g;
    x = x_new;
    g = g_new;
    f = f_new;
    if (f < f_best) {
      f_best = f;
      x_best = x;
    }
    const VectorXd sx = x - x_prev;
    const VectorXd sg = g - g_prev;
    const double denom = sx.dot(sg);
    step = denom > 1e-300 ? sx.squaredNorm() / denom : std::max(step, 1e-6);
    step = std::min(std::max(step, 1e-12), 1e3);
  }
  return x_best;
}

}  // namespace oracles
