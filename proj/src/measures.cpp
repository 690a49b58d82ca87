#include "covot/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace covot {

namespace {

constexpr double kMergeTol = 1e-12;

bool lex_less(const Eigen::MatrixXd& pts, int a, int b) {
  for (int k = 0; k < pts.cols(); ++k) {
    if (pts(a, k) < pts(b, k)) return true;
    if (pts(a, k) > pts(b, k)) return false;
  }
  return false;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd points, Eigen::VectorXd weights,
                                   bool merge_duplicates) {
  if (points.rows() < 1) throw PreconditionError("EmpiricalMeasure: need at least one point");
  if (points.rows() != weights.size())
    throw PreconditionError("EmpiricalMeasure: points/weights size mismatch");
  if (!points.allFinite() || !weights.allFinite())
    throw PreconditionError("EmpiricalMeasure: non-finite data");
  if (weights.minCoeff() <= 0.0)
    throw PreconditionError("EmpiricalMeasure: weights must be positive");

  const double total = weights.sum();
  weights /= total;

  if (merge_duplicates) {
    const int n = static_cast<int>(points.rows());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return lex_less(points, a, b); });
    std::vector<int> keep;
    std::vector<double> w;
    for (int idx : order) {
      bool merged = false;
      if (!keep.empty()) {
        const int last = keep.back();
        if ((points.row(idx) - points.row(last)).cwiseAbs().maxCoeff() <= kMergeTol) {
          w.back() += weights(idx);
          merged = true;
        }
      }
      if (!merged) {
        keep.push_back(idx);
        w.push_back(weights(idx));
      }
    }
    points_.resize(static_cast<int>(keep.size()), points.cols());
    weights_.resize(static_cast<int>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
      points_.row(static_cast<int>(i)) = points.row(keep[i]);
      weights_(static_cast<int>(i)) = w[i];
    }
  } else {
    points_ = std::move(points);
    weights_ = std::move(weights);
  }
}

EmpiricalMeasure EmpiricalMeasure::dirac(const Eigen::VectorXd& x) {
  Eigen::MatrixXd p(1, x.size());
  p.row(0) = x.transpose();
  return EmpiricalMeasure(p, Eigen::VectorXd::Ones(1));
}

Moments EmpiricalMeasure::moments() const {
  const int d = dim();
  Eigen::VectorXd m = points_.transpose() * weights_;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < size(); ++i) {
    Eigen::VectorXd r = points_.row(i).transpose() - m;
    c.noalias() += weights_(i) * r * r.transpose();
  }
  SpdMatrix cov(0.5 * (c + c.transpose()));
  return {m, cov, cov.trace()};
}

Moments moments(const EmpiricalMeasure& mu) { return mu.moments(); }

std::pair<EmpiricalMeasure, NormalizationMap> normalize(
    const EmpiricalMeasure& mu, const std::optional<Eigen::MatrixXd>& given_root) {
  const Moments mom = mu.moments();
  const int d = mu.dim();
  if (mom.cov.rank() < d) {
    const int r = mom.cov.rank();
    Eigen::MatrixXd basis = mom.cov.eigenvectors().rightCols(r);
    std::ostringstream os;
    os << "normalize: covariance has rank " << r << " < " << d;
    throw DegenerateCovarianceError(os.str(), r, basis);
  }

  Eigen::MatrixXd a;
  if (given_root) {
    a = *given_root;
    Eigen::MatrixXd prod = a * a.transpose();
    const double rel = (prod - mom.cov.mat()).norm() / std::max(1e-300, mom.cov.mat().norm());
    if (rel > 1e-10)
      throw PreconditionError("normalize: given root does not satisfy A A^T = C(mu)");
  } else {
    a = mom.cov.sqrt().mat();
  }

  Eigen::MatrixXd a_inv = a.inverse();
  Eigen::MatrixXd pts(mu.size(), d);
  for (int i = 0; i < mu.size(); ++i)
    pts.row(i) = (a_inv * (mu.point(i) - mom.mean)).transpose();
  NormalizationMap map{mom.mean, a, a_inv};
  return {EmpiricalMeasure(pts, mu.weights(), /*merge_duplicates=*/false), map};
}

EmpiricalMeasure denormalize(const EmpiricalMeasure& mu, const NormalizationMap& map) {
  Eigen::MatrixXd pts(mu.size(), mu.dim());
  for (int i = 0; i < mu.size(); ++i) pts.row(i) = map.invert(mu.point(i)).transpose();
  return EmpiricalMeasure(pts, mu.weights(), /*merge_duplicates=*/false);
}

EntropyTerms gaussian_entropy_terms(const Gaussian& g, const Gaussian& target) {
  if (!g.cov.strictly_positive() || !target.cov.strictly_positive())
    throw SingularMatrixError("gaussian_entropy_terms: covariances must be strictly PD");
  const SpdMatrix& c = g.cov;
  const SpdMatrix& b = target.cov;
  const Eigen::VectorXd dm = g.mean - target.mean;

  const double logdet =
      c.eigenvalues().array().log().sum() - b.eigenvalues().array().log().sum();
  const Eigen::MatrixXd binv = b.inverse().mat();
  const double tr_term = static_cast<double>(c.dim()) - (binv * c.mat()).trace();
  const Eigen::MatrixXd binv_half = b.inv_sqrt().mat();
  const double mean_term = (binv_half * dm).squaredNorm();
  const double rel = -0.5 * (logdet + tr_term - mean_term);

  // Fisher term via the B-congruent form; equals the expectation of
  // |C^{1/2} grad log(N/N*)|^2 for non-commuting B, C as well.
  const Eigen::MatrixXd s = binv_half * c.mat() * binv_half;
  const double hs =
      (Eigen::MatrixXd::Identity(c.dim(), c.dim()) - 0.5 * (s + s.transpose())).squaredNorm();
  const double fisher_mean = (c.sqrt().mat() * (binv * dm)).squaredNorm();
  return {rel, hs + fisher_mean};
}

EmpiricalMeasure reflect_symmetrize(const EmpiricalMeasure& mu) {
  const int d = mu.dim();
  const int n = mu.size();
  const int orbits = 1 << d;
  Eigen::MatrixXd pts(n * orbits, d);
  Eigen::VectorXd w(n * orbits);
  int row = 0;
  for (int s = 0; s < orbits; ++s) {
    Eigen::VectorXd sign(d);
    for (int k = 0; k < d; ++k) sign(k) = (s >> k) & 1 ? -1.0 : 1.0;
    for (int i = 0; i < n; ++i) {
      pts.row(row) = mu.point(i).cwiseProduct(sign).transpose();
      w(row) = mu.weights()(i) / orbits;
      ++row;
    }
  }
  return EmpiricalMeasure(pts, w);
}

bool is_reflection_symmetric(const EmpiricalMeasure& mu, double tol) {
  const int d = mu.dim();
  const int n = mu.size();

  auto sorted_order = [&](const Eigen::MatrixXd& pts) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return lex_less(pts, a, b); });
    return order;
  };
  const std::vector<int> base = sorted_order(mu.points());

  // Reflections are exact sign flips, so the sorted supports must agree
  // element-wise (points and weights) for a symmetric measure.
  for (int k = 0; k < d; ++k) {
    Eigen::MatrixXd refl = mu.points();
    refl.col(k) *= -1.0;
    const std::vector<int> ord = sorted_order(refl);
    for (int i = 0; i < n; ++i) {
      const int a = base[i];
      const int b = ord[i];
      if ((mu.points().row(a) - refl.row(b)).cwiseAbs().maxCoeff() > tol) return false;
      if (std::abs(mu.weights()(a) - mu.weights()(b)) > tol) return false;
    }
  }
  return true;
}

}  // namespace covot
