#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>

#include "covot/spd.hpp"

namespace covot {

struct Moments {
  Eigen::VectorXd mean;
  SpdMatrix cov;
  double var;  // trace of cov
};

/// Weighted point cloud in R^d. Weights are normalized to sum to one on
/// construction; duplicate points (within 1e-12) are merged with summed
/// weights to keep transport-plan supports minimal.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(Eigen::MatrixXd points, Eigen::VectorXd weights,
                   bool merge_duplicates = true);

  static EmpiricalMeasure dirac(const Eigen::VectorXd& x);

  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::VectorXd point(int i) const { return points_.row(i).transpose(); }

  Moments moments() const;

 private:
  Eigen::MatrixXd points_;   // n x d
  Eigen::VectorXd weights_;  // n, positive, sums to 1
};

struct Gaussian {
  Eigen::VectorXd mean;
  SpdMatrix cov;
};

/// Affine normalization map T_{m,A}(x) = A^{-1}(x - m).
struct NormalizationMap {
  Eigen::VectorXd shift;     // m
  Eigen::MatrixXd root;      // A with A A^T = C
  Eigen::MatrixXd root_inv;  // A^{-1}

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return root_inv * (x - shift); }
  Eigen::VectorXd invert(const Eigen::VectorXd& x) const { return root * x + shift; }
};

Moments moments(const EmpiricalMeasure& mu);

/// Normalizes mu to mean zero and identity covariance. With no `given_root`
/// the symmetric square root of C(mu) is used. Throws DegenerateCovariance
/// (with rank and image basis) when C(mu) is rank deficient.
std::pair<EmpiricalMeasure, NormalizationMap> normalize(
    const EmpiricalMeasure& mu,
    const std::optional<Eigen::MatrixXd>& given_root = std::nullopt);

EmpiricalMeasure denormalize(const EmpiricalMeasure& mu, const NormalizationMap& map);

struct EntropyTerms {
  double rel_entropy;  // E(N_{m,C} | N_{x0,B})
  double fisher_cov;   // I_cov(N_{m,C} | N_{x0,B})
};

/// Closed-form Gaussian relative entropy and covariance-weighted Fisher
/// information against a Gaussian target.
EntropyTerms gaussian_entropy_terms(const Gaussian& g, const Gaussian& target);

/// 2^d-fold orbit average under the coordinate reflections.
EmpiricalMeasure reflect_symmetrize(const EmpiricalMeasure& mu);

/// Checks (sigma_k)_# mu == mu for every coordinate reflection, as matching
/// of the weighted supports within `tol`.
bool is_reflection_symmetric(const EmpiricalMeasure& mu, double tol = 1e-8);

}  // namespace covot
