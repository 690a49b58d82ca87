#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace covot {

/// Base class for all solver and validation errors. The `name()` tag is
/// stable and is what the CLI writes into result manifests.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

struct NonSymmetricError : Error {
  explicit NonSymmetricError(const std::string& w) : Error("NonSymmetric", w) {}
};

struct NegativeEigenvalueError : Error {
  explicit NegativeEigenvalueError(const std::string& w)
      : Error("NegativeEigenvalue", w) {}
};

struct SingularMatrixError : Error {
  explicit SingularMatrixError(const std::string& w) : Error("SingularMatrix", w) {}
};

/// Covariance rank deficiency. Carries the numerical rank and an orthonormal
/// basis of the image so callers can restrict to the nondegenerate subspace.
struct DegenerateCovarianceError : Error {
  DegenerateCovarianceError(const std::string& w, int rank_, Eigen::MatrixXd image_basis_)
      : Error("DegenerateCovariance", w), rank(rank_), image_basis(std::move(image_basis_)) {}
  int rank;
  Eigen::MatrixXd image_basis;  // d x rank, orthonormal columns
};

struct SizeExceededError : Error {
  explicit SizeExceededError(const std::string& w) : Error("SizeExceeded", w) {}
};

struct InfeasibleWeightsError : Error {
  explicit InfeasibleWeightsError(const std::string& w) : Error("InfeasibleWeights", w) {}
};

struct NotSymmetricError : Error {
  explicit NotSymmetricError(const std::string& w) : Error("NotSymmetric", w) {}
};

struct NoConvergenceError : Error {
  NoConvergenceError(const std::string& w, double residual_, int iterations_)
      : Error("NoConvergence", w), residual(residual_), iterations(iterations_) {}
  double residual;
  int iterations;
};

struct UnsupportedGeometryError : Error {
  explicit UnsupportedGeometryError(const std::string& w)
      : Error("UnsupportedGeometry", w) {}
};

struct OutOfRangeError : Error {
  explicit OutOfRangeError(const std::string& w) : Error("OutOfRange", w) {}
};

struct UnstableStepError : Error {
  explicit UnstableStepError(const std::string& w) : Error("UnstableStep", w) {}
};

struct DegenerateEnsembleError : Error {
  explicit DegenerateEnsembleError(const std::string& w)
      : Error("DegenerateEnsemble", w) {}
};

/// Violated operation precondition (bad dimension, invalid range, ...).
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error("Precondition", w) {}
};

}  // namespace covot
