#pragma once

#include <Eigen/Dense>
#include <vector>

namespace covot {

/// Exact solver for the dense transportation problem
///   min sum_ij f_ij |x_i - y_j|^2   s.t. row sums = a, column sums = b,
/// by a primal network simplex on the complete bipartite graph.
///
/// Pivoting is deterministic: block search for the entering arc with ties
/// broken by the smallest arc id, and lexicographic (smallest arc id) choice
/// of the leaving arc among minimum-ratio candidates. Runs are reproducible
/// bit for bit on identical inputs.
class TransportationSimplex {
 public:
  struct Entry {
    int i;
    int j;
    double mass;
  };

  struct Result {
    std::vector<Entry> entries;
    double cost = 0.0;
    int pivots = 0;
    /// True when a nonbasic arc with zero reduced cost exists at the optimum,
    /// i.e. another optimal basis (plan) is available.
    bool degenerate_optimum = false;
  };

  /// `sources` is n x d, `sinks` is m x d; `a` and `b` are the positive
  /// marginal weights (must sum to the same total within 1e-9).
  Result solve(const Eigen::MatrixXd& sources, const Eigen::VectorXd& a,
               const Eigen::MatrixXd& sinks, const Eigen::VectorXd& b);
};

}  // namespace covot
