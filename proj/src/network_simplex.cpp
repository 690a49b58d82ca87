#include "covot/network_simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "covot/errors.hpp"

namespace covot {

namespace {

struct Tree {
  std::vector<int> parent;       // parent node, root has -1
  std::vector<int> parent_arc;   // arc id of the edge to the parent
  std::vector<int> pred_dir;     // +1: arc oriented node->parent, -1: parent->node
  std::vector<double> flow;      // flow on the edge to the parent
  std::vector<int> depth;
  std::vector<std::vector<int>> children;

  void detach(int node) {
    auto& sib = children[parent[node]];
    sib.erase(std::find(sib.begin(), sib.end(), node));
  }
};

}  // namespace

TransportationSimplex::Result TransportationSimplex::solve(const Eigen::MatrixXd& sources,
                                                           const Eigen::VectorXd& a,
                                                           const Eigen::MatrixXd& sinks,
                                                           const Eigen::VectorXd& b) {
  const int n = static_cast<int>(sources.rows());
  const int m = static_cast<int>(sinks.rows());
  if (n < 1 || m < 1) throw PreconditionError("TransportationSimplex: empty marginal");
  if (sources.cols() != sinks.cols())
    throw PreconditionError("TransportationSimplex: dimension mismatch");
  if (a.size() != n || b.size() != m)
    throw PreconditionError("TransportationSimplex: weight size mismatch");
  if (std::abs(a.sum() - b.sum()) > 1e-9) {
    std::ostringstream os;
    os << "weight sums differ by " << std::abs(a.sum() - b.sum());
    throw InfeasibleWeightsError(os.str());
  }

  const Eigen::VectorXd sq_src = sources.rowwise().squaredNorm();
  const Eigen::VectorXd sq_snk = sinks.rowwise().squaredNorm();
  auto cost = [&](int i, int j) {
    return sq_src(i) + sq_snk(j) - 2.0 * sources.row(i).dot(sinks.row(j));
  };

  double cost_scale = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost_scale = std::max(cost_scale, cost(i, j));
  const double big = 1.0 + 4.0 * cost_scale;
  const double opt_tol = 1e-11 * std::max(1.0, cost_scale);

  const int num_real = n * m;
  const int root = n + m;
  const int num_nodes = n + m + 1;

  Tree tree;
  tree.parent.assign(num_nodes, -1);
  tree.parent_arc.assign(num_nodes, -1);
  tree.pred_dir.assign(num_nodes, 0);
  tree.flow.assign(num_nodes, 0.0);
  tree.depth.assign(num_nodes, 0);
  tree.children.assign(num_nodes, {});
  std::vector<double> pi(num_nodes, 0.0);

  // Artificial star basis: source_i -> root and root -> sink_j at cost `big`.
  for (int i = 0; i < n; ++i) {
    tree.parent[i] = root;
    tree.parent_arc[i] = num_real + i;
    tree.pred_dir[i] = +1;
    tree.flow[i] = a(i);
    tree.depth[i] = 1;
    tree.children[root].push_back(i);
    pi[i] = big;
  }
  for (int j = 0; j < m; ++j) {
    const int node = n + j;
    tree.parent[node] = root;
    tree.parent_arc[node] = num_real + n + j;
    tree.pred_dir[node] = -1;
    tree.flow[node] = b(j);
    tree.depth[node] = 1;
    tree.children[root].push_back(node);
    pi[node] = -big;
  }

  const int block =
      std::max(64, static_cast<int>(std::sqrt(static_cast<double>(num_real))));
  int scan_pos = 0;

  auto reduced_cost = [&](int arc) {
    const int i = arc / m;
    const int j = arc % m;
    return cost(i, j) - pi[i] + pi[n + j];
  };

  // Entering arc: best (most negative reduced cost) within successive blocks.
  auto find_entering = [&]() -> int {
    int checked = 0;
    while (checked < num_real) {
      int best = -1;
      double best_rc = -opt_tol;
      const int stop = std::min(num_real - checked, block);
      for (int t = 0; t < stop; ++t) {
        const int arc = scan_pos;
        scan_pos = scan_pos + 1 == num_real ? 0 : scan_pos + 1;
        const double rc = reduced_cost(arc);
        if (rc < best_rc) {
          best_rc = rc;
          best = arc;
        }
      }
      checked += stop;
      if (best >= 0) return best;
    }
    return -1;
  };

  std::vector<int> subtree_buf;
  subtree_buf.reserve(num_nodes);

  auto collect_subtree = [&](int top) {
    subtree_buf.clear();
    subtree_buf.push_back(top);
    for (size_t q = 0; q < subtree_buf.size(); ++q)
      for (int c : tree.children[subtree_buf[q]]) subtree_buf.push_back(c);
  };

  const long max_pivots = 2000000L + 200L * (n + m);
  long pivots = 0;

  for (;; ++pivots) {
    if (pivots > max_pivots)
      throw NoConvergenceError("network simplex exceeded pivot budget", 0.0,
                               static_cast<int>(pivots));
    const int e = find_entering();
    if (e < 0) break;
    const int u = e / m;      // tail (source)
    const int v = n + e % m;  // head (sink)

    // Cycle: entering arc u->v plus the tree path v .. lca .. u. Flow moves
    // in the direction u -> v. Arcs traversed toward the lca from v run with
    // the cycle; arcs on u's side run against it.
    double delta = std::numeric_limits<double>::infinity();
    int leave_node = -1;
    int leave_arc_id = std::numeric_limits<int>::max();

    auto consider_leaving = [&](int node, bool decreasing) {
      if (!decreasing) return;
      const double f = tree.flow[node];
      const int id = tree.parent_arc[node];
      if (f < delta - 1e-15 || (std::abs(f - delta) <= 1e-15 && id < leave_arc_id)) {
        delta = f;
        leave_node = node;
        leave_arc_id = id;
      }
    };

    int x = v, y = u;
    while (tree.depth[x] > tree.depth[y]) {
      consider_leaving(x, tree.pred_dir[x] < 0);  // cycle runs x -> parent
      x = tree.parent[x];
    }
    while (tree.depth[y] > tree.depth[x]) {
      consider_leaving(y, tree.pred_dir[y] > 0);  // cycle runs parent -> y
      y = tree.parent[y];
    }
    while (x != y) {
      consider_leaving(x, tree.pred_dir[x] < 0);
      consider_leaving(y, tree.pred_dir[y] > 0);
      x = tree.parent[x];
      y = tree.parent[y];
    }
    if (leave_node < 0)
      throw NoConvergenceError("network simplex: unbounded pivot", 0.0,
                               static_cast<int>(pivots));

    // Apply the flow change along the cycle. On v's side the cycle runs
    // node -> parent, on u's side parent -> node.
    const double theta = delta;
    for (int p = v; p != x; p = tree.parent[p])
      tree.flow[p] += tree.pred_dir[p] > 0 ? theta : -theta;
    for (int p = u; p != x; p = tree.parent[p])
      tree.flow[p] += tree.pred_dir[p] > 0 ? -theta : theta;

    // Basis exchange: drop the leaving edge, re-root the cut subtree at the
    // entering arc's endpoint inside it, and attach it to the other side.
    const double rc_e = reduced_cost(e);
    tree.detach(leave_node);
    tree.parent[leave_node] = -1;
    collect_subtree(leave_node);

    const bool u_inside =
        std::find(subtree_buf.begin(), subtree_buf.end(), u) != subtree_buf.end();
    const int inside = u_inside ? u : v;
    const int outside = u_inside ? v : u;

    for (int node : subtree_buf) pi[node] += u_inside ? rc_e : -rc_e;

    // Reverse the parent relation along the path inside .. leave_node.
    std::vector<int> path;
    for (int p = inside;; p = tree.parent[p]) {
      path.push_back(p);
      if (p == leave_node) break;
    }
    for (size_t t = path.size(); t-- > 1;) {
      const int upper = path[t];
      const int lower = path[t - 1];
      auto& sib = tree.children[upper];
      sib.erase(std::find(sib.begin(), sib.end(), lower));
      tree.parent[upper] = lower;
      tree.parent_arc[upper] = tree.parent_arc[lower];
      tree.pred_dir[upper] = -tree.pred_dir[lower];
      tree.flow[upper] = tree.flow[lower];
      tree.children[lower].push_back(upper);
    }

    tree.parent[inside] = outside;
    tree.parent_arc[inside] = e;
    tree.pred_dir[inside] = inside == u ? +1 : -1;
    tree.flow[inside] = theta;
    tree.children[outside].push_back(inside);

    tree.depth[inside] = tree.depth[outside] + 1;
    collect_subtree(inside);
    for (int node : subtree_buf)
      for (int c : tree.children[node]) tree.depth[c] = tree.depth[node] + 1;
  }

  Result res;
  res.pivots = static_cast<int>(pivots);
  for (int node = 0; node < n + m; ++node) {
    const int arc = tree.parent_arc[node];
    if (arc >= num_real) {
      if (tree.flow[node] > 1e-9)
        throw InfeasibleWeightsError("artificial arc kept positive flow at optimum");
      continue;
    }
    if (tree.flow[node] > 0.0)
      res.entries.push_back({arc / m, arc % m, tree.flow[node]});
  }
  std::sort(res.entries.begin(), res.entries.end(), [&](const Entry& p, const Entry& q) {
    return p.i != q.i ? p.i < q.i : p.j < q.j;
  });
  for (const Entry& en : res.entries) res.cost += en.mass * cost(en.i, en.j);

  const double degen_tol = 1e-9 * std::max(1.0, cost_scale);
  std::vector<char> basic(static_cast<size_t>(num_real), 0);
  for (int node = 0; node < n + m; ++node)
    if (tree.parent_arc[node] >= 0 && tree.parent_arc[node] < num_real)
      basic[tree.parent_arc[node]] = 1;
  for (int arc = 0; arc < num_real && !res.degenerate_optimum; ++arc)
    if (!basic[arc] && std::abs(reduced_cost(arc)) <= degen_tol)
      res.degenerate_optimum = true;

  return res;
}

}  // namespace covot
