#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "histrec/graph.hpp"

namespace histrec {

/// Least-absolute-deviations linear program for one spatial location and
/// axis, in the standard inequality form
///   min c'y   s.t.  A1 y <= -r,  A2 y <= r,  D >= 0, t free,
/// with y = [D_1..D_K, t_1..t_L], c = [1_K; 0_L], A1 = [-I_K, -W],
/// A2 = [-I_K, +W]. W is kept as signed sparse rows; the dense constraint
/// blocks are materialised only for debug dumps.
struct LpProblem {
  int num_obs = 0;      // K (active rows)
  int num_latents = 0;  // L
  std::vector<PathRow> w_rows;
  std::vector<double> r;

  std::vector<double> objective_vector() const;
  std::vector<std::vector<double>> dense_a1() const;
  std::vector<std::vector<double>> dense_a2() const;
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpSolution {
  std::vector<double> y;  // (K+L): deviations, then latents
  double objective = 0.0;
  LpStatus status = LpStatus::iteration_limit;
  int iterations = 0;

  std::vector<double> latents(int num_latents) const {
    return std::vector<double>(y.end() - num_latents, y.end());
  }
};

/// Builds the LAD LP for a subset of observation rows. `active_rows` indexes
/// rows of W; `r` is aligned with `active_rows`. Throws on an empty set.
LpProblem assemble_lad_lp(const PathMatrix& W, const std::vector<int>& active_rows,
                          const std::vector<double>& r);
LpProblem assemble_lad_lp(const PathMatrix& W, const std::vector<double>& r);

/// Primal revised simplex on the equivalent equality form
///   min 1'(u+v)  s.t.  W t + u - v = r,  u, v >= 0,  t = t+ - t-.
/// Deterministic pivoting: steepest (Dantzig) pricing with smallest-index tie
/// breaks, switching to Bland's rule under degeneracy stalls. max_iters < 0
/// selects the default cap 50*(K + 2L).
LpSolution solve_lp(const LpProblem& p, double tol = 1e-9, int max_iters = -1);

/// Reusable solver for repeated LAD solves sharing one row structure. The
/// basis is kept between calls; warm solves restore primal feasibility by
/// sign flips (u<->v, t+<->t-) and continue pivoting from there.
class LadSolver {
public:
  LadSolver(int num_latents, std::vector<PathRow> rows);
  ~LadSolver();
  LadSolver(LadSolver&&) noexcept;
  LadSolver& operator=(LadSolver&&) noexcept;

  /// Solves for a new right-hand side. `warm` reuses the previous basis.
  LpSolution solve(const std::vector<double>& r, double tol = 1e-9, int max_iters = -1,
                   bool warm = false);

  int num_rows() const;
  int num_latents() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Specialised LAD solver for rows of potential-difference form
///   r_k ~ phi[b_k] - phi[a_k]
/// over a node set, which is exactly the shape every spanning-tree path
/// matrix reduces to (each observation row telescopes to a difference of two
/// node potentials). Runs a primal network simplex whose basis is a spanning
/// forest of interpolated rows; each pivot costs O(K + n) instead of the
/// O(L^2) kernel updates of the generic solver, and the ratio test passes
/// whole runs of breakpoints at once (weighted-median step).
class TreeLadSolver {
public:
  /// Arc k fits r_k against phi[arcs[k].second] - phi[arcs[k].first].
  /// Disconnected components are gauged independently (phi = 0 at the
  /// smallest-index node of each component).
  TreeLadSolver(int num_nodes, std::vector<std::pair<int, int>> arcs);
  ~TreeLadSolver();
  TreeLadSolver(TreeLadSolver&&) noexcept;
  TreeLadSolver& operator=(TreeLadSolver&&) noexcept;

  struct Result {
    std::vector<double> phi;  // one potential per node
    double objective = 0.0;
    LpStatus status = LpStatus::iteration_limit;
    int iterations = 0;
  };

  /// Solves for a new right-hand side. `warm` keeps the previous spanning
  /// forest as the starting basis.
  Result solve(const std::vector<double>& r, double tol = 1e-9, int max_iters = -1,
               bool warm = false);

  int num_rows() const;
  int num_nodes() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct BatchOptions {
  bool warm_start = false;
  double tol = 1e-9;
  int max_iters = -1;
};

/// Independent LAD solves over locations sharing the full row set of W.
/// With warm_start = false every location is solved exactly as solve_lp
/// would. One failed location is reported in its status, not propagated.
std::vector<LpSolution> solve_lad_batch(const PathMatrix& W,
                                        const std::vector<std::vector<double>>& r_per_location,
                                        const BatchOptions& opts = {});

/// Plain-text tabular dump of the LP (objective, A1, A2, right-hand sides).
std::string format_lp(const LpProblem& p);

}  // namespace histrec
