#include "histrec/lp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace histrec {

std::vector<double> LpProblem::objective_vector() const {
  std::vector<double> c(num_obs + num_latents, 0.0);
  std::fill(c.begin(), c.begin() + num_obs, 1.0);
  return c;
}

std::vector<std::vector<double>> LpProblem::dense_a1() const {
  std::vector<std::vector<double>> A(num_obs, std::vector<double>(num_obs + num_latents, 0.0));
  for (int k = 0; k < num_obs; ++k) {
    A[k][k] = -1.0;
    for (auto& [l, s] : w_rows[k].entries) A[k][num_obs + l] = -s;
  }
  return A;
}

std::vector<std::vector<double>> LpProblem::dense_a2() const {
  std::vector<std::vector<double>> A(num_obs, std::vector<double>(num_obs + num_latents, 0.0));
  for (int k = 0; k < num_obs; ++k) {
    A[k][k] = -1.0;
    for (auto& [l, s] : w_rows[k].entries) A[k][num_obs + l] = s;
  }
  return A;
}

LpProblem assemble_lad_lp(const PathMatrix& W, const std::vector<int>& active_rows,
                          const std::vector<double>& r) {
  if (active_rows.empty()) throw std::invalid_argument("assemble_lad_lp: empty active set");
  if (active_rows.size() != r.size())
    throw std::invalid_argument("assemble_lad_lp: rows/r size mismatch");
  LpProblem p;
  p.num_obs = static_cast<int>(active_rows.size());
  p.num_latents = W.cols;
  p.r = r;
  p.w_rows.reserve(active_rows.size());
  for (int k : active_rows) p.w_rows.push_back(W.row.at(k));
  return p;
}

LpProblem assemble_lad_lp(const PathMatrix& W, const std::vector<double>& r) {
  std::vector<int> all(W.rows);
  for (int k = 0; k < W.rows; ++k) all[k] = k;
  return assemble_lad_lp(W, all, r);
}

namespace {
constexpr double kPivotTol = 1e-10;
constexpr double kDegenTol = 1e-12;
constexpr int kDegenSwitch = 25;     // consecutive degenerate pivots before Bland
constexpr int kRefactorEvery = 800;  // periodic reinversion of the basis kernel
}  // namespace

// Revised simplex specialised to the LAD equality form. The basis always
// consists of (K - q) unit residual columns (+e_i for u_i, -e_i for v_i)
// plus q latent columns (+-W[:,l]); only the q x q kernel over the "free"
// rows (those not covered by a unit column) needs an explicit inverse, so
// each pivot costs O(q^2) with q <= 2L instead of O(K^2).
struct LadSolver::Impl {
  int K = 0;
  int L = 0;
  std::vector<PathRow> rows;
  std::vector<std::vector<std::pair<int, int>>> cols;  // per latent: (row, sign)

  // Basis state.
  std::vector<int> ub;          // +1 u basic, -1 v basic, 0 free row
  std::vector<int> F;           // free rows, position-indexed
  std::vector<int> fpos;        // row -> position in F or -1
  std::vector<std::pair<int, int>> J;  // basic latent columns (l, sigma)
  std::vector<int> jpos;        // latent -> position in J or -1
  Eigen::MatrixXd M;            // inverse of the free-row/latent kernel
  bool has_basis = false;

  // Iterate workspace.
  std::vector<double> r;
  Eigen::VectorXd xt;           // values of basic latent variables
  std::vector<double> xu;       // values of basic residual variables
  std::vector<double> wdot;     // (W_J xt) spread over all rows
  std::vector<double> y;        // simplex multipliers

  Impl(int num_latents, std::vector<PathRow> w_rows)
      : K(static_cast<int>(w_rows.size())), L(num_latents), rows(std::move(w_rows)) {
    cols.assign(L, {});
    for (int i = 0; i < K; ++i)
      for (auto& [l, s] : rows[i].entries) {
        if (l < 0 || l >= L) throw std::invalid_argument("LadSolver: latent index out of range");
        cols[l].push_back({i, s});
      }
    fpos.assign(K, -1);
    jpos.assign(L, -1);
    ub.assign(K, 0);
    xu.assign(K, 0.0);
    wdot.assign(K, 0.0);
    y.assign(K, 0.0);
  }

  int q() const { return static_cast<int>(J.size()); }

  void reset_cold() {
    for (int p = 0; p < q(); ++p) jpos[J[p].first] = -1;
    for (int i : F) fpos[i] = -1;
    J.clear();
    F.clear();
    M.resize(0, 0);
    for (int i = 0; i < K; ++i) ub[i] = r[i] >= 0.0 ? 1 : -1;
    has_basis = true;
  }

  // Rebuilds M from the current structural basis (drift control).
  bool refactor() {
    const int n = q();
    if (n == 0) {
      M.resize(0, 0);
      return true;
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int m = 0; m < n; ++m) {
      auto [l, sigma] = J[m];
      for (auto& [i, s] : cols[l])
        if (fpos[i] >= 0) A(fpos[i], m) = sigma * s;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) return false;
    M = lu.inverse();
    return true;
  }

  void compute_x() {
    const int n = q();
    Eigen::VectorXd rF(n);
    for (int p = 0; p < n; ++p) rF[p] = r[F[p]];
    xt = M * rF;
    std::fill(wdot.begin(), wdot.end(), 0.0);
    for (int m = 0; m < n; ++m) {
      auto [l, sigma] = J[m];
      double coef = sigma * xt[m];
      if (coef == 0.0) continue;
      for (auto& [i, s] : cols[l]) wdot[i] += s * coef;
    }
    for (int i = 0; i < K; ++i) xu[i] = ub[i] ? ub[i] * (r[i] - wdot[i]) : 0.0;
  }

  double objective() const {
    double o = 0.0;
    for (int i = 0; i < K; ++i)
      if (ub[i]) o += xu[i];
    return o;
  }

  void compute_multipliers() {
    const int n = q();
    for (int i = 0; i < K; ++i) y[i] = ub[i];
    if (n == 0) return;
    Eigen::VectorXd g(n);
    for (int m = 0; m < n; ++m) {
      auto [l, sigma] = J[m];
      double acc = 0.0;
      for (auto& [i, s] : cols[l])
        if (ub[i]) acc += ub[i] * s;
      g[m] = sigma * acc;
    }
    Eigen::VectorXd yF = -(M.transpose() * g);
    for (int p = 0; p < n; ++p) y[F[p]] = yF[p];
  }

  // Global variable indices for Bland ordering: u_i -> i, v_i -> K+i,
  // t+_l -> 2K+l, t-_l -> 2K+L+l.
  int unit_var_index(int i, int sign) const { return sign > 0 ? i : K + i; }
  int latent_var_index(int l, int sigma) const { return sigma > 0 ? 2 * K + l : 2 * K + L + l; }

  struct Entering {
    bool found = false;
    bool is_latent = false;
    int row = -1;        // for unit columns
    int latent = -1;     // for latent columns
    int sign = 0;        // +1 u / t+, -1 v / t-
    double reduced = 0.0;
    int var_index = 0;
  };

  Entering price(bool bland, double dtol) const {
    Entering best;
    auto consider = [&](double d, bool is_latent, int row, int latent, int sign, int vidx) {
      if (d >= -dtol) return false;
      if (bland) {
        if (!best.found || vidx < best.var_index) {
          best = {true, is_latent, row, latent, sign, d, vidx};
        }
        return false;
      }
      if (!best.found || d < best.reduced - 1e-15 ||
          (std::abs(d - best.reduced) <= 1e-15 && vidx < best.var_index)) {
        best = {true, is_latent, row, latent, sign, d, vidx};
      }
      return false;
    };
    for (int i : F) {
      consider(1.0 - y[i], false, i, -1, +1, unit_var_index(i, +1));
      consider(1.0 + y[i], false, i, -1, -1, unit_var_index(i, -1));
    }
    for (int l = 0; l < L; ++l) {
      if (jpos[l] >= 0) continue;  // partner of a basic latent prices to zero
      double z = 0.0;
      for (auto& [i, s] : cols[l]) z += y[i] * s;
      consider(-z, true, -1, l, +1, latent_var_index(l, +1));
      consider(+z, true, -1, l, -1, latent_var_index(l, -1));
    }
    return best;
  }

  // One simplex pivot; returns false when an unbounded ray is detected.
  bool pivot(const Entering& e, bool* degenerate) {
    const int n = q();
    // FTRAN: direction of basic variables along the entering column.
    Eigen::VectorXd aF = Eigen::VectorXd::Zero(n);
    if (e.is_latent) {
      for (auto& [i, s] : cols[e.latent])
        if (fpos[i] >= 0) aF[fpos[i]] = e.sign * s;
    } else if (fpos[e.row] >= 0) {
      aF[fpos[e.row]] = e.sign;
    }
    Eigen::VectorXd dt = n > 0 ? Eigen::VectorXd(M * aF) : Eigen::VectorXd();
    // Spread the latent-direction onto all rows.
    std::fill(wdot.begin(), wdot.end(), 0.0);
    for (int m = 0; m < n; ++m) {
      auto [l, sigma] = J[m];
      double coef = sigma * dt[m];
      if (coef == 0.0) continue;
      for (auto& [i, s] : cols[l]) wdot[i] += s * coef;
    }
    // Ratio test with Bland tie-breaking on the leaving variable index.
    double theta = std::numeric_limits<double>::infinity();
    int leave_kind = 0;  // 1 = latent position, 2 = unit row
    int leave_pos = -1, leave_row = -1, leave_vidx = 0;
    for (int m = 0; m < n; ++m) {
      if (dt[m] <= kPivotTol) continue;
      double ratio = std::max(xt[m], 0.0) / dt[m];
      int vidx = latent_var_index(J[m].first, J[m].second);
      if (ratio < theta - 1e-12 || (ratio <= theta + 1e-12 && (leave_pos < 0 || vidx < leave_vidx))) {
        theta = ratio;
        leave_kind = 1;
        leave_pos = m;
        leave_vidx = vidx;
      }
    }
    for (int i = 0; i < K; ++i) {
      if (!ub[i]) continue;
      double a_i = 0.0;
      if (e.is_latent) {
        for (auto& [ri, s] : cols[e.latent])
          if (ri == i) a_i = e.sign * s;
      } else if (e.row == i) {
        a_i = e.sign;
      }
      double du = ub[i] * (a_i - wdot[i]);
      if (du <= kPivotTol) continue;
      double ratio = std::max(xu[i], 0.0) / du;
      int vidx = unit_var_index(i, ub[i]);
      if (ratio < theta - 1e-12 ||
          (ratio <= theta + 1e-12 && (leave_kind == 0 || vidx < leave_vidx))) {
        theta = ratio;
        leave_kind = 2;
        leave_row = i;
        leave_vidx = vidx;
      }
    }
    if (leave_kind == 0) return false;  // unbounded (malformed input)
    *degenerate = theta <= kDegenTol;

    if (e.is_latent && leave_kind == 1) {
      // Column replacement inside the kernel.
      int p = leave_pos;
      double alpha = dt[p];
      Eigen::RowVectorXd mp = M.row(p) / alpha;
      for (int m = 0; m < n; ++m) {
        if (m == p) continue;
        M.row(m).noalias() -= dt[m] * mp;
      }
      M.row(p) = mp;
      jpos[J[p].first] = -1;
      J[p] = {e.latent, e.sign};
      jpos[e.latent] = p;
    } else if (e.is_latent && leave_kind == 2) {
      // Grow: row leave_row becomes free, the entering latent joins the kernel.
      int i2 = leave_row;
      Eigen::RowVectorXd trow = Eigen::RowVectorXd::Zero(n);
      for (auto& [l, s] : rows[i2].entries)
        if (jpos[l] >= 0) trow[jpos[l]] = J[jpos[l]].second * s;
      double a_i2 = 0.0;
      for (auto& [ri, s] : cols[e.latent])
        if (ri == i2) a_i2 = e.sign * s;
      double S = a_i2 - (n > 0 ? trow.dot(dt) : 0.0);
      Eigen::RowVectorXd vrow = n > 0 ? Eigen::RowVectorXd(trow * M) : Eigen::RowVectorXd();
      Eigen::MatrixXd M2(n + 1, n + 1);
      if (n > 0) {
        M2.topLeftCorner(n, n) = M + (dt * vrow) / S;
        M2.topRightCorner(n, 1) = -dt / S;
        M2.bottomLeftCorner(1, n) = -vrow / S;
      }
      M2(n, n) = 1.0 / S;
      M = std::move(M2);
      ub[i2] = 0;
      fpos[i2] = static_cast<int>(F.size());
      F.push_back(i2);
      jpos[e.latent] = static_cast<int>(J.size());
      J.push_back({e.latent, e.sign});
    } else if (!e.is_latent && leave_kind == 1) {
      // Shrink: entering unit column covers its free row; one latent leaves.
      int rho = fpos[e.row];
      int p = leave_pos;
      double h = M(p, rho);
      Eigen::VectorXd fcol = M.col(rho);
      Eigen::RowVectorXd grow = M.row(p);
      Eigen::MatrixXd M2(n - 1, n - 1);
      for (int m = 0, mm = 0; m < n; ++m) {
        if (m == p) continue;
        for (int pp = 0, pn = 0; pp < n; ++pp) {
          if (pp == rho) continue;
          M2(mm, pn) = M(m, pp) - fcol[m] * grow[pp] / h;
          ++pn;
        }
        ++mm;
      }
      M = std::move(M2);
      jpos[J[p].first] = -1;
      J.erase(J.begin() + p);
      for (int m = p; m < static_cast<int>(J.size()); ++m) jpos[J[m].first] = m;
      fpos[e.row] = -1;
      F.erase(F.begin() + rho);
      for (int pp = rho; pp < static_cast<int>(F.size()); ++pp) fpos[F[pp]] = pp;
      ub[e.row] = e.sign;
    } else {
      // Unit-for-unit swap: row replacement in the kernel.
      int i2 = leave_row;
      int rho = fpos[e.row];
      Eigen::RowVectorXd trow = Eigen::RowVectorXd::Zero(n);
      for (auto& [l, s] : rows[i2].entries)
        if (jpos[l] >= 0) trow[jpos[l]] = J[jpos[l]].second * s;
      Eigen::RowVectorXd w = trow * M;
      double beta = w[rho];
      Eigen::VectorXd mcol = M.col(rho);
      for (int pp = 0; pp < n; ++pp) {
        double coef = (w[pp] - (pp == rho ? 1.0 : 0.0)) / beta;
        if (coef != 0.0) M.col(pp).noalias() -= mcol * coef;
      }
      fpos[e.row] = -1;
      ub[e.row] = e.sign;
      F[rho] = i2;
      fpos[i2] = rho;
      ub[i2] = 0;
    }
    return true;
  }

  // Restores primal feasibility of a reused basis for a new rhs by sign
  // flips; every basic variable has an exact negation partner.
  void flip_infeasible() {
    compute_x();
    for (int i = 0; i < K; ++i)
      if (ub[i] && xu[i] < 0.0) ub[i] = -ub[i];
    for (int m = 0; m < q(); ++m)
      if (xt[m] < 0.0) {
        J[m].second = -J[m].second;
        M.row(m) = -M.row(m);
      }
  }

  LpSolution run(const std::vector<double>& rhs, double tol, int max_iters, bool warm) {
    r = rhs;
    if (max_iters < 0) max_iters = 50 * (K + 2 * L);
    if (!warm || !has_basis) {
      reset_cold();
    } else {
      flip_infeasible();
    }
    LpSolution sol;
    int degen_run = 0;
    bool bland = false;
    int since_refactor = 0;
    int iter = 0;
    for (; iter < max_iters; ++iter) {
      compute_x();
      double worst = 0.0;
      for (int i = 0; i < K; ++i)
        if (ub[i]) worst = std::min(worst, xu[i]);
      for (int m = 0; m < q(); ++m) worst = std::min(worst, xt[m]);
      if (worst < -1e-7) {
        // Numerical drift; rebuild the kernel inverse and re-establish
        // feasibility, falling back to a cold basis if that fails.
        if (!refactor()) {
          reset_cold();
        } else {
          flip_infeasible();
        }
        compute_x();
      }
      compute_multipliers();
      Entering e = price(bland, tol);
      if (!e.found) {
        sol.status = LpStatus::optimal;
        break;
      }
      bool degenerate = false;
      if (!pivot(e, &degenerate)) {
        sol.status = LpStatus::unbounded;
        break;
      }
      if (degenerate) {
        if (++degen_run >= kDegenSwitch) bland = true;
      } else {
        degen_run = 0;
        bland = false;
      }
      if (++since_refactor >= kRefactorEvery) {
        refactor();
        since_refactor = 0;
      }
    }
    if (iter >= max_iters) sol.status = LpStatus::iteration_limit;
    sol.iterations = iter;

    compute_x();
    std::vector<double> t(L, 0.0);
    for (int m = 0; m < q(); ++m) t[J[m].first] = J[m].second * xt[m];
    sol.y.assign(K + L, 0.0);
    double obj = 0.0;
    for (int i = 0; i < K; ++i) {
      double fit = 0.0;
      for (auto& [l, s] : rows[i].entries) fit += s * t[l];
      sol.y[i] = std::abs(r[i] - fit);
      obj += sol.y[i];
    }
    for (int l = 0; l < L; ++l) sol.y[K + l] = t[l];
    sol.objective = obj;
    return sol;
  }
};

LadSolver::LadSolver(int num_latents, std::vector<PathRow> rows)
    : impl_(std::make_unique<Impl>(num_latents, std::move(rows))) {}
LadSolver::~LadSolver() = default;
LadSolver::LadSolver(LadSolver&&) noexcept = default;
LadSolver& LadSolver::operator=(LadSolver&&) noexcept = default;

LpSolution LadSolver::solve(const std::vector<double>& r, double tol, int max_iters, bool warm) {
  if (static_cast<int>(r.size()) != impl_->K)
    throw std::invalid_argument("LadSolver::solve: rhs size mismatch");
  return impl_->run(r, tol, max_iters, warm);
}

int LadSolver::num_rows() const { return impl_->K; }
int LadSolver::num_latents() const { return impl_->L; }

// Primal simplex on min sum(u+v) s.t. phi[b]-phi[a] + u - v = r, phi free.
// The basis is a spanning forest T of rows (their residuals are zero and they
// determine phi up to the per-component gauge); every other row has u or v
// basic at |residual|. Everything is recomputed from T each iteration, so the
// iterate is an exact function of the basis and no numerical drift can
// accumulate between pivots.
struct TreeLadSolver::Impl {
  int n = 0;
  int K = 0;
  std::vector<int> arc_a, arc_b;
  // Basis and sticky residual sides (only consulted at exact zero residuals).
  std::vector<char> in_tree;
  std::vector<signed char> side;  // +1 u basic, -1 v basic (rows not in T)
  bool has_basis = false;

  // Per-iteration workspace.
  std::vector<std::vector<int>> adj;  // node -> tree arc indices
  std::vector<int> parent, parc, order;
  std::vector<double> phi, res, down;
  std::vector<double> ytree;          // duals of tree rows
  std::vector<char> in_b;             // cut side marks
  std::vector<std::pair<double, int>> bps;

  Impl(int num_nodes, std::vector<std::pair<int, int>> arcs) : n(num_nodes) {
    K = static_cast<int>(arcs.size());
    arc_a.resize(K);
    arc_b.resize(K);
    for (int k = 0; k < K; ++k) {
      auto [a, b] = arcs[k];
      if (a < 0 || a >= n || b < 0 || b >= n)
        throw std::invalid_argument("TreeLadSolver: node index out of range");
      arc_a[k] = a;
      arc_b[k] = b;
    }
    in_tree.assign(K, 0);
    side.assign(K, +1);
    adj.assign(n, {});
    parent.assign(n, -1);
    parc.assign(n, -1);
    phi.assign(n, 0.0);
    res.assign(K, 0.0);
    down.assign(n, 0.0);
    ytree.assign(K, 0.0);
    in_b.assign(n, 0);
  }

  // Deterministic initial forest: first arc (by index) joining two components.
  void reset_cold(const std::vector<double>& r) {
    std::fill(in_tree.begin(), in_tree.end(), 0);
    std::vector<int> uf(n);
    for (int i = 0; i < n; ++i) uf[i] = i;
    std::function<int(int)> find = [&](int x) {
      while (uf[x] != x) x = uf[x] = uf[uf[x]];
      return x;
    };
    for (int k = 0; k < K; ++k) {
      int ra = find(arc_a[k]), rb = find(arc_b[k]);
      if (ra == rb) continue;
      uf[std::max(ra, rb)] = std::min(ra, rb);
      in_tree[k] = 1;
    }
    for (int k = 0; k < K; ++k) side[k] = r[k] >= 0.0 ? +1 : -1;
    has_basis = true;
  }

  // BFS forest over the current tree arcs; roots are the smallest-index node
  // of each component (phi = 0 there).
  void build_forest() {
    for (auto& a : adj) a.clear();
    for (int k = 0; k < K; ++k)
      if (in_tree[k] && arc_a[k] != arc_b[k]) {
        adj[arc_a[k]].push_back(k);
        adj[arc_b[k]].push_back(k);
      }
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(parc.begin(), parc.end(), -1);
    order.clear();
    std::vector<char> seen(n, 0);
    for (int root = 0; root < n; ++root) {
      if (seen[root]) continue;
      seen[root] = 1;
      size_t head = order.size();
      order.push_back(root);
      while (head < order.size()) {
        int i = order[head++];
        for (int k : adj[i]) {
          int j = arc_a[k] == i ? arc_b[k] : arc_a[k];
          if (seen[j]) continue;
          seen[j] = 1;
          parent[j] = i;
          parc[j] = k;
          order.push_back(j);
        }
      }
    }
  }

  // phi from tree rows, residuals, and sticky sides for the zero residuals.
  // Residuals within ztol of zero are snapped to exactly zero so degenerate
  // ratio-test ties are exact and Bland's rule can break them by index.
  void compute_state(const std::vector<double>& r, double ztol) {
    for (int i : order) {
      if (parent[i] < 0) {
        phi[i] = 0.0;
        continue;
      }
      int k = parc[i];
      phi[i] = arc_b[k] == i ? phi[parent[i]] + r[k] : phi[parent[i]] - r[k];
    }
    for (int k = 0; k < K; ++k) {
      if (in_tree[k]) {
        res[k] = 0.0;
        continue;
      }
      res[k] = r[k] - (phi[arc_b[k]] - phi[arc_a[k]]);
      if (std::abs(res[k]) <= ztol) {
        res[k] = 0.0;  // sticky side kept
        continue;
      }
      side[k] = res[k] > 0.0 ? +1 : -1;
    }
  }

  // Duals of the tree rows from flow conservation at every non-root node:
  // sum over incoming rows of y minus outgoing rows of y vanishes.
  void compute_duals() {
    std::fill(down.begin(), down.end(), 0.0);
    for (int k = 0; k < K; ++k) {
      if (in_tree[k] || arc_a[k] == arc_b[k]) continue;
      down[arc_b[k]] += side[k];
      down[arc_a[k]] -= side[k];
    }
    for (size_t p = order.size(); p-- > 0;) {
      int i = order[p];
      if (parent[i] < 0) continue;
      int k = parc[i];
      ytree[k] = arc_b[k] == i ? -down[i] : down[i];
      // At the parent the same arc has the opposite endpoint role.
      down[parent[i]] += arc_b[k] == i ? -ytree[k] : ytree[k];
    }
  }

  double objective() const {
    double o = 0.0;
    for (int k = 0; k < K; ++k)
      if (!in_tree[k]) o += std::abs(res[k]);
    return o;
  }

  Result run(const std::vector<double>& r, double tol, int max_iters, bool warm) {
    if (max_iters < 0) max_iters = 50 * (K + 2 * n);
    if (!warm || !has_basis) reset_cold(r);
    double rscale = 1.0;
    for (double v : r) rscale = std::max(rscale, std::abs(v));
    const double ztol = tol * rscale;
    Result out;
    int degen_run = 0;
    bool bland = false;
    int iter = 0;
    for (; iter < max_iters; ++iter) {
      build_forest();
      compute_state(r, ztol);
      compute_duals();

      // Pricing over the tree rows (all other reduced costs are >= 0).
      int enter = -1, sigma = 0;
      if (bland) {
        // Bland's entering rule is a total order over variable indices:
        // all u columns (index k) precede all v columns (index K + k).
        for (int k = 0; k < K && enter < 0; ++k)
          if (in_tree[k] && arc_a[k] != arc_b[k] && 1.0 - ytree[k] < -tol) {
            enter = k;
            sigma = +1;
          }
        for (int k = 0; k < K && enter < 0; ++k)
          if (in_tree[k] && arc_a[k] != arc_b[k] && 1.0 + ytree[k] < -tol) {
            enter = k;
            sigma = -1;
          }
      } else {
        double best = -tol;
        for (int k = 0; k < K; ++k) {
          if (!in_tree[k] || arc_a[k] == arc_b[k]) continue;
          double rc_u = 1.0 - ytree[k];
          double rc_v = 1.0 + ytree[k];
          if (rc_u < best) {
            best = rc_u;
            enter = k;
            sigma = +1;
          }
          if (rc_v < best) {
            best = rc_v;
            enter = k;
            sigma = -1;
          }
        }
      }
      if (enter < 0) {
        out.status = LpStatus::optimal;
        break;
      }
      double rc = sigma > 0 ? 1.0 - ytree[enter] : 1.0 + ytree[enter];

      // Cut: component of b_enter once the entering row leaves the forest.
      std::fill(in_b.begin(), in_b.end(), 0);
      {
        std::vector<int> stack{arc_b[enter]};
        in_b[arc_b[enter]] = 1;
        while (!stack.empty()) {
          int i = stack.back();
          stack.pop_back();
          for (int k : adj[i]) {
            if (k == enter) continue;
            int j = arc_a[k] == i ? arc_b[k] : arc_a[k];
            if (in_b[j]) continue;
            in_b[j] = 1;
            stack.push_back(j);
          }
        }
      }

      // Breakpoints: rows crossing the cut whose |residual| shrinks as the
      // entering residual grows by sigma * theta.
      bps.clear();
      for (int k = 0; k < K; ++k) {
        if (in_tree[k]) continue;
        int cross = (in_b[arc_b[k]] ? 1 : 0) - (in_b[arc_a[k]] ? 1 : 0);
        if (cross == 0) continue;
        if (side[k] * sigma * cross >= 0) continue;
        bps.push_back({std::max(side[k] * res[k], 0.0), k});
      }
      std::sort(bps.begin(), bps.end());

      int leave = -1;
      double theta_star = 0.0;
      size_t passed = 0;
      if (bland) {
        // Classic single-breakpoint pivot with Bland's leaving rule: smallest
        // variable index among the blockers at the minimum ratio. This is
        // what guarantees termination under sustained degeneracy.
        if (!bps.empty()) {
          leave = bps[0].second;
          theta_star = bps[0].first;
          int best_vidx = side[leave] > 0 ? leave : K + leave;
          for (size_t p = 1; p < bps.size() && bps[p].first == bps[0].first; ++p) {
            int k = bps[p].second;
            int vidx = side[k] > 0 ? k : K + k;
            if (vidx < best_vidx) {
              best_vidx = vidx;
              leave = k;
            }
          }
        }
      } else {
        // Long step: pass breakpoints while the objective slope stays
        // negative (weighted-median ratio test).
        double slope = rc;
        for (const auto& [theta, k] : bps) {
          slope += 2.0;
          if (slope >= 0.0) {
            leave = k;
            theta_star = theta;
            break;
          }
          ++passed;
        }
      }
      if (leave < 0) {
        out.status = LpStatus::unbounded;
        break;
      }
      // Rows passed strictly before the stop flip to the other side; this is
      // only consulted when a residual later recomputes to exactly zero.
      for (size_t p = 0; p < passed; ++p) side[bps[p].second] = -side[bps[p].second];
      in_tree[enter] = 0;
      side[enter] = static_cast<signed char>(sigma);
      in_tree[leave] = 1;

      if (theta_star <= kDegenTol) {
        if (++degen_run >= kDegenSwitch) bland = true;
      } else {
        degen_run = 0;
        bland = false;
      }
    }
    if (iter >= max_iters) out.status = LpStatus::iteration_limit;
    out.iterations = iter;
    build_forest();
    compute_state(r, ztol);
    out.phi = phi;
    out.objective = objective();
    return out;
  }
};

TreeLadSolver::TreeLadSolver(int num_nodes, std::vector<std::pair<int, int>> arcs)
    : impl_(std::make_unique<Impl>(num_nodes, std::move(arcs))) {}
TreeLadSolver::~TreeLadSolver() = default;
TreeLadSolver::TreeLadSolver(TreeLadSolver&&) noexcept = default;
TreeLadSolver& TreeLadSolver::operator=(TreeLadSolver&&) noexcept = default;

TreeLadSolver::Result TreeLadSolver::solve(const std::vector<double>& r, double tol,
                                           int max_iters, bool warm) {
  if (static_cast<int>(r.size()) != impl_->K)
    throw std::invalid_argument("TreeLadSolver::solve: rhs size mismatch");
  return impl_->run(r, tol, max_iters, warm);
}

int TreeLadSolver::num_rows() const { return impl_->K; }
int TreeLadSolver::num_nodes() const { return impl_->n; }

LpSolution solve_lp(const LpProblem& p, double tol, int max_iters) {
  if (p.num_obs < 1) throw std::invalid_argument("solve_lp: empty problem");
  LadSolver solver(p.num_latents, p.w_rows);
  return solver.solve(p.r, tol, max_iters, false);
}

std::vector<LpSolution> solve_lad_batch(const PathMatrix& W,
                                        const std::vector<std::vector<double>>& r_per_location,
                                        const BatchOptions& opts) {
  std::vector<LpSolution> out;
  out.reserve(r_per_location.size());
  LadSolver solver(W.cols, W.row);
  bool have_prev = false;
  for (const auto& r : r_per_location) {
    bool warm = opts.warm_start && have_prev;
    out.push_back(solver.solve(r, opts.tol, opts.max_iters, warm));
    have_prev = true;
  }
  return out;
}

std::string format_lp(const LpProblem& p) {
  std::ostringstream os;
  os << "LAD linear program: K=" << p.num_obs << " L=" << p.num_latents << "\n";
  os << "minimize c'y, y = [D_1..D_K, t_1..t_L]\n";
  auto print_vec = [&](const char* name, const std::vector<double>& v) {
    os << name << " =";
    for (double x : v) os << " " << x;
    os << "\n";
  };
  print_vec("c", p.objective_vector());
  auto print_mat = [&](const char* name, const std::vector<std::vector<double>>& A,
                       const std::vector<double>& rhs) {
    os << name << " | rhs\n";
    for (size_t k = 0; k < A.size(); ++k) {
      for (double x : A[k]) os << " " << x;
      os << " | " << rhs[k] << "\n";
    }
  };
  std::vector<double> neg_r(p.r.size()), pos_r = p.r;
  for (size_t i = 0; i < p.r.size(); ++i) neg_r[i] = -p.r[i];
  print_mat("A1 (A1 y <= -r)", p.dense_a1(), neg_r);
  print_mat("A2 (A2 y <= +r)", p.dense_a2(), pos_r);
  return os.str();
}

}  // namespace histrec
