#include "histrec/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <thread>

#include "histrec/lp.hpp"

namespace histrec {

double observation_variance(const ObservationEdge& e, const LikelihoodParams& p) {
  double v = e.inter_flag * p.sigma2_inter;
  for (size_t c = 0; c < e.separations.size() && c < p.sigma2_contrast.size(); ++c)
    v += e.separations[c] * p.sigma2_contrast[c];
  return v;
}

namespace {

struct Grid {
  int h = 0, w = 0;
  double spacing = 1.0;
  int nloc() const { return h * w; }
};

Grid check_inputs(const StackGraph& g, const SubgraphMap* sub) {
  if (g.observations.empty()) throw std::invalid_argument("inference: no observations");
  if (g.W.rows != static_cast<int>(g.observations.size()) ||
      g.W.cols != static_cast<int>(g.tree.size()))
    throw std::invalid_argument("inference: W dims inconsistent with graph");
  const SvfField& first = g.observations.front().svf;
  Grid grid{first.height, first.width, first.spacing};
  for (const auto& o : g.observations)
    if (!o.svf.same_shape(first))
      throw std::invalid_argument("inference: observation grids differ");
  if (sub && (sub->height() != grid.h || sub->width() != grid.w ||
              sub->num_rows() != g.W.rows))
    throw std::invalid_argument("inference: subgraph map dims mismatch");
  return grid;
}

LatentSolution make_solution(const StackGraph& g, const Grid& grid, Model model) {
  LatentSolution sol;
  sol.grid_h = grid.h;
  sol.grid_w = grid.w;
  sol.spacing = grid.spacing;
  sol.latents.assign(g.tree.size(), SvfField::zeros(grid.h, grid.w, grid.spacing));
  sol.flags.assign(grid.nloc(), 0);
  sol.params.model = model;
  sol.params.sigma2_inter = 1.0;
  sol.params.sigma2_contrast.assign(g.num_contrasts + 1, 1.0);
  return sol;
}

std::vector<std::uint64_t> location_key(const SubgraphMap* sub, int loc, int K) {
  int blocks = (K + 63) / 64;
  std::vector<std::uint64_t> key(blocks, 0);
  if (!sub) {
    for (int k = 0; k < K; ++k) key[k >> 6] |= (1ull << (k & 63));
  } else {
    const std::uint64_t* p = sub->key(loc);
    std::copy(p, p + blocks, key.begin());
  }
  // Clear padding above K.
  if (K & 63) key.back() &= (1ull << (K & 63)) - 1;
  return key;
}

std::vector<int> key_rows(const std::vector<std::uint64_t>& key, int K) {
  std::vector<int> rows;
  for (int k = 0; k < K; ++k)
    if ((key[k >> 6] >> (k & 63)) & 1u) rows.push_back(k);
  return rows;
}

/// Locations sharing an active row set, solved with one factorisation.
struct Group {
  std::vector<int> locs;
  std::vector<int> rows;
  bool full_rank = true;
};

std::map<std::vector<std::uint64_t>, Group> group_locations(const StackGraph& g,
                                                            const SubgraphMap* sub,
                                                            const Grid& grid) {
  const int K = g.W.rows;
  std::map<std::vector<std::uint64_t>, Group> groups;
  for (int loc = 0; loc < grid.nloc(); ++loc) {
    auto key = location_key(sub, loc, K);
    auto it = groups.find(key);
    if (it == groups.end()) {
      Group grp;
      grp.rows = key_rows(key, K);
      it = groups.emplace(std::move(key), std::move(grp)).first;
    }
    it->second.locs.push_back(loc);
  }
  return groups;
}

Eigen::MatrixXd dense_w(const StackGraph& g, const std::vector<int>& rows) {
  Eigen::MatrixXd Wa = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), g.W.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (auto& [l, s] : g.W.row[rows[i]].entries) Wa(static_cast<int>(i), l) = s;
  return Wa;
}

/// Gathers the observation values of the given rows at one location as a
/// (rows x 2) block: column 0 = xi1 plane, column 1 = xi2 plane.
void gather_r(const StackGraph& g, const std::vector<int>& rows, int loc, double* out,
              int stride) {
  const int n = g.observations.front().svf.size();
  for (size_t i = 0; i < rows.size(); ++i) {
    const SvfField& f = g.observations[rows[i]].svf;
    out[i * stride] = f.data[loc];
    out[i * stride + 1] = f.data[n + loc];
  }
}

struct VarianceModel {
  // Per-row combination weights against theta = [inter, c=0..C].
  Eigen::MatrixXd weights;  // K x (C+2)
  int dim = 0;

  explicit VarianceModel(const StackGraph& g) {
    dim = g.num_contrasts + 2;
    weights = Eigen::MatrixXd::Zero(g.W.rows, dim);
    for (int k = 0; k < g.W.rows; ++k) {
      const auto& e = g.observations[k];
      weights(k, 0) = e.inter_flag;
      for (size_t c = 0; c < e.separations.size(); ++c) weights(k, 1 + c) = e.separations[c];
    }
  }

  Eigen::VectorXd sigma2(const Eigen::VectorXd& theta) const { return weights * theta; }
};

double gaussian_cost_from_stats(const Eigen::VectorXd& sigma2, const Eigen::VectorXd& S,
                                const Eigen::VectorXd& m) {
  double c = 0.0;
  for (int k = 0; k < sigma2.size(); ++k) {
    if (m[k] <= 0.0) continue;
    c += m[k] * std::log(2.0 * M_PI * sigma2[k]) + S[k] / (2.0 * sigma2[k]);
  }
  return c;
}

/// BFGS over phi with theta = floor + exp(phi); returns the best theta found
/// with cost never above the entry cost.
Eigen::VectorXd update_variances(const VarianceModel& vm, const Eigen::VectorXd& S,
                                 const Eigen::VectorXd& m, Eigen::VectorXd theta,
                                 double floor_val) {
  const int d = vm.dim;
  // Map the entry point exactly (theta - floor is >= exp(-40) whenever theta
  // came from a previous call), so descent can only improve on it.
  Eigen::VectorXd phi(d);
  for (int i = 0; i < d; ++i)
    phi[i] = std::log(std::max(theta[i] - floor_val, std::numeric_limits<double>::min()));

  auto cost_at = [&](const Eigen::VectorXd& ph) {
    Eigen::VectorXd th(d);
    for (int i = 0; i < d; ++i) th[i] = floor_val + std::exp(ph[i]);
    return gaussian_cost_from_stats(vm.sigma2(th), S, m);
  };
  auto grad_at = [&](const Eigen::VectorXd& ph) {
    Eigen::VectorXd th(d);
    for (int i = 0; i < d; ++i) th[i] = floor_val + std::exp(ph[i]);
    Eigen::VectorXd s2 = vm.sigma2(th);
    Eigen::VectorXd dc(s2.size());
    for (int k = 0; k < s2.size(); ++k)
      dc[k] = m[k] > 0.0 ? m[k] / s2[k] - S[k] / (2.0 * s2[k] * s2[k]) : 0.0;
    Eigen::VectorXd gth = vm.weights.transpose() * dc;
    Eigen::VectorXd gphi(d);
    for (int i = 0; i < d; ++i) gphi[i] = gth[i] * std::exp(ph[i]);
    return gphi;
  };

  double f = cost_at(phi);
  Eigen::VectorXd grad = grad_at(phi);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  for (int it = 0; it < 60; ++it) {
    if (grad.norm() <= 1e-10 * std::max(1.0, std::abs(f))) break;
    Eigen::VectorXd dir = -(H * grad);
    if (dir.dot(grad) >= 0.0) {
      H.setIdentity();
      dir = -grad;
    }
    double step = 1.0;
    double f_new = f;
    Eigen::VectorXd phi_new = phi;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      phi_new = phi + step * dir;
      // Keep exp() in a sane range.
      for (int i = 0; i < d; ++i) phi_new[i] = std::clamp(phi_new[i], -40.0, 40.0);
      f_new = cost_at(phi_new);
      if (f_new <= f + 1e-4 * step * dir.dot(grad)) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok || f_new >= f) break;
    Eigen::VectorXd grad_new = grad_at(phi_new);
    Eigen::VectorXd sv = phi_new - phi;
    Eigen::VectorXd yv = grad_new - grad;
    double sy = sv.dot(yv);
    if (sy > 1e-12) {
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
      Eigen::MatrixXd V = I - (sv * yv.transpose()) / sy;
      H = V * H * V.transpose() + (sv * sv.transpose()) / sy;
    }
    phi = phi_new;
    f = f_new;
    grad = grad_new;
  }
  Eigen::VectorXd out(d);
  for (int i = 0; i < d; ++i) out[i] = floor_val + std::exp(phi[i]);
  // Never hand back anything worse than the entry point.
  if (gaussian_cost_from_stats(vm.sigma2(out), S, m) >
      gaussian_cost_from_stats(vm.sigma2(theta), S, m))
    return theta;
  return out;
}

void run_indexed(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int t = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (int w = 0; w < t; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += t) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

LatentSolution infer_gaussian(const StackGraph& g, const SubgraphMap* sub,
                              const InferOptions& opts) {
  Grid grid = check_inputs(g, sub);
  const int K = g.W.rows, L = g.W.cols;
  LatentSolution sol = make_solution(g, grid, Model::gaussian);
  VarianceModel vm(g);

  auto groups = group_locations(g, sub, grid);
  // Per-row active location counts (|Omega_k|).
  Eigen::VectorXd m = Eigen::VectorXd::Zero(K);
  for (auto& [key, grp] : groups) {
    if (grp.rows.empty()) {
      for (int loc : grp.locs) sol.flags[loc] |= locflag::skipped;
      continue;
    }
    for (int k : grp.rows) m[k] += static_cast<double>(grp.locs.size());
  }

  // Precompute dense W blocks, rank status and the stacked R matrix per group.
  struct GroupData {
    Group* grp;
    Eigen::MatrixXd Wa;
    Eigen::MatrixXd R;  // ka x (2 * nloc)
  };
  std::vector<GroupData> gds;
  for (auto& [key, grp] : groups) {
    if (grp.rows.empty()) continue;
    GroupData gd;
    gd.grp = &grp;
    gd.Wa = dense_w(g, grp.rows);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gd.Wa);
    grp.full_rank = lu.rank() == L;
    if (!grp.full_rank)
      for (int loc : grp.locs) sol.flags[loc] |= locflag::ridge;
    gd.R.resize(static_cast<int>(grp.rows.size()), 2 * static_cast<int>(grp.locs.size()));
    for (size_t j = 0; j < grp.locs.size(); ++j) {
      std::vector<double> buf(grp.rows.size() * 2);
      gather_r(g, grp.rows, grp.locs[j], buf.data(), 2);
      for (size_t i = 0; i < grp.rows.size(); ++i) {
        gd.R(static_cast<int>(i), 2 * static_cast<int>(j)) = buf[2 * i];
        gd.R(static_cast<int>(i), 2 * static_cast<int>(j) + 1) = buf[2 * i + 1];
      }
    }
    gds.push_back(std::move(gd));
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Ones(vm.dim);
  double prev_cost = std::numeric_limits<double>::infinity();
  sol.converged = false;
  const int n = grid.nloc();

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    Eigen::VectorXd sigma2 = vm.sigma2(theta);
    for (int k = 0; k < K; ++k)
      if (sigma2[k] <= 0.0)
        throw std::invalid_argument("infer_gaussian: non-positive observation variance");

    // (a) closed-form latent update per group.
    Eigen::VectorXd S = Eigen::VectorXd::Zero(K);
    for (auto& gd : gds) {
      const auto& rows = gd.grp->rows;
      Eigen::VectorXd d(rows.size());
      for (size_t i = 0; i < rows.size(); ++i) d[static_cast<int>(i)] = 1.0 / sigma2[rows[i]];
      Eigen::MatrixXd WtD = gd.Wa.transpose() * d.asDiagonal();
      Eigen::MatrixXd N = WtD * gd.Wa;
      if (!gd.grp->full_rank) N.diagonal().array() += opts.ridge;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(N);
      Eigen::MatrixXd T = ldlt.solve(WtD * gd.R);  // L x (2*nloc)
      Eigen::MatrixXd E = gd.R - gd.Wa * T;
      for (size_t i = 0; i < rows.size(); ++i)
        S[rows[i]] += E.row(static_cast<int>(i)).squaredNorm();
      for (size_t j = 0; j < gd.grp->locs.size(); ++j) {
        int loc = gd.grp->locs[j];
        for (int l = 0; l < L; ++l) {
          sol.latents[l].data[loc] = T(l, 2 * static_cast<int>(j));
          sol.latents[l].data[n + loc] = T(l, 2 * static_cast<int>(j) + 1);
        }
      }
    }
    double cost = gaussian_cost_from_stats(sigma2, S, m);

    // (b) variance update by quasi-Newton descent on log-variances.
    if (!opts.fixed_variances) {
      theta = update_variances(vm, S, m, theta, opts.var_floor);
      cost = gaussian_cost_from_stats(vm.sigma2(theta), S, m);
    }

    if (!sol.cost_history.empty() &&
        cost > sol.cost_history.back() + 1e-9 * std::max(1.0, std::abs(sol.cost_history.back())))
      throw std::logic_error("infer_gaussian: cost increased across outer iterations");
    sol.cost_history.push_back(cost);
    sol.final_cost = cost;

    if (opts.fixed_variances) {
      sol.converged = true;
      break;
    }
    if (std::isfinite(prev_cost) &&
        std::abs(prev_cost - cost) <= opts.tol * std::max(1.0, std::abs(prev_cost))) {
      sol.converged = true;
      break;
    }
    prev_cost = cost;
  }
  if (!sol.converged && !opts.fixed_variances)
    for (auto& f : sol.flags) f |= locflag::nonconverged;

  sol.params.sigma2_inter = theta[0];
  sol.params.sigma2_contrast.assign(theta.data() + 1, theta.data() + vm.dim);
  return sol;
}

LatentSolution infer_laplacian(const StackGraph& g, const SubgraphMap* sub,
                               const InferOptions& opts) {
  Grid grid = check_inputs(g, sub);
  const int K = g.W.rows, L = g.W.cols;
  LatentSolution sol = make_solution(g, grid, Model::laplacian);
  const int n = grid.nloc();

  // Every path-matrix row telescopes to a difference of two node potentials,
  // so each per-location LP is solved by the tree-structured network solver.
  std::map<NodeId, int> nidx;
  for (size_t i = 0; i < g.nodes.size(); ++i) nidx.emplace(g.nodes[i], static_cast<int>(i));
  const int num_nodes = static_cast<int>(g.nodes.size());
  std::vector<std::pair<int, int>> arc_of(K);
  for (int k = 0; k < K; ++k)
    arc_of[k] = {nidx.at(g.observations[k].from), nidx.at(g.observations[k].to)};
  std::vector<std::pair<int, int>> edge_nodes(L);
  for (const auto& e : g.tree) edge_nodes[e.index] = {nidx.at(e.from), nidx.at(e.to)};

  // Warm-start chains: fixed-size blocks of grid rows, processed row-major
  // inside a block. The partition does not depend on the thread count.
  const int rows_per_chain = std::max(1, opts.warm_chain_rows);
  const int num_chains = (grid.h + rows_per_chain - 1) / rows_per_chain;

  std::vector<double> abs_resid(num_chains, 0.0);
  std::vector<long long> solved(num_chains, 0);
  std::vector<long long> pivots(num_chains, 0);

  auto run_chain = [&](int chain) {
    // One solver per distinct active set and axis within the chain.
    std::map<std::vector<std::uint64_t>, std::array<std::unique_ptr<TreeLadSolver>, 2>> solvers;
    std::map<std::vector<std::uint64_t>, std::array<bool, 2>> primed;
    int r0 = chain * rows_per_chain;
    int r1 = std::min(r0 + rows_per_chain, grid.h);
    for (int r = r0; r < r1; ++r)
      for (int c = 0; c < grid.w; ++c) {
        int loc = r * grid.w + c;
        auto key = location_key(sub, loc, K);
        auto rows = key_rows(key, K);
        if (rows.empty()) {
          sol.flags[loc] |= locflag::skipped;
          continue;
        }
        auto& sl = solvers[key];
        auto& pr = primed.emplace(key, std::array<bool, 2>{false, false}).first->second;
        if (!sl[0]) {
          std::vector<std::pair<int, int>> arcs;
          arcs.reserve(rows.size());
          for (int k : rows) arcs.push_back(arc_of[k]);
          sl[0] = std::make_unique<TreeLadSolver>(num_nodes, arcs);
          sl[1] = std::make_unique<TreeLadSolver>(num_nodes, arcs);
        }
        for (int axis = 0; axis < 2; ++axis) {
          std::vector<double> r_loc(rows.size());
          for (size_t i = 0; i < rows.size(); ++i) {
            const SvfField& f = g.observations[rows[i]].svf;
            r_loc[i] = axis == 0 ? f.data[loc] : f.data[n + loc];
          }
          bool warm = opts.warm_start && pr[axis];
          TreeLadSolver::Result lps = sl[axis]->solve(r_loc, opts.lp_tol, opts.lp_max_iters, warm);
          pr[axis] = true;
          pivots[chain] += lps.iterations;
          if (lps.status != LpStatus::optimal) {
            sol.flags[loc] |= locflag::lp_fallback;
            // Gaussian closed form with unit variances for this location/axis.
            Eigen::MatrixXd Wa = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), L);
            for (size_t i = 0; i < rows.size(); ++i)
              for (auto& [l, s] : g.W.row[rows[i]].entries) Wa(static_cast<int>(i), l) = s;
            Eigen::MatrixXd N = Wa.transpose() * Wa;
            N.diagonal().array() += opts.ridge;
            Eigen::VectorXd rv =
                Eigen::Map<const Eigen::VectorXd>(r_loc.data(), static_cast<int>(r_loc.size()));
            Eigen::VectorXd t = Eigen::LDLT<Eigen::MatrixXd>(N).solve(Wa.transpose() * rv);
            for (int l = 0; l < L; ++l)
              sol.latents[l].data[axis == 0 ? loc : n + loc] = t[l];
            Eigen::VectorXd resid = rv - Wa * t;
            abs_resid[chain] += resid.cwiseAbs().sum();
            continue;
          }
          for (int l = 0; l < L; ++l)
            sol.latents[l].data[axis == 0 ? loc : n + loc] =
                lps.phi[edge_nodes[l].second] - lps.phi[edge_nodes[l].first];
          abs_resid[chain] += lps.objective;
        }
        ++solved[chain];
      }
  };

  run_indexed(num_chains, opts.threads, run_chain);

  double total_abs = 0.0;
  long long total_solved = 0, total_pivots = 0;
  for (int i = 0; i < num_chains; ++i) {
    total_abs += abs_resid[i];
    total_solved += solved[i];
    total_pivots += pivots[i];
  }
  sol.final_cost = total_abs;
  sol.cost_history.push_back(total_abs);
  sol.lp_iterations = static_cast<int>(total_pivots);
  sol.params.b = total_solved > 0 ? total_abs / (2.0 * K * static_cast<double>(total_solved))
                                  : 1.0;
  return sol;
}

double evaluate_cost(Model model, const StackGraph& g, const std::vector<SvfField>& latents,
                     const LikelihoodParams& params, const SubgraphMap* sub) {
  Grid grid = check_inputs(g, sub);
  const int K = g.W.rows;
  const int n = grid.nloc();
  if (latents.size() != g.tree.size())
    throw std::invalid_argument("evaluate_cost: latent count mismatch");

  Eigen::VectorXd S = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(K);
  double l1 = 0.0;
  for (int loc = 0; loc < n; ++loc) {
    for (int k = 0; k < K; ++k) {
      if (sub && !sub->active(loc, k)) continue;
      m[k] += 1.0;
      for (int axis = 0; axis < 2; ++axis) {
        int ix = axis == 0 ? loc : n + loc;
        double fit = 0.0;
        for (auto& [l, s] : g.W.row[k].entries) fit += s * latents[l].data[ix];
        double e = g.observations[k].svf.data[ix] - fit;
        S[k] += e * e;
        l1 += std::abs(e);
      }
    }
  }
  if (model == Model::laplacian) return l1;
  Eigen::VectorXd sigma2(K);
  for (int k = 0; k < K; ++k) sigma2[k] = observation_variance(g.observations[k], params);
  return gaussian_cost_from_stats(sigma2, S, m);
}

std::vector<std::pair<NodeId, SvfField>> extract_reconstruction_transforms(
    const StackGraph& g, const LatentSolution& sol) {
  std::vector<std::pair<NodeId, SvfField>> out;
  for (const auto& e : g.tree)
    if (e.is_spoke()) out.push_back({e.to, sol.latents[e.index]});
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

}  // namespace histrec
