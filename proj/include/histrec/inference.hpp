#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "histrec/graph.hpp"
#include "histrec/svf.hpp"

namespace histrec {

enum class Model { gaussian, laplacian };

/// Likelihood parameters theta. The per-observation variance is the linear
/// combination sigma2_k = c_k * sigma2_inter + sum_c d_{k,c} * sigma2_contrast[c].
/// The Laplace scale b is shared across registrations and reported only.
struct LikelihoodParams {
  Model model = Model::gaussian;
  double sigma2_inter = 1.0;
  std::vector<double> sigma2_contrast;  // size C+1
  double b = 1.0;
};

double observation_variance(const ObservationEdge& e, const LikelihoodParams& p);

struct InferOptions {
  double tol = 1e-6;     // relative cost-change stop for coordinate descent
  int max_outer = 100;
  bool fixed_variances = false;
  double var_floor = 1e-6;  // px^2
  double ridge = 1e-8;      // Tikhonov fallback at rank-deficient locations
  double lp_tol = 1e-9;
  int lp_max_iters = -1;
  bool warm_start = true;
  int threads = 1;
  /// Grid rows per warm-start chain; fixed so results are independent of the
  /// parallelism degree.
  int warm_chain_rows = 8;
};

namespace locflag {
constexpr std::uint8_t skipped = 1;       // empty subgraph, latents left at zero
constexpr std::uint8_t ridge = 2;         // rank-deficient active W, ridge solve
constexpr std::uint8_t lp_fallback = 4;   // LP failed, Gaussian unit-variance fallback
constexpr std::uint8_t nonconverged = 8;
}  // namespace locflag

struct LatentSolution {
  int grid_h = 0, grid_w = 0;
  double spacing = 1.0;
  std::vector<SvfField> latents;  // one control-grid field per tree edge
  std::vector<std::uint8_t> flags;  // per location, locflag bits
  LikelihoodParams params;
  double final_cost = 0.0;
  std::vector<double> cost_history;  // Gaussian: cost after each outer iteration
  bool converged = true;
  int lp_iterations = 0;  // Laplacian: total simplex pivots
};

/// Everything inference needs about one slab: nodes, canonical tree,
/// observation edges carrying control-grid SVFs, and the path matrix.
struct StackGraph {
  std::vector<NodeId> nodes;
  std::vector<TreeEdge> tree;
  std::vector<ObservationEdge> observations;
  PathMatrix W;
  int num_contrasts = 0;
};

/// MAP estimate under the Gaussian likelihood: coordinate descent between the
/// closed-form weighted least-squares latent update and a quasi-Newton step
/// on log-variances. The cost is non-increasing across outer iterations.
LatentSolution infer_gaussian(const StackGraph& g, const SubgraphMap* sub,
                              const InferOptions& opts);

/// MAP estimate under the Laplacian likelihood: one LAD linear program per
/// location and axis. The Laplace scale is reported post hoc.
LatentSolution infer_laplacian(const StackGraph& g, const SubgraphMap* sub,
                               const InferOptions& opts);

/// Exact objective value for the given latents and parameters (Gaussian
/// negative log-likelihood up to constants, or the l1 cost).
double evaluate_cost(Model model, const StackGraph& g, const std::vector<SvfField>& latents,
                     const LikelihoodParams& params, const SubgraphMap* sub);

/// Spoke-edge latents only (the transforms used for reconstruction), ordered
/// by (contrast asc, level asc).
std::vector<std::pair<NodeId, SvfField>> extract_reconstruction_transforms(
    const StackGraph& g, const LatentSolution& sol);

}  // namespace histrec
