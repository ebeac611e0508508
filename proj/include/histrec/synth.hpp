#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "histrec/graph.hpp"
#include "histrec/rng.hpp"
#include "histrec/svf.hpp"

namespace histrec {

struct SynthConfig {
  int control_rows = 9;
  int control_cols = 9;
  double sigma_lo = 3.0;  // px
  double sigma_hi = 7.0;  // px
  double outlier_fraction = 0.0;
  std::vector<int> outlier_angles{90, 180, 270};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Synthetic ground truth: one deformation per histology slice plus outlier
/// flags. Flagged slices are excluded from evaluation.
struct GroundTruth {
  std::map<NodeId, DeformationField> deformations;
  std::map<NodeId, double> sigmas;  // drawn control-value std per slice
  std::set<NodeId> outliers;
};

/// Per-slice ground-truth deformation: control displacements drawn i.i.d.
/// N(0, sigma^2) with sigma ~ U[sigma_lo, sigma_hi] once per slice, resized to
/// the image with cubic B-spline interpolation. Returned as an absolute
/// mapping in pixel units of the image frame.
DeformationField synth_deformation(const SynthConfig& cfg, int img_h, int img_w, Rng& rng);

/// Latent-truth SVF on the control grid: i.i.d. N(0, sigma^2) components with
/// sigma ~ U[sigma_lo, sigma_hi] drawn once per field.
SvfField synth_svf(const SynthConfig& cfg, int grid_h, int grid_w, double spacing, Rng& rng);

enum class NoiseLaw { none, gaussian, laplace };

/// Rotates a slice about the image centre by 90/180/270 degrees (index
/// remapping, exact). Throws on other angles or, for 90/270, non-square dims.
ImageSection rotate_section(const ImageSection& img, int angle_deg);

/// Rotates round(fraction*N) slices per histology contrast, chosen without
/// replacement independently per contrast, by an angle uniformly drawn from
/// cfg.outlier_angles. Flags are recorded in the returned set.
std::set<NodeId> inject_outliers(std::map<NodeId, ImageSection>& stack, const SynthConfig& cfg,
                                 std::uint64_t seed);

/// Materialises R_k = sum_l W_kl T_l + zeta_k on the control grid, with zeta
/// i.i.d. per site and axis under the chosen law. Rows in `outlier_rows` are
/// replaced by uniform fields in [-50, 50] px. Observation SVFs are written in
/// place; each row draws from its own RNG stream.
void synthesize_observations(std::vector<ObservationEdge>& observations, const PathMatrix& W,
                             const std::vector<SvfField>& latent_truth, NoiseLaw law,
                             double noise_param, const std::set<int>& outlier_rows,
                             std::uint64_t seed);

/// Draws round(fraction*K) distinct observation row indices.
std::set<int> pick_outlier_rows(int num_rows, double fraction, std::uint64_t seed);

/// Cubic B-spline upsampling of a control lattice of displacements to image
/// dims (corner-aligned uniform knots, clamped ends). Exposed for testing.
std::vector<double> bspline_resize(const std::vector<double>& control, int ch, int cw,
                                   int out_h, int out_w);

}  // namespace histrec
