#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histrec/svf.hpp"

namespace histrec {

/// Per-pixel deviation e(x) = truth(x) - estimate(x), defined only where
/// `valid` is set (intersection of reference and registered domains).
struct ErrorField {
  int height = 0;
  int width = 0;
  std::vector<double> ec;  // column-component plane
  std::vector<double> er;  // row-component plane
  std::vector<std::uint8_t> valid;

  int size() const { return height * width; }
  int valid_count() const;
};

struct SliceMetrics {
  int contrast = 0;
  int level = 0;
  double mean_norm = 0.0;  // mean error norm over the valid domain
  int valid_pixels = 0;
  bool excluded = false;  // outlier-flagged or empty domain
};

struct ErrorReport {
  double e_within = 0.0;   // intra-slice error E_W
  double e_between = 0.0;  // inter-slice consistency error E_B
  std::vector<SliceMetrics> slices;
  int excluded_slices = 0;
};

ErrorField pixel_error(const DeformationField& truth, const DeformationField& est,
                       const std::vector<std::uint8_t>& domain);

/// E_W: per-slice mean of pixel error norms, then mean over slices. Slices
/// with an empty valid domain are excluded from the average.
double intra_slice_error(const std::vector<ErrorField>& errors);

/// E_B: mean over consecutive slice pairs of the mean norm of e_n - e_{n+1},
/// evaluated on the intersection of the two slices' valid domains.
double inter_slice_error(const std::vector<ErrorField>& errors);

/// Numerical inverse by fixed-point iteration on the displacement (20
/// iterations or max update below 1e-3 px). `converged` marks pixels where
/// the round-trip residual is within `tol_px`.
DeformationField invert_deformation(const DeformationField& d, int max_iters = 20,
                                    double tol_px = 1e-3,
                                    std::vector<std::uint8_t>* converged = nullptr);

/// Cross-contrast error per slice: phi^{c,c'} = (phi^c)^-1 o phi^{c'}, for
/// truth and estimate, subtracted over the given domain. Pixels where the
/// truth inversion does not converge are dropped from the domain.
ErrorField cross_contrast_error(const DeformationField& truth_c,
                                const DeformationField& truth_c2,
                                const DeformationField& est_c, const DeformationField& est_c2,
                                const std::vector<std::uint8_t>& domain);

/// Report assembly from per-slice error fields ordered along the stack.
ErrorReport make_report(const std::vector<ErrorField>& errors,
                        const std::vector<std::pair<int, int>>& slice_ids);

std::string report_to_csv(const ErrorReport& r);
std::string report_to_json(const ErrorReport& r);

}  // namespace histrec
