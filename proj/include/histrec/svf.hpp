#pragma once

#include <cstdint>
#include <vector>

namespace histrec {

/// 2D stationary velocity field on a regular grid. Component values are in
/// pixel units of the full-resolution frame regardless of the grid
/// resolution; `spacing` is the number of full-resolution pixels per grid
/// step (uniform in both axes).
struct SvfField {
  int height = 0;
  int width = 0;
  double spacing = 1.0;
  /// Two row-major planes: xi1 (horizontal, columns) then xi2 (vertical, rows).
  std::vector<double> data;

  static SvfField zeros(int h, int w, double spacing = 1.0);
  static SvfField constant(int h, int w, double a, double b, double spacing = 1.0);

  int size() const { return height * width; }
  double& x1(int r, int c) { return data[r * width + c]; }
  double& x2(int r, int c) { return data[size() + r * width + c]; }
  double x1(int r, int c) const { return data[r * width + c]; }
  double x2(int r, int c) const { return data[size() + r * width + c]; }

  bool same_shape(const SvfField& o) const {
    return height == o.height && width == o.width && spacing == o.spacing;
  }
  bool finite() const;
  /// Max of per-site Euclidean norms, in pixel units.
  double max_norm() const;
};

/// Dense deformation stored as absolute target coordinates (grid units of its
/// own frame), one value pair per grid site. Identity maps each site to
/// itself exactly.
struct DeformationField {
  int height = 0;
  int width = 0;
  /// Two row-major planes: target column coordinate, then target row coordinate.
  std::vector<double> map;

  static DeformationField identity(int h, int w);

  int size() const { return height * width; }
  double& tc(int r, int c) { return map[r * width + c]; }
  double& tr(int r, int c) { return map[size() + r * width + c]; }
  double tc(int r, int c) const { return map[r * width + c]; }
  double tr(int r, int c) const { return map[size() + r * width + c]; }
};

/// One image of the stack: contrast index (0 = reference), level along the
/// stack, intensities and a binary tissue mask of identical dims.
struct ImageSection {
  int contrast = 0;
  int level = 1;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::vector<std::uint8_t> mask;

  static ImageSection blank(int h, int w, double value = 0.0);
  double at(int r, int c) const { return pixels[r * width + c]; }
};

enum class Interp { bilinear, nearest };

/// Lie exponential by scaling and squaring. steps < 0 selects the smallest s
/// such that the max per-step displacement is below 0.5 grid units.
/// The returned mapping is in grid units of the field's own lattice.
DeformationField svf_exp(const SvfField& v, int steps = -1);

SvfField svf_negate(const SvfField& v);

/// First-order BCH composition: element-wise sum.
SvfField svf_compose_bch1(const SvfField& v, const SvfField& w);

/// Corner-aligned bilinear upsampling of each component; exact on affine fields.
SvfField upsample_svf(const SvfField& v, int target_h, int target_w);

/// Block-mean reduction by an integer factor (partial blocks at the far edges
/// average over the pixels present).
SvfField downsample_svf_block_mean(const SvfField& v, int factor);

/// (outer ∘ inner)(x) = outer(inner(x)); clamp-to-edge sampling of `outer`.
DeformationField compose_deformations(const DeformationField& outer,
                                      const DeformationField& inner);

/// Pull-back resampling: out(x) = img(d(x)). Out-of-bounds samples take
/// `fill`; the mask is always warped with nearest-neighbour and zero fill.
ImageSection warp_image(const ImageSection& img, const DeformationField& d,
                        Interp interp = Interp::bilinear, double fill = 0.0);

/// Max deviation from identity over interior sites (border of `margin` sites
/// excluded), in grid units.
double max_interior_displacement(const DeformationField& d, int margin = 1);

/// Max interior difference of two mappings of identical dims.
double max_interior_difference(const DeformationField& a, const DeformationField& b,
                               int margin = 1);

/// Bilinear sample of a row-major plane with clamp-to-edge.
double sample_bilinear(const double* plane, int h, int w, double r, double c);

}  // namespace histrec
