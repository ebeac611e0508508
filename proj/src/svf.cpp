#include "histrec/svf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace histrec {

SvfField SvfField::zeros(int h, int w, double spacing) {
  SvfField v;
  v.height = h;
  v.width = w;
  v.spacing = spacing;
  v.data.assign(static_cast<size_t>(h) * w * 2, 0.0);
  return v;
}

SvfField SvfField::constant(int h, int w, double a, double b, double spacing) {
  SvfField v = zeros(h, w, spacing);
  std::fill(v.data.begin(), v.data.begin() + v.size(), a);
  std::fill(v.data.begin() + v.size(), v.data.end(), b);
  return v;
}

bool SvfField::finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

double SvfField::max_norm() const {
  double m = 0.0;
  for (int i = 0; i < size(); ++i)
    m = std::max(m, std::hypot(data[i], data[size() + i]));
  return m;
}

DeformationField DeformationField::identity(int h, int w) {
  DeformationField d;
  d.height = h;
  d.width = w;
  d.map.resize(static_cast<size_t>(h) * w * 2);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      d.map[static_cast<size_t>(r) * w + c] = c;
      d.map[static_cast<size_t>(h) * w + static_cast<size_t>(r) * w + c] = r;
    }
  return d;
}

ImageSection ImageSection::blank(int h, int w, double value) {
  ImageSection s;
  s.height = h;
  s.width = w;
  s.pixels.assign(static_cast<size_t>(h) * w, value);
  s.mask.assign(static_cast<size_t>(h) * w, 1);
  return s;
}

double sample_bilinear(const double* plane, int h, int w, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(h - 1));
  c = std::clamp(c, 0.0, static_cast<double>(w - 1));
  int r0 = static_cast<int>(r);
  int c0 = static_cast<int>(c);
  int r1 = std::min(r0 + 1, h - 1);
  int c1 = std::min(c0 + 1, w - 1);
  double fr = r - r0, fc = c - c0;
  double top = plane[r0 * w + c0] * (1.0 - fc) + plane[r0 * w + c1] * fc;
  double bot = plane[r1 * w + c0] * (1.0 - fc) + plane[r1 * w + c1] * fc;
  return top * (1.0 - fr) + bot * fr;
}

static void validate(const SvfField& v, const char* op) {
  if (v.height <= 0 || v.width <= 0)
    throw std::invalid_argument(std::string(op) + ": empty field");
  if (v.spacing <= 0.0) throw std::invalid_argument(std::string(op) + ": spacing <= 0");
  if (v.data.size() != static_cast<size_t>(v.height) * v.width * 2)
    throw std::invalid_argument(std::string(op) + ": bad data length");
  if (!v.finite()) throw std::invalid_argument(std::string(op) + ": non-finite values");
}

DeformationField svf_exp(const SvfField& v, int steps) {
  validate(v, "svf_exp");
  const int h = v.height, w = v.width;
  const int n = h * w;

  // Work in grid units so the step criterion is resolution independent.
  std::vector<double> u1(n), u2(n);
  double maxmag = 0.0;
  for (int i = 0; i < n; ++i) {
    u1[i] = v.data[i] / v.spacing;
    u2[i] = v.data[n + i] / v.spacing;
    maxmag = std::max(maxmag, std::hypot(u1[i], u2[i]));
  }
  int s = steps;
  if (s < 0) {
    s = 0;
    double m = maxmag;
    while (m >= 0.5 && s < 60) {
      m *= 0.5;
      ++s;
    }
  }
  const double scale = std::ldexp(1.0, -s);
  std::vector<double> d1(n), d2(n);
  for (int i = 0; i < n; ++i) {
    d1[i] = u1[i] * scale;
    d2[i] = u2[i] * scale;
  }
  // Squaring: disp'(x) = disp(x + disp(x)) + disp(x), clamp-to-edge lookups.
  std::vector<double> n1(n), n2(n);
  for (int it = 0; it < s; ++it) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int i = r * w + c;
        double tr = r + d2[i];
        double tc = c + d1[i];
        n1[i] = d1[i] + sample_bilinear(d1.data(), h, w, tr, tc);
        n2[i] = d2[i] + sample_bilinear(d2.data(), h, w, tr, tc);
      }
    d1.swap(n1);
    d2.swap(n2);
  }
  DeformationField out;
  out.height = h;
  out.width = w;
  out.map.resize(static_cast<size_t>(n) * 2);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int i = r * w + c;
      out.map[i] = c + d1[i];
      out.map[n + i] = r + d2[i];
    }
  return out;
}

SvfField svf_negate(const SvfField& v) {
  validate(v, "svf_negate");
  SvfField out = v;
  for (double& x : out.data) x = -x;
  return out;
}

SvfField svf_compose_bch1(const SvfField& v, const SvfField& w) {
  validate(v, "svf_compose_bch1");
  validate(w, "svf_compose_bch1");
  if (!v.same_shape(w))
    throw std::invalid_argument("svf_compose_bch1: dimension/spacing mismatch");
  SvfField out = v;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += w.data[i];
  return out;
}

SvfField upsample_svf(const SvfField& v, int target_h, int target_w) {
  validate(v, "upsample_svf");
  if (target_h < v.height || target_w < v.width)
    throw std::invalid_argument("upsample_svf: target smaller than source");
  if (target_h == v.height && target_w == v.width) return v;
  SvfField out;
  out.height = target_h;
  out.width = target_w;
  double sr = target_h > 1 ? static_cast<double>(v.height - 1) / (target_h - 1) : 0.0;
  double sc = target_w > 1 ? static_cast<double>(v.width - 1) / (target_w - 1) : 0.0;
  out.spacing = v.height > 1 ? v.spacing * sr : v.spacing;
  out.data.resize(static_cast<size_t>(target_h) * target_w * 2);
  const int n = v.size();
  const int m = target_h * target_w;
  for (int r = 0; r < target_h; ++r)
    for (int c = 0; c < target_w; ++c) {
      double gr = r * sr, gc = c * sc;
      out.data[r * target_w + c] = sample_bilinear(v.data.data(), v.height, v.width, gr, gc);
      out.data[m + r * target_w + c] =
          sample_bilinear(v.data.data() + n, v.height, v.width, gr, gc);
    }
  return out;
}

SvfField downsample_svf_block_mean(const SvfField& v, int factor) {
  validate(v, "downsample_svf_block_mean");
  if (factor < 1) throw std::invalid_argument("downsample_svf_block_mean: factor < 1");
  if (factor == 1) return v;
  SvfField out;
  out.height = (v.height + factor - 1) / factor;
  out.width = (v.width + factor - 1) / factor;
  out.spacing = v.spacing * factor;
  out.data.assign(static_cast<size_t>(out.height) * out.width * 2, 0.0);
  const int n = v.size(), m = out.size();
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      int r0 = r * factor, r1 = std::min(r0 + factor, v.height);
      int c0 = c * factor, c1 = std::min(c0 + factor, v.width);
      double s1 = 0.0, s2 = 0.0;
      for (int rr = r0; rr < r1; ++rr)
        for (int cc = c0; cc < c1; ++cc) {
          s1 += v.data[rr * v.width + cc];
          s2 += v.data[n + rr * v.width + cc];
        }
      double cnt = static_cast<double>((r1 - r0) * (c1 - c0));
      out.data[r * out.width + c] = s1 / cnt;
      out.data[m + r * out.width + c] = s2 / cnt;
    }
  return out;
}

DeformationField compose_deformations(const DeformationField& outer,
                                      const DeformationField& inner) {
  if (outer.height != inner.height || outer.width != inner.width)
    throw std::invalid_argument("compose_deformations: dimension mismatch");
  const int h = inner.height, w = inner.width, n = h * w;
  DeformationField out;
  out.height = h;
  out.width = w;
  out.map.resize(static_cast<size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    double tc = inner.map[i];
    double tr = inner.map[n + i];
    out.map[i] = sample_bilinear(outer.map.data(), h, w, tr, tc);
    out.map[n + i] = sample_bilinear(outer.map.data() + n, h, w, tr, tc);
  }
  return out;
}

ImageSection warp_image(const ImageSection& img, const DeformationField& d,
                        Interp interp, double fill) {
  if (img.height != d.height || img.width != d.width)
    throw std::invalid_argument("warp_image: dimension mismatch");
  const int h = img.height, w = img.width, n = h * w;
  ImageSection out = img;
  for (int i = 0; i < n; ++i) {
    double tc = d.map[i];
    double tr = d.map[n + i];
    bool inside = tr >= 0.0 && tr <= h - 1 && tc >= 0.0 && tc <= w - 1;
    if (!inside) {
      out.pixels[i] = fill;
      out.mask[i] = 0;
      continue;
    }
    if (interp == Interp::bilinear) {
      out.pixels[i] = sample_bilinear(img.pixels.data(), h, w, tr, tc);
    } else {
      int rr = static_cast<int>(std::lround(tr));
      int cc = static_cast<int>(std::lround(tc));
      out.pixels[i] = img.pixels[rr * w + cc];
    }
    int mr = std::clamp(static_cast<int>(std::lround(tr)), 0, h - 1);
    int mc = std::clamp(static_cast<int>(std::lround(tc)), 0, w - 1);
    out.mask[i] = img.mask[mr * w + mc];
  }
  return out;
}

double max_interior_displacement(const DeformationField& d, int margin) {
  const int n = d.height * d.width;
  double m = 0.0;
  for (int r = margin; r < d.height - margin; ++r)
    for (int c = margin; c < d.width - margin; ++c) {
      int i = r * d.width + c;
      m = std::max(m, std::hypot(d.map[i] - c, d.map[n + i] - r));
    }
  return m;
}

double max_interior_difference(const DeformationField& a, const DeformationField& b,
                               int margin) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("max_interior_difference: dimension mismatch");
  const int n = a.height * a.width;
  double m = 0.0;
  for (int r = margin; r < a.height - margin; ++r)
    for (int c = margin; c < a.width - margin; ++c) {
      int i = r * a.width + c;
      m = std::max(m, std::hypot(a.map[i] - b.map[i], a.map[n + i] - b.map[n + i]));
    }
  return m;
}

}  // namespace histrec
