#include "histrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace histrec {

void SynthConfig::validate() const {
  if (control_rows < 2 || control_cols < 2)
    throw std::invalid_argument("SynthConfig: control grid must be at least 2x2");
  if (sigma_lo > sigma_hi || sigma_lo < 0.0)
    throw std::invalid_argument("SynthConfig: invalid sigma range");
  if (outlier_fraction < 0.0 || outlier_fraction > 1.0)
    throw std::invalid_argument("SynthConfig: outlier fraction outside [0,1]");
  if (outlier_angles.empty())
    throw std::invalid_argument("SynthConfig: no outlier angles");
  for (int a : outlier_angles)
    if (a != 90 && a != 180 && a != 270)
      throw std::invalid_argument("SynthConfig: outlier angles must be 90, 180 or 270");
}

namespace {

// Uniform cubic B-spline basis at local parameter t in [0,1).
void cubic_weights(double t, double w[4]) {
  double t2 = t * t, t3 = t2 * t;
  w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

}  // namespace

std::vector<double> bspline_resize(const std::vector<double>& control, int ch, int cw,
                                   int out_h, int out_w) {
  if (ch < 2 || cw < 2) throw std::invalid_argument("bspline_resize: control grid too small");
  if (out_h < ch || out_w < cw)
    throw std::invalid_argument("bspline_resize: output smaller than control grid");
  if (control.size() != static_cast<size_t>(ch) * cw)
    throw std::invalid_argument("bspline_resize: control size mismatch");
  std::vector<double> out(static_cast<size_t>(out_h) * out_w);
  const double sr = static_cast<double>(ch - 1) / (out_h - 1);
  const double sc = static_cast<double>(cw - 1) / (out_w - 1);
  auto at = [&](int i, int j) {
    i = std::clamp(i, 0, ch - 1);
    j = std::clamp(j, 0, cw - 1);
    return control[i * cw + j];
  };
  for (int r = 0; r < out_h; ++r) {
    double u = r * sr;
    int i0 = std::min(static_cast<int>(u), ch - 2);
    double wr[4];
    cubic_weights(u - i0, wr);
    for (int c = 0; c < out_w; ++c) {
      double v = c * sc;
      int j0 = std::min(static_cast<int>(v), cw - 2);
      double wc[4];
      cubic_weights(v - j0, wc);
      double acc = 0.0;
      for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) acc += wr[m] * wc[n] * at(i0 - 1 + m, j0 - 1 + n);
      out[static_cast<size_t>(r) * out_w + c] = acc;
    }
  }
  return out;
}

DeformationField synth_deformation(const SynthConfig& cfg, int img_h, int img_w, Rng& rng) {
  cfg.validate();
  if (img_h < cfg.control_rows || img_w < cfg.control_cols)
    throw std::invalid_argument("synth_deformation: image smaller than control grid");
  const double sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
  const int ch = cfg.control_rows, cw = cfg.control_cols;
  std::vector<double> dc(static_cast<size_t>(ch) * cw), dr(dc.size());
  for (auto& v : dc) v = sigma * rng.gaussian();
  for (auto& v : dr) v = sigma * rng.gaussian();
  std::vector<double> fc = bspline_resize(dc, ch, cw, img_h, img_w);
  std::vector<double> fr = bspline_resize(dr, ch, cw, img_h, img_w);
  DeformationField d = DeformationField::identity(img_h, img_w);
  const int n = img_h * img_w;
  for (int i = 0; i < n; ++i) {
    d.map[i] += fc[i];
    d.map[n + i] += fr[i];
  }
  return d;
}

SvfField synth_svf(const SynthConfig& cfg, int grid_h, int grid_w, double spacing, Rng& rng) {
  cfg.validate();
  const double sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
  SvfField f = SvfField::zeros(grid_h, grid_w, spacing);
  for (auto& v : f.data) v = sigma * rng.gaussian();
  return f;
}

ImageSection rotate_section(const ImageSection& img, int angle_deg) {
  const int H = img.height, W = img.width;
  if (angle_deg != 180 && H != W)
    throw std::invalid_argument("rotate_section: 90/270 rotation needs square dims");
  ImageSection out = img;
  auto remap = [&](int r, int c, int& sr, int& sc) {
    switch (angle_deg) {
      case 90: sr = H - 1 - c; sc = r; break;
      case 180: sr = H - 1 - r; sc = W - 1 - c; break;
      case 270: sr = c; sc = W - 1 - r; break;
      default: throw std::invalid_argument("rotate_section: angle must be 90, 180 or 270");
    }
  };
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int sr, sc;
      remap(r, c, sr, sc);
      out.pixels[r * W + c] = img.pixels[sr * W + sc];
      out.mask[r * W + c] = img.mask[sr * W + sc];
    }
  return out;
}

std::set<NodeId> inject_outliers(std::map<NodeId, ImageSection>& stack, const SynthConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  std::set<NodeId> flags;
  std::map<int, std::vector<NodeId>> per_contrast;
  for (auto& [node, img] : stack)
    if (node.contrast >= 1) per_contrast[node.contrast].push_back(node);
  for (auto& [c, nodes] : per_contrast) {
    int count = static_cast<int>(std::lround(cfg.outlier_fraction * nodes.size()));
    Rng rng = Rng::stream(cfg.seed ^ seed, static_cast<std::uint64_t>(c));
    // Partial Fisher-Yates: the first `count` entries are the chosen slices.
    for (int i = 0; i < count; ++i) {
      int j = i + static_cast<int>(rng.next_index(nodes.size() - i));
      std::swap(nodes[i], nodes[j]);
    }
    for (int i = 0; i < count; ++i) {
      int angle = cfg.outlier_angles[rng.next_index(cfg.outlier_angles.size())];
      stack.at(nodes[i]) = rotate_section(stack.at(nodes[i]), angle);
      flags.insert(nodes[i]);
    }
  }
  return flags;
}

std::set<int> pick_outlier_rows(int num_rows, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("pick_outlier_rows: fraction outside [0,1]");
  int count = static_cast<int>(std::lround(fraction * num_rows));
  std::vector<int> ix(num_rows);
  for (int i = 0; i < num_rows; ++i) ix[i] = i;
  Rng rng = Rng::stream(seed, 0x6F75746C69657273ULL);  // "outliers"
  for (int i = 0; i < count; ++i) {
    int j = i + static_cast<int>(rng.next_index(num_rows - i));
    std::swap(ix[i], ix[j]);
  }
  return std::set<int>(ix.begin(), ix.begin() + count);
}

void synthesize_observations(std::vector<ObservationEdge>& observations, const PathMatrix& W,
                             const std::vector<SvfField>& latent_truth, NoiseLaw law,
                             double noise_param, const std::set<int>& outlier_rows,
                             std::uint64_t seed) {
  if (W.rows != static_cast<int>(observations.size()))
    throw std::invalid_argument("synthesize_observations: W/observation count mismatch");
  if (W.cols != static_cast<int>(latent_truth.size()))
    throw std::invalid_argument("synthesize_observations: W/latent count mismatch");
  if (latent_truth.empty())
    throw std::invalid_argument("synthesize_observations: no latents");
  const SvfField& shape = latent_truth.front();
  for (const auto& t : latent_truth)
    if (!t.same_shape(shape))
      throw std::invalid_argument("synthesize_observations: latent grids differ");

  for (auto& o : observations) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(o.index));
    SvfField f = SvfField::zeros(shape.height, shape.width, shape.spacing);
    if (outlier_rows.count(o.index)) {
      for (auto& v : f.data) v = rng.uniform(-50.0, 50.0);
    } else {
      for (auto& [l, s] : W.row[o.index].entries)
        for (size_t i = 0; i < f.data.size(); ++i) f.data[i] += s * latent_truth[l].data[i];
      switch (law) {
        case NoiseLaw::none: break;
        case NoiseLaw::gaussian:
          for (auto& v : f.data) v += noise_param * rng.gaussian();
          break;
        case NoiseLaw::laplace:
          for (auto& v : f.data) v += rng.laplace(noise_param);
          break;
      }
    }
    o.svf = std::move(f);
  }
}

}  // namespace histrec
