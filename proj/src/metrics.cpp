#include "histrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace histrec {

int ErrorField::valid_count() const {
  int c = 0;
  for (auto v : valid) c += v ? 1 : 0;
  return c;
}

ErrorField pixel_error(const DeformationField& truth, const DeformationField& est,
                       const std::vector<std::uint8_t>& domain) {
  if (truth.height != est.height || truth.width != est.width)
    throw std::invalid_argument("pixel_error: dimension mismatch");
  const int n = truth.size();
  if (domain.size() != static_cast<size_t>(n))
    throw std::invalid_argument("pixel_error: domain dimension mismatch");
  ErrorField e;
  e.height = truth.height;
  e.width = truth.width;
  e.ec.assign(n, 0.0);
  e.er.assign(n, 0.0);
  e.valid = domain;
  for (int i = 0; i < n; ++i) {
    if (!domain[i]) continue;
    e.ec[i] = truth.map[i] - est.map[i];
    e.er[i] = truth.map[n + i] - est.map[n + i];
  }
  return e;
}

double intra_slice_error(const std::vector<ErrorField>& errors) {
  if (errors.empty()) throw std::invalid_argument("intra_slice_error: no slices");
  double sum = 0.0;
  int used = 0;
  for (const auto& e : errors) {
    double s = 0.0;
    int m = 0;
    for (int i = 0; i < e.size(); ++i) {
      if (!e.valid[i]) continue;
      s += std::hypot(e.ec[i], e.er[i]);
      ++m;
    }
    if (m == 0) continue;
    sum += s / m;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("intra_slice_error: all slice domains empty");
  return sum / used;
}

double inter_slice_error(const std::vector<ErrorField>& errors) {
  if (errors.size() < 2) throw std::invalid_argument("inter_slice_error: need >= 2 slices");
  double sum = 0.0;
  int used = 0;
  for (size_t n = 0; n + 1 < errors.size(); ++n) {
    const ErrorField &a = errors[n], &b = errors[n + 1];
    if (a.height != b.height || a.width != b.width)
      throw std::invalid_argument("inter_slice_error: slice dimension mismatch");
    double s = 0.0;
    int m = 0;
    for (int i = 0; i < a.size(); ++i) {
      if (!a.valid[i] || !b.valid[i]) continue;
      s += std::hypot(a.ec[i] - b.ec[i], a.er[i] - b.er[i]);
      ++m;
    }
    if (m == 0) continue;
    sum += s / m;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("inter_slice_error: all pair domains empty");
  return sum / used;
}

DeformationField invert_deformation(const DeformationField& d, int max_iters, double tol_px,
                                    std::vector<std::uint8_t>* converged) {
  const int h = d.height, w = d.width, n = d.size();
  // Displacement planes of the forward map.
  std::vector<double> uc(n), ur(n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      uc[r * w + c] = d.tc(r, c) - c;
      ur[r * w + c] = d.tr(r, c) - r;
    }
  // Fixed point v(y) = -u(y + v(y)).
  std::vector<double> vc(n, 0.0), vr(n, 0.0);
  for (int it = 0; it < max_iters; ++it) {
    double max_update = 0.0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int i = r * w + c;
        double sr = r + vr[i], sc = c + vc[i];
        double nc = -sample_bilinear(uc.data(), h, w, sr, sc);
        double nr = -sample_bilinear(ur.data(), h, w, sr, sc);
        max_update = std::max({max_update, std::abs(nc - vc[i]), std::abs(nr - vr[i])});
        vc[i] = nc;
        vr[i] = nr;
      }
    if (max_update < tol_px) break;
  }
  DeformationField inv = DeformationField::identity(h, w);
  for (int i = 0; i < n; ++i) {
    inv.map[i] += vc[i];
    inv.map[n + i] += vr[i];
  }
  if (converged) {
    converged->assign(n, 0);
    // Forward round trip d(inv(y)) should land back on y.
    std::vector<double> tc(d.map.begin(), d.map.begin() + n);
    std::vector<double> tr(d.map.begin() + n, d.map.end());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int i = r * w + c;
        double fc = sample_bilinear(tc.data(), h, w, inv.map[n + i], inv.map[i]);
        double fr = sample_bilinear(tr.data(), h, w, inv.map[n + i], inv.map[i]);
        if (std::hypot(fc - c, fr - r) <= 10.0 * tol_px) (*converged)[i] = 1;
      }
  }
  return inv;
}

ErrorField cross_contrast_error(const DeformationField& truth_c,
                                const DeformationField& truth_c2,
                                const DeformationField& est_c, const DeformationField& est_c2,
                                const std::vector<std::uint8_t>& domain) {
  if (truth_c.height != truth_c2.height || truth_c.width != truth_c2.width ||
      truth_c.height != est_c.height || truth_c.width != est_c.width ||
      truth_c.height != est_c2.height || truth_c.width != est_c2.width)
    throw std::invalid_argument("cross_contrast_error: dimension mismatch");
  std::vector<std::uint8_t> conv_t, conv_e;
  DeformationField inv_t = invert_deformation(truth_c, 20, 1e-3, &conv_t);
  DeformationField inv_e = invert_deformation(est_c, 20, 1e-3, &conv_e);
  DeformationField cross_t = compose_deformations(inv_t, truth_c2);
  DeformationField cross_e = compose_deformations(inv_e, est_c2);

  const int h = truth_c.height, w = truth_c.width, n = truth_c.size();
  std::vector<std::uint8_t> dom = domain;
  // Drop pixels whose inversion did not converge at the composition sample.
  auto gate = [&](const DeformationField& via, const std::vector<std::uint8_t>& conv) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int i = r * w + c;
        if (!dom[i]) continue;
        int sr = std::clamp(static_cast<int>(std::lround(via.tr(r, c))), 0, h - 1);
        int sc = std::clamp(static_cast<int>(std::lround(via.tc(r, c))), 0, w - 1);
        if (!conv[sr * w + sc]) dom[i] = 0;
      }
  };
  gate(truth_c2, conv_t);
  gate(est_c2, conv_e);
  return pixel_error(cross_t, cross_e, dom);
}

ErrorReport make_report(const std::vector<ErrorField>& errors,
                        const std::vector<std::pair<int, int>>& slice_ids) {
  if (errors.size() != slice_ids.size())
    throw std::invalid_argument("make_report: id/error count mismatch");
  ErrorReport rep;
  for (size_t i = 0; i < errors.size(); ++i) {
    SliceMetrics sm;
    sm.contrast = slice_ids[i].first;
    sm.level = slice_ids[i].second;
    sm.valid_pixels = errors[i].valid_count();
    if (sm.valid_pixels == 0) {
      sm.excluded = true;
      ++rep.excluded_slices;
    } else {
      double s = 0.0;
      for (int j = 0; j < errors[i].size(); ++j)
        if (errors[i].valid[j]) s += std::hypot(errors[i].ec[j], errors[i].er[j]);
      sm.mean_norm = s / sm.valid_pixels;
    }
    rep.slices.push_back(sm);
  }
  rep.e_within = intra_slice_error(errors);
  rep.e_between = errors.size() >= 2 ? inter_slice_error(errors) : 0.0;
  return rep;
}

namespace {
std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

std::string report_to_csv(const ErrorReport& r) {
  std::ostringstream os;
  os << "contrast,level,mean_norm,valid_pixels,excluded\n";
  for (const auto& s : r.slices)
    os << s.contrast << ',' << s.level << ',' << fmt(s.mean_norm) << ',' << s.valid_pixels
       << ',' << (s.excluded ? 1 : 0) << '\n';
  return os.str();
}

std::string report_to_json(const ErrorReport& r) {
  nlohmann::ordered_json j;
  j["e_within"] = r.e_within;
  j["e_between"] = r.e_between;
  j["excluded_slices"] = r.excluded_slices;
  auto& arr = j["slices"] = nlohmann::ordered_json::array();
  for (const auto& s : r.slices) {
    nlohmann::ordered_json js;
    js["contrast"] = s.contrast;
    js["level"] = s.level;
    js["mean_norm"] = s.mean_norm;
    js["valid_pixels"] = s.valid_pixels;
    js["excluded"] = s.excluded;
    arr.push_back(std::move(js));
  }
  return j.dump(2) + "\n";
}

}  // namespace histrec
