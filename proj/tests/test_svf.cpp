#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "histrec/io.hpp"
#include "histrec/rng.hpp"
#include "histrec/svf.hpp"

using namespace histrec;

namespace {

SvfField smooth_field(int h, int w, double max_mag, std::uint64_t seed) {
  // Band-limited random field: a few low-frequency sinusoids per component.
  Rng rng(seed);
  SvfField v = SvfField::zeros(h, w);
  double a1 = rng.uniform(-1, 1), a2 = rng.uniform(-1, 1);
  double b1 = rng.uniform(-1, 1), b2 = rng.uniform(-1, 1);
  double p1 = rng.uniform(0, 6.28), p2 = rng.uniform(0, 6.28);
  double peak = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double x = 2.0 * M_PI * c / (w - 1), y = 2.0 * M_PI * r / (h - 1);
      v.x1(r, c) = a1 * std::sin(x + p1) + b1 * std::cos(y + p2);
      v.x2(r, c) = a2 * std::cos(x + p2) + b2 * std::sin(y + p1);
      peak = std::max(peak, std::hypot(v.x1(r, c), v.x2(r, c)));
    }
  if (peak > 0)
    for (auto& d : v.data) d *= max_mag / peak;
  return v;
}

}  // namespace

TEST_CASE("exp of zero field is the identity exactly") {
  DeformationField d = svf_exp(SvfField::zeros(16, 12));
  DeformationField id = DeformationField::identity(16, 12);
  for (size_t i = 0; i < d.map.size(); ++i) CHECK(d.map[i] == id.map[i]);
}

TEST_CASE("constant field integrates to a translation at interior pixels") {
  DeformationField d = svf_exp(SvfField::constant(32, 32, 1.5, -0.75));
  for (int r = 4; r < 28; ++r)
    for (int c = 4; c < 28; ++c) {
      CHECK(d.tc(r, c) == doctest::Approx(c + 1.5).epsilon(1e-9));
      CHECK(d.tr(r, c) == doctest::Approx(r - 0.75).epsilon(1e-9));
    }
}

TEST_CASE("linear rotation field integrates to the analytic rotation") {
  const int n = 64;
  const double theta = 0.1, x0 = 31.5;
  SvfField v = SvfField::zeros(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      v.x1(r, c) = -theta * (r - x0);
      v.x2(r, c) = theta * (c - x0);
    }
  DeformationField d = svf_exp(v);
  double worst = 0.0;
  for (int r = 8; r < n - 8; ++r)
    for (int c = 8; c < n - 8; ++c) {
      double ec = x0 + std::cos(theta) * (c - x0) - std::sin(theta) * (r - x0);
      double er = x0 + std::sin(theta) * (c - x0) + std::cos(theta) * (r - x0);
      worst = std::max({worst, std::abs(d.tc(r, c) - ec), std::abs(d.tr(r, c) - er)});
    }
  CHECK(worst < 0.05);
}

TEST_CASE("negation gives an inverse up to integration error") {
  for (std::uint64_t seed : {11ull, 22ull, 33ull}) {
    SvfField v = smooth_field(64, 64, 3.0, seed);
    DeformationField rt = compose_deformations(svf_exp(v), svf_exp(svf_negate(v)));
    CHECK(max_interior_displacement(rt, 6) < 0.1);
  }
}

TEST_CASE("inverse round trip improves monotonically with step count") {
  SvfField v = smooth_field(64, 64, 3.0, 77);
  double prev = 1e18;
  for (int steps : {2, 4, 6, 8}) {
    DeformationField rt =
        compose_deformations(svf_exp(v, steps), svf_exp(svf_negate(v), steps));
    double err = max_interior_displacement(rt, 6);
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("first-order BCH composition is element-wise addition") {
  SvfField v = smooth_field(16, 16, 2.0, 1);
  SvfField w = smooth_field(16, 16, 2.0, 2);
  SvfField z = SvfField::zeros(16, 16);
  SvfField vw = svf_compose_bch1(v, w);
  SvfField wv = svf_compose_bch1(w, v);
  for (size_t i = 0; i < vw.data.size(); ++i) {
    CHECK(vw.data[i] == v.data[i] + w.data[i]);
    CHECK(vw.data[i] == wv.data[i]);
  }
  SvfField v0 = svf_compose_bch1(v, z);
  for (size_t i = 0; i < v.data.size(); ++i) CHECK(v0.data[i] == v.data[i]);
}

TEST_CASE("BCH truncation gap stays small for magnitude-2 fields") {
  SvfField v = smooth_field(64, 64, 2.0, 5);
  SvfField w = smooth_field(64, 64, 2.0, 6);
  DeformationField lhs = svf_exp(svf_compose_bch1(v, w));
  DeformationField rhs = compose_deformations(svf_exp(v), svf_exp(w));
  CHECK(max_interior_difference(lhs, rhs, 6) < 0.2);
}

TEST_CASE("small smooth fields give positive discrete Jacobians") {
  SvfField v = smooth_field(48, 48, 0.9, 99);
  DeformationField d = svf_exp(v);
  for (int r = 1; r < 47; ++r)
    for (int c = 1; c < 47; ++c) {
      double dxx = (d.tc(r, c + 1) - d.tc(r, c - 1)) / 2.0;
      double dxy = (d.tc(r + 1, c) - d.tc(r - 1, c)) / 2.0;
      double dyx = (d.tr(r, c + 1) - d.tr(r, c - 1)) / 2.0;
      double dyy = (d.tr(r + 1, c) - d.tr(r - 1, c)) / 2.0;
      CHECK(dxx * dyy - dxy * dyx > 0.0);
    }
}

TEST_CASE("upsampling reproduces affine fields and preserves constants") {
  SvfField ramp = SvfField::zeros(9, 9, 8.0);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      ramp.x1(r, c) = 0.25 * c - 0.5 * r + 1.0;
      ramp.x2(r, c) = -0.125 * c + 0.75 * r;
    }
  SvfField up = upsample_svf(ramp, 65, 65);
  CHECK(up.spacing == doctest::Approx(1.0));
  for (int r = 0; r < 65; ++r)
    for (int c = 0; c < 65; ++c) {
      double gr = r / 8.0, gc = c / 8.0;
      CHECK(std::abs(up.x1(r, c) - (0.25 * gc - 0.5 * gr + 1.0)) < 1e-6);
      CHECK(std::abs(up.x2(r, c) - (-0.125 * gc + 0.75 * gr)) < 1e-6);
    }

  SvfField cst = upsample_svf(SvfField::constant(5, 5, 2.0, -3.0), 33, 47);
  for (int i = 0; i < cst.size(); ++i) {
    CHECK(cst.data[i] == doctest::Approx(2.0));
    CHECK(cst.data[cst.size() + i] == doctest::Approx(-3.0));
  }

  SvfField same = upsample_svf(ramp, 9, 9);
  for (size_t i = 0; i < same.data.size(); ++i) CHECK(same.data[i] == ramp.data[i]);
}

TEST_CASE("block-mean downsampling averages complete blocks") {
  SvfField v = SvfField::zeros(4, 4);
  for (int i = 0; i < 16; ++i) {
    v.data[i] = i;
    v.data[16 + i] = 2 * i;
  }
  SvfField d = downsample_svf_block_mean(v, 2);
  CHECK(d.height == 2);
  CHECK(d.width == 2);
  CHECK(d.spacing == doctest::Approx(2.0));
  CHECK(d.x1(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(d.x1(1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  CHECK(d.x2(0, 1) == doctest::Approx(2.0 * (2 + 3 + 6 + 7) / 4.0));
  // Factor 1 is the identity.
  SvfField s1 = downsample_svf_block_mean(v, 1);
  for (size_t i = 0; i < v.data.size(); ++i) CHECK(s1.data[i] == v.data[i]);
}

TEST_CASE("warp_image basics") {
  ImageSection img = ImageSection::blank(8, 8);
  for (int i = 0; i < 64; ++i) img.pixels[i] = i;

  SUBCASE("identity leaves the image unchanged") {
    ImageSection out = warp_image(img, DeformationField::identity(8, 8));
    for (int i = 0; i < 64; ++i) CHECK(out.pixels[i] == doctest::Approx(img.pixels[i]));
  }
  SUBCASE("integer translation with nearest shifts columns and fills the border") {
    DeformationField d = DeformationField::identity(8, 8);
    for (int i = 0; i < 64; ++i) d.map[i] += 2.0;  // sample two columns right
    ImageSection out = warp_image(img, d, Interp::nearest, -1.0);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 6; ++c) CHECK(out.pixels[r * 8 + c] == img.pixels[r * 8 + c + 2]);
      CHECK(out.pixels[r * 8 + 6] == -1.0);
      CHECK(out.mask[r * 8 + 6] == 0);
    }
  }
  SUBCASE("warp and inverse-warp round trip keeps intensity error small") {
    ImageSection smooth = ImageSection::blank(64, 64);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        smooth.pixels[r * 64 + c] =
            128.0 + 80.0 * std::sin(2.0 * M_PI * r / 31.0) * std::cos(2.0 * M_PI * c / 37.0);
    SvfField v = smooth_field(64, 64, 2.0, 123);
    ImageSection rt = warp_image(warp_image(smooth, svf_exp(v)), svf_exp(svf_negate(v)));
    double total = 0.0;
    int count = 0;
    for (int r = 8; r < 56; ++r)
      for (int c = 8; c < 56; ++c) {
        total += std::abs(rt.pixels[r * 64 + c] - smooth.pixels[r * 64 + c]);
        ++count;
      }
    CHECK(total / count < 0.02 * 255.0);
  }
}

TEST_CASE("svf container and pgm round trips") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "histrec_io_test";
  fs::create_directories(dir);

  SvfField v = smooth_field(7, 5, 2.5, 42);
  v.spacing = 8.0;
  write_svf((dir / "f.svf").string(), v);
  SvfField back = read_svf((dir / "f.svf").string());
  CHECK(back.height == 7);
  CHECK(back.width == 5);
  CHECK(back.spacing == doctest::Approx(8.0));
  for (size_t i = 0; i < v.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));

  ImageSection img = ImageSection::blank(6, 9);
  for (int i = 0; i < 54; ++i) img.pixels[i] = (i * 37) % 256;
  write_pgm((dir / "i.pgm").string(), img);
  ImageSection iback = read_pgm((dir / "i.pgm").string());
  CHECK(iback.height == 6);
  CHECK(iback.width == 9);
  for (int i = 0; i < 54; ++i) CHECK(iback.pixels[i] == doctest::Approx(img.pixels[i]));

  img.mask.assign(54, 0);
  for (int i = 0; i < 54; i += 3) img.mask[i] = 1;
  write_mask_pgm((dir / "m.pgm").string(), img);
  ImageSection mback = ImageSection::blank(6, 9);
  read_mask_pgm((dir / "m.pgm").string(), mback);
  for (int i = 0; i < 54; ++i) CHECK(mback.mask[i] == img.mask[i]);
  fs::remove_all(dir);
}

TEST_CASE("validation rejects non-finite fields") {
  SvfField v = SvfField::zeros(4, 4);
  v.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(svf_exp(v), std::invalid_argument);
}
