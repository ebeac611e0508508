#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "histrec/synth.hpp"

using namespace histrec;

TEST_CASE("zero-sigma config produces the identity deformation") {
  SynthConfig cfg;
  cfg.sigma_lo = cfg.sigma_hi = 0.0;
  Rng rng(1);
  DeformationField d = synth_deformation(cfg, 32, 32, rng);
  DeformationField id = DeformationField::identity(32, 32);
  for (size_t i = 0; i < d.map.size(); ++i) CHECK(d.map[i] == id.map[i]);
}

TEST_CASE("fixed seed gives bit-identical deformations") {
  SynthConfig cfg;
  Rng a(42), b(42);
  DeformationField d1 = synth_deformation(cfg, 24, 24, a);
  DeformationField d2 = synth_deformation(cfg, 24, 24, b);
  for (size_t i = 0; i < d1.map.size(); ++i) CHECK(d1.map[i] == d2.map[i]);
}

TEST_CASE("control-value sampler std tracks the drawn sigma") {
  // Replicate the generator's draw order: sigma, then control values.
  SynthConfig cfg;
  Rng rng(7);
  double sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
  double sum = 0.0, sum2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    double v = sigma * rng.gaussian();
    sum += v;
    sum2 += v * v;
  }
  double stddev = std::sqrt(sum2 / n - (sum / n) * (sum / n));
  CHECK(std::abs(stddev - sigma) / sigma < 0.05);
}

TEST_CASE("B-spline fields are smooth relative to sigma and control spacing") {
  SynthConfig cfg;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    Rng rng(seed);
    DeformationField d = synth_deformation(cfg, 64, 64, rng);
    double spacing = 63.0 / 8.0;  // pixels between control points
    double bound = 8.0 * cfg.sigma_hi / spacing;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c + 1 < 64; ++c) {
        CHECK(std::abs(d.tc(r, c + 1) - d.tc(r, c) - 1.0) < bound);
        CHECK(std::abs(d.tr(r, c + 1) - d.tr(r, c)) < bound);
      }
  }
}

TEST_CASE("bspline_resize reproduces constants exactly") {
  std::vector<double> control(81, 3.25);
  auto out = bspline_resize(control, 9, 9, 65, 65);
  for (double v : out) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("rotations remap indices exactly") {
  ImageSection img = ImageSection::blank(6, 6);
  for (int i = 0; i < 36; ++i) img.pixels[i] = i;

  SUBCASE("180 degrees twice is the identity") {
    ImageSection twice = rotate_section(rotate_section(img, 180), 180);
    for (int i = 0; i < 36; ++i) CHECK(twice.pixels[i] == img.pixels[i]);
  }
  SUBCASE("90 then 270 is the identity on square sections") {
    ImageSection rt = rotate_section(rotate_section(img, 90), 270);
    for (int i = 0; i < 36; ++i) CHECK(rt.pixels[i] == img.pixels[i]);
  }
  SUBCASE("four 90-degree turns are the identity") {
    ImageSection r = img;
    for (int i = 0; i < 4; ++i) r = rotate_section(r, 90);
    for (int i = 0; i < 36; ++i) CHECK(r.pixels[i] == img.pixels[i]);
  }
  SUBCASE("non-square 90-degree rotation is rejected") {
    CHECK_THROWS_AS(rotate_section(ImageSection::blank(4, 6), 90), std::invalid_argument);
  }
}

TEST_CASE("outlier injection counts and flags") {
  auto make_stack = [](int N, int C) {
    std::map<NodeId, ImageSection> stack;
    for (int c = 0; c <= C; ++c)
      for (int n = 1; n <= N; ++n) {
        ImageSection img = ImageSection::blank(8, 8);
        img.pixels[0] = c * 100 + n;
        stack.emplace(NodeId{c, n}, std::move(img));
      }
    return stack;
  };

  SUBCASE("fraction zero changes nothing") {
    auto stack = make_stack(10, 2);
    auto before = stack;
    SynthConfig cfg;
    cfg.outlier_fraction = 0.0;
    auto flags = inject_outliers(stack, cfg, 5);
    CHECK(flags.empty());
    for (auto& [n, img] : stack)
      for (size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(img.pixels[i] == before.at(n).pixels[i]);
  }
  SUBCASE("fraction 0.10 with N=50 flags exactly 5 slices per contrast") {
    auto stack = make_stack(50, 2);
    SynthConfig cfg;
    cfg.outlier_fraction = 0.10;
    auto flags = inject_outliers(stack, cfg, 5);
    int per_contrast[3] = {0, 0, 0};
    for (const auto& n : flags) {
      CHECK(n.contrast >= 1);
      ++per_contrast[n.contrast];
    }
    CHECK(per_contrast[1] == 5);
    CHECK(per_contrast[2] == 5);
  }
  SUBCASE("rounding to nearest: fraction 0.05 with N=50 flags 3 per contrast") {
    auto stack = make_stack(50, 1);
    SynthConfig cfg;
    cfg.outlier_fraction = 0.05;  // 2.5 slices -> rounds to 3 (round half away from zero)
    auto flags = inject_outliers(stack, cfg, 5);
    CHECK(flags.size() == 3);
  }
}

TEST_CASE("observation synthesis") {
  std::vector<NodeId> nodes;
  for (int c = 0; c <= 1; ++c)
    for (int n = 1; n <= 4; ++n) nodes.push_back({c, n});
  auto tree = build_spanning_tree(nodes);
  auto obs = build_observation_graph(nodes, 2);
  PathMatrix W = build_path_matrix(tree, obs);
  std::vector<SvfField> truth;
  for (size_t l = 0; l < tree.size(); ++l) {
    Rng rng = Rng::stream(123, l);
    SvfField f = SvfField::zeros(3, 3);
    for (auto& v : f.data) v = rng.uniform(-3, 3);
    truth.push_back(std::move(f));
  }

  SUBCASE("noise-free synthesis is exactly W*T") {
    auto o = obs;
    synthesize_observations(o, W, truth, NoiseLaw::none, 0.0, {}, 9);
    for (const auto& e : o)
      for (size_t i = 0; i < e.svf.data.size(); ++i) {
        double want = 0.0;
        for (auto& [l, s] : W.row[e.index].entries) want += s * truth[l].data[i];
        CHECK(e.svf.data[i] == doctest::Approx(want).epsilon(1e-12));
      }
  }
  SUBCASE("gaussian noise: residual mean within 3 standard errors of zero") {
    std::vector<SvfField> big_truth(1, SvfField::zeros(100, 100));
    std::vector<NodeId> two{{0, 1}, {0, 2}};
    auto t2 = build_spanning_tree(two);
    auto o2 = build_observation_graph(two, 1);
    PathMatrix W2 = build_path_matrix(t2, o2);
    synthesize_observations(o2, W2, big_truth, NoiseLaw::gaussian, 1.0, {}, 31);
    double sum = 0.0;
    for (double v : o2[0].svf.data) sum += v;
    double n = static_cast<double>(o2[0].svf.data.size());
    CHECK(std::abs(sum / n) < 3.0 / std::sqrt(n));
  }
  SUBCASE("laplace noise: mean absolute deviation within 5% of b") {
    std::vector<SvfField> big_truth(1, SvfField::zeros(100, 100));
    std::vector<NodeId> two{{0, 1}, {0, 2}};
    auto t2 = build_spanning_tree(two);
    auto o2 = build_observation_graph(two, 1);
    PathMatrix W2 = build_path_matrix(t2, o2);
    synthesize_observations(o2, W2, big_truth, NoiseLaw::laplace, 1.0, {}, 77);
    double sum = 0.0;
    for (double v : o2[0].svf.data) sum += std::abs(v);
    CHECK(std::abs(sum / o2[0].svf.data.size() - 1.0) < 0.05);
  }
  SUBCASE("outlier rows are bounded uniform garbage") {
    auto o = obs;
    synthesize_observations(o, W, truth, NoiseLaw::none, 0.0, {2}, 9);
    bool differs = false;
    for (size_t i = 0; i < o[2].svf.data.size(); ++i) {
      CHECK(std::abs(o[2].svf.data[i]) <= 50.0);
      double want = 0.0;
      for (auto& [l, s] : W.row[2].entries) want += s * truth[l].data[i];
      if (std::abs(o[2].svf.data[i] - want) > 1e-9) differs = true;
    }
    CHECK(differs);
  }
  SUBCASE("row streams are order-free: same seed, same per-row values") {
    auto a = obs;
    auto b = obs;
    synthesize_observations(a, W, truth, NoiseLaw::gaussian, 1.0, {}, 55);
    synthesize_observations(b, W, truth, NoiseLaw::gaussian, 1.0, {}, 55);
    for (size_t k = 0; k < a.size(); ++k)
      for (size_t i = 0; i < a[k].svf.data.size(); ++i)
        CHECK(a[k].svf.data[i] == b[k].svf.data[i]);
  }
}

TEST_CASE("pick_outlier_rows counts and determinism") {
  auto rows = pick_outlier_rows(40, 0.10, 3);
  CHECK(rows.size() == 4);
  for (int r : rows) {
    CHECK(r >= 0);
    CHECK(r < 40);
  }
  CHECK(pick_outlier_rows(40, 0.10, 3) == rows);
  CHECK(pick_outlier_rows(40, 0.0, 3).empty());
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.sigma_lo = 5.0;
  cfg.sigma_hi = 3.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.outlier_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.outlier_angles = {45};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
