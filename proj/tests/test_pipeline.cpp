#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "histrec/io.hpp"
#include "histrec/pipeline.hpp"

using namespace histrec;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("histrec_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

PipelineConfig small_synth(const fs::path& out, const std::string& model) {
  PipelineConfig cfg;
  cfg.mode = "synthetic";
  cfg.model = model;
  cfg.neighbourhood = 2;
  cfg.grid_factor = 8;
  cfg.output_dir = out.string();
  cfg.seed = 1234;
  cfg.synthetic.levels = 10;
  cfg.synthetic.contrasts = 2;
  cfg.synthetic.image_height = 33;
  cfg.synthetic.image_width = 33;
  cfg.synthetic.noise = "none";
  cfg.synthetic.outlier_fraction = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("config loading and validation") {
  fs::path dir = temp_dir("cfg");
  SUBCASE("valid config round trips") {
    std::ofstream(dir / "ok.json")
        << R"({"mode":"synthetic","model":"l1","neighbourhood":2,"grid_factor":8,)"
        << R"("output_dir":")" << (dir / "out").string() << R"(","seed":7,)"
        << R"("synthetic":{"levels":5,"contrasts":1,"image_height":17,"image_width":17,)"
        << R"("sigma":[1,2],"noise":"gaussian","noise_param":0.5},)"
        << R"("benchmark":{"models":["l1"],"p_values":[0,2],"outlier_fractions":[0.0]}})";
    PipelineConfig cfg = load_config((dir / "ok.json").string());
    CHECK(cfg.model == "l1");
    CHECK(cfg.seed == 7);
    CHECK(cfg.synthetic.sigma_hi == 2.0);
    CHECK(cfg.benchmark.p_values == std::vector<int>{0, 2});
  }
  SUBCASE("bad model is a config error") {
    std::ofstream(dir / "bad.json") << R"({"model":"l3","output_dir":"x"})";
    CHECK_THROWS_AS(load_config((dir / "bad.json").string()), ConfigError);
  }
  SUBCASE("malformed json is a config error") {
    std::ofstream(dir / "broken.json") << "{not json";
    CHECK_THROWS_AS(load_config((dir / "broken.json").string()), ConfigError);
  }
  SUBCASE("missing file is a config error") {
    CHECK_THROWS_AS(load_config((dir / "absent.json").string()), ConfigError);
  }
  SUBCASE("manifest mode requires a manifest path") {
    PipelineConfig cfg;
    cfg.mode = "manifest";
    cfg.output_dir = "x";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing manifest data is a data error") {
  fs::path dir = temp_dir("baddata");
  PipelineConfig cfg;
  cfg.mode = "manifest";
  cfg.manifest_path = (dir / "missing.json").string();
  cfg.output_dir = (dir / "out").string();
  CHECK_THROWS_AS(run_reconstruction(cfg), DataError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic closed loop: noise-free L1 run recovers the truth") {
  fs::path dir = temp_dir("loop_l1");
  PipelineConfig cfg = small_synth(dir / "out", "l1");
  RunReport rep = run_reconstruction(cfg);

  // Latent .svf outputs match the truth latents on the control grid.
  for (int c = 1; c <= 2; ++c)
    for (int n = 1; n <= 10; ++n) {
      std::string name = "spoke_c" + std::to_string(c) + "_n" + std::to_string(n) + ".svf";
      SvfField est = read_svf((dir / "out" / "latents" / name).string());
      SvfField truth = read_svf((dir / "out" / "truth" / name).string());
      for (size_t i = 0; i < est.data.size(); ++i)
        CHECK(std::abs(est.data[i] - truth.data[i]) < 1e-6);
    }
  for (const auto& [c, ew_eb] : rep.metrics) CHECK(ew_eb.first < 0.1);
  CHECK(rep.failed_location_fraction == 0.0);
  CHECK(fs::exists(dir / "out" / "report.json"));
  CHECK(fs::exists(dir / "out" / "metrics.csv"));
  CHECK(fs::exists(dir / "out" / "recon" / "1" / "slice_0001.pgm"));

  // The emitted truth manifest can be re-evaluated by the metrics entry point.
  std::string mj = evaluate_against_truth((dir / "out" / "truth_manifest.json").string(),
                                          (dir / "out").string());
  CHECK(mj.find("\"contrast_1\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("outlier rows hurt L2 more than L1") {
  fs::path clean_dir = temp_dir("loop_clean");
  fs::path l1_dir = temp_dir("loop_l1o");
  fs::path l2_dir = temp_dir("loop_l2o");

  PipelineConfig clean = small_synth(clean_dir / "out", "l1");
  RunReport base = run_reconstruction(clean);

  PipelineConfig l1 = small_synth(l1_dir / "out", "l1");
  l1.synthetic.outlier_fraction = 0.10;
  RunReport r1 = run_reconstruction(l1);

  PipelineConfig l2 = small_synth(l2_dir / "out", "l2");
  l2.synthetic.outlier_fraction = 0.10;
  RunReport r2 = run_reconstruction(l2);

  for (int c = 1; c <= 2; ++c) {
    // Outliers are uniform in [-50, 50] px; the L1 fit should stay within a
    // pixel of the (noise-free) base run while L2 degrades well past it.
    CHECK(base.metrics.at(c).first < 1e-6);
    CHECK(r1.metrics.at(c).first < 1.0);
    CHECK(r2.metrics.at(c).first > r1.metrics.at(c).first);
  }
  fs::remove_all(clean_dir);
  fs::remove_all(l1_dir);
  fs::remove_all(l2_dir);
}

TEST_CASE("reference-only stack produces no spoke outputs") {
  fs::path dir = temp_dir("refonly");
  PipelineConfig cfg = small_synth(dir / "out", "l2");
  cfg.synthetic.contrasts = 0;
  cfg.synthetic.levels = 4;
  RunReport rep = run_reconstruction(cfg);
  CHECK(rep.metrics.empty());
  std::string report = slurp(dir / "out" / "report.json");
  CHECK(report.find("\"spoke_outputs\": 0") != std::string::npos);
  CHECK(report.find("reference-only") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("benchmark sweep: determinism, P=0 raw equivalence, coupling filter") {
  fs::path dir_a = temp_dir("bench_a");
  fs::path dir_b = temp_dir("bench_b");
  PipelineConfig cfg = small_synth(dir_a / "out", "l1");
  cfg.synthetic.levels = 8;
  cfg.synthetic.noise = "gaussian";
  cfg.synthetic.noise_param = 0.5;
  cfg.benchmark.models = {"l1"};
  cfg.benchmark.couplings = {"joint", "per_contrast"};
  cfg.benchmark.p_values = {0, 2};
  cfg.benchmark.outlier_fractions = {0.0};
  cfg.threads = 1;
  auto rows_a = run_benchmark(cfg);

  PipelineConfig cfg_b = cfg;
  cfg_b.output_dir = (dir_b / "out").string();
  cfg_b.threads = 4;
  auto rows_b = run_benchmark(cfg_b);

  SUBCASE("outputs are byte-identical across parallelism degrees") {
    CHECK(slurp(dir_a / "out" / "report.json") == slurp(dir_b / "out" / "report.json"));
    CHECK(slurp(dir_a / "out" / "metrics.csv") == slurp(dir_b / "out" / "metrics.csv"));
    CHECK(slurp(dir_a / "out" / "plots" / "eb_vs_p.svg") ==
          slurp(dir_b / "out" / "plots" / "eb_vs_p.svg"));
  }
  SUBCASE("E_B improves from P=0 to P=2 under the Laplacian model") {
    auto find = [&](const std::string& coupling, int p) -> const BenchmarkRow& {
      for (const auto& r : rows_a)
        if (r.coupling == coupling && r.p == p) return r;
      FAIL("row not found");
      return rows_a.front();
    };
    const auto& p0 = find("joint", 0);
    const auto& p2 = find("joint", 2);
    for (int c = 1; c <= 2; ++c) CHECK(p2.metrics.at(c).second < p0.metrics.at(c).second);
  }
  SUBCASE("joint and per-contrast P=0 rows agree (no histology coupling used)") {
    for (size_t i = 0; i < rows_a.size(); ++i)
      if (rows_a[i].p == 0 && rows_a[i].coupling == "joint")
        for (const auto& r2 : rows_a)
          if (r2.p == 0 && r2.coupling == "per_contrast")
            for (int c = 1; c <= 2; ++c)
              CHECK(rows_a[i].metrics.at(c).first == r2.metrics.at(c).first);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("plot rendering is deterministic and handles degenerate sweeps") {
  fs::path dir = temp_dir("plots");
  SUBCASE("empty sweep yields a well-formed empty-axes SVG") {
    auto files = emit_plots({}, (dir / "empty").string());
    REQUIRE(files.size() == 2);
    std::string svg = slurp(files[0]);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("polyline") == std::string::npos);
  }
  SUBCASE("single point renders one marker with its series label") {
    BenchmarkRow row;
    row.model = "l1";
    row.coupling = "joint";
    row.p = 2;
    row.outlier_fraction = 0.0;
    row.metrics[1] = {0.5, 0.25};
    auto files = emit_plots({row}, (dir / "single").string());
    std::string svg = slurp(files[0]);
    CHECK(svg.find("<circle") != std::string::npos);
    CHECK(svg.find("l1/joint") != std::string::npos);
  }
  SUBCASE("golden snapshot of a fixed two-point sweep") {
    std::vector<BenchmarkRow> rows;
    for (int p : {0, 2}) {
      BenchmarkRow r;
      r.model = "l1";
      r.coupling = "joint";
      r.p = p;
      r.outlier_fraction = 0.0;
      r.metrics[1] = {1.0 / (p + 1), 2.0 / (p + 1)};
      rows.push_back(r);
    }
    auto first = emit_plots(rows, (dir / "g1").string());
    auto second = emit_plots(rows, (dir / "g2").string());
    std::string svg = slurp(first[0]);
    CHECK(svg == slurp(second[0]));
    // Stable anchors of the snapshot: title, axis labels, both data points.
    CHECK(svg.find("Inter-slice error vs neighbourhood radius") != std::string::npos);
    CHECK(svg.find("E_B (px)") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("lp-dump emits both axes for a valid location and rejects bad ones") {
  fs::path dir = temp_dir("lpdump");
  PipelineConfig cfg = small_synth(dir / "out", "l1");
  cfg.synthetic.levels = 3;
  std::string dump = dump_lp_at(cfg, 1, 1);
  CHECK(dump.find("axis x1") != std::string::npos);
  CHECK(dump.find("axis x2") != std::string::npos);
  CHECK_THROWS_AS(dump_lp_at(cfg, 99, 0), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip through files") {
  fs::path dir = temp_dir("manifest");
  // Build a small dataset on disk: 2 levels, 1 contrast, identity-like regs.
  const int H = 17, W = 17;
  fs::create_directories(dir / "regs");
  std::ostringstream manifest;
  manifest << R"({"registration_dir":"regs","nodes":[)";
  bool first = true;
  for (int c = 0; c <= 1; ++c)
    for (int n = 1; n <= 2; ++n) {
      ImageSection img = ImageSection::blank(H, W, 100.0 + 10 * c + n);
      std::string iname = "img_c" + std::to_string(c) + "_n" + std::to_string(n) + ".pgm";
      write_pgm((dir / iname).string(), img);
      if (!first) manifest << ',';
      first = false;
      manifest << R"({"contrast":)" << c << R"(,"level":)" << n << R"(,"image":")" << iname
               << R"("})";
    }
  manifest << "]}";
  std::ofstream(dir / "manifest.json") << manifest.str();

  // Registrations: constant translation fields at image resolution.
  std::vector<NodeId> nodes{{0, 1}, {0, 2}, {1, 1}, {1, 2}};
  auto obs = build_observation_graph(nodes, 1);
  auto tree = build_spanning_tree(nodes);
  PathMatrix Wm = build_path_matrix(tree, obs);
  std::vector<SvfField> truth;
  for (size_t l = 0; l < tree.size(); ++l)
    truth.push_back(SvfField::constant(H, W, 1.0 + l, -0.5 * (l + 1)));
  for (const auto& o : obs) {
    SvfField f = SvfField::zeros(H, W);
    for (auto& [l, s] : Wm.row[o.index].entries)
      for (size_t i = 0; i < f.data.size(); ++i) f.data[i] += s * truth[l].data[i];
    std::string name = "reg_c" + std::to_string(o.from.contrast) + "_n" +
                       std::to_string(o.from.level) + "__c" + std::to_string(o.to.contrast) +
                       "_n" + std::to_string(o.to.level) + ".svf";
    write_svf((dir / "regs" / name).string(), f);
  }

  PipelineConfig cfg;
  cfg.mode = "manifest";
  cfg.manifest_path = (dir / "manifest.json").string();
  cfg.model = "l1";
  cfg.neighbourhood = 1;
  cfg.grid_factor = 8;
  cfg.output_dir = (dir / "out").string();
  RunReport rep = run_reconstruction(cfg);
  CHECK(rep.slabs.size() == 1);
  CHECK(rep.slabs[0].observations == static_cast<int>(obs.size()));

  // Constant-translation truths are recovered exactly on the control grid.
  for (const auto& e : tree) {
    if (!e.is_spoke()) continue;
    std::string name = "spoke_c" + std::to_string(e.to.contrast) + "_n" +
                       std::to_string(e.to.level) + ".svf";
    SvfField est = read_svf((dir / "out" / "latents" / name).string());
    for (int i = 0; i < est.size(); ++i) {
      CHECK(est.data[i] == doctest::Approx(1.0 + e.index).epsilon(1e-5));
      CHECK(est.data[est.size() + i] == doctest::Approx(-0.5 * (e.index + 1)).epsilon(1e-5));
    }
  }
  fs::remove_all(dir);
}
