#include "histrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "histrec/io.hpp"
#include "histrec/lp.hpp"
#include "histrec/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace histrec {

namespace {

constexpr std::uint64_t kTruthTag = 0x54525554484C4154ULL;
constexpr std::uint64_t kCellTag = 0x43454C4C53454544ULL;

NoiseLaw parse_noise(const std::string& s) {
  if (s == "none") return NoiseLaw::none;
  if (s == "gaussian") return NoiseLaw::gaussian;
  if (s == "laplace") return NoiseLaw::laplace;
  throw ConfigError("unknown noise law: " + s);
}

int control_dim(int image_dim, int factor) {
  return std::max(2, (image_dim - 2) / factor + 2);  // ceil((dim-1)/factor) + 1
}

std::string spoke_name(const NodeId& n) {
  return "spoke_c" + std::to_string(n.contrast) + "_n" + std::to_string(n.level) + ".svf";
}

std::string chain_name(const TreeEdge& e) {
  return "chain_n" + std::to_string(e.from.level) + "_n" + std::to_string(e.to.level) + ".svf";
}

std::string reg_name(const ObservationEdge& o) {
  return "reg_c" + std::to_string(o.from.contrast) + "_n" + std::to_string(o.from.level) +
         "__c" + std::to_string(o.to.contrast) + "_n" + std::to_string(o.to.level) + ".svf";
}

/// One assembled inference problem plus everything needed for outputs.
struct Problem {
  std::vector<NodeId> nodes;
  std::vector<TreeEdge> tree;
  std::vector<ObservationEdge> obs;
  PathMatrix W;
  int C = 0;
  int img_h = 0, img_w = 0;
  int ch = 0, cw = 0;
  double spacing = 1.0;
  std::map<NodeId, ImageSection> images;  // sections (manifest + synthetic)
  SubgraphMap subgraphs;                  // empty => fully active
  bool has_subgraphs = false;
  std::vector<SvfField> truth;  // per tree edge; empty in manifest mode
};

ImageSection pattern_image(int h, int w, int contrast, int level) {
  ImageSection img = ImageSection::blank(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double v = 127.5 + 55.0 * std::sin(2.0 * M_PI * r / (13.0 + 2.0 * contrast)) *
                             std::cos(2.0 * M_PI * c / (17.0 + 3.0 * contrast));
      v += 30.0 * std::sin(0.37 * level + 2.0 * M_PI * (r + c) / 29.0);
      img.pixels[r * w + c] = std::clamp(v, 0.0, 255.0);
    }
  return img;
}

void drop_histology_coupling(std::vector<ObservationEdge>& obs) {
  std::erase_if(obs, [](const ObservationEdge& o) {
    return o.inter_flag == 1 && o.from.contrast >= 1 && o.to.contrast >= 1;
  });
  for (size_t i = 0; i < obs.size(); ++i) obs[i].index = static_cast<int>(i);
}

Problem build_synthetic(const PipelineConfig& cfg, int P, bool joint, double outlier_fraction,
                        std::uint64_t obs_seed) {
  const SyntheticConfig& sc = cfg.synthetic;
  if (sc.levels < 2) throw ConfigError("synthetic.levels must be >= 2");
  if (sc.contrasts < 0) throw ConfigError("synthetic.contrasts must be >= 0");
  Problem p;
  p.C = sc.contrasts;
  p.img_h = sc.image_height;
  p.img_w = sc.image_width;
  p.ch = control_dim(p.img_h, cfg.grid_factor);
  p.cw = control_dim(p.img_w, cfg.grid_factor);
  p.spacing = static_cast<double>(p.img_h - 1) / (p.ch - 1);
  for (int c = 0; c <= p.C; ++c)
    for (int n = 1; n <= sc.levels; ++n) p.nodes.push_back({c, n});
  p.tree = build_spanning_tree(p.nodes);
  p.obs = build_observation_graph(p.nodes, P);

  // Ground-truth latents on the control grid.
  p.truth.reserve(p.tree.size());
  for (const auto& e : p.tree)
    p.truth.push_back(synthetic_truth_latent(cfg.seed, e.index, p.ch, p.cw, p.spacing,
                                             sc.sigma_lo, sc.sigma_hi));

  std::set<int> outlier_rows =
      pick_outlier_rows(static_cast<int>(p.obs.size()), outlier_fraction, obs_seed);
  synthesize_observations(p.obs, build_path_matrix(p.tree, p.obs), p.truth,
                          parse_noise(sc.noise), sc.noise_param, outlier_rows, obs_seed);
  if (!joint) drop_histology_coupling(p.obs);
  p.W = build_path_matrix(p.tree, p.obs);

  // Synthetic sections: histology = reference pattern pulled back through the
  // inverse of its truth transform, so that warping by the truth recovers it.
  for (const auto& n : p.nodes) {
    if (n.contrast == 0) {
      p.images.emplace(n, pattern_image(p.img_h, p.img_w, 0, n.level));
      continue;
    }
    const TreeEdge* spoke = nullptr;
    for (const auto& e : p.tree)
      if (e.is_spoke() && e.to == n) spoke = &e;
    SvfField up = upsample_svf(p.truth[spoke->index], p.img_h, p.img_w);
    DeformationField inv = svf_exp(svf_negate(up));
    p.images.emplace(n, warp_image(pattern_image(p.img_h, p.img_w, n.contrast, n.level), inv));
  }
  return p;
}

Problem build_manifest(const PipelineConfig& cfg) {
  std::ifstream in(cfg.manifest_path);
  if (!in) throw DataError("cannot open manifest: " + cfg.manifest_path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  fs::path base = fs::path(cfg.manifest_path).parent_path();

  Problem p;
  if (!j.contains("nodes") || !j["nodes"].is_array() || j["nodes"].empty())
    throw DataError("manifest: missing or empty nodes list");
  for (const auto& nj : j["nodes"]) {
    NodeId n{nj.at("contrast").get<int>(), nj.at("level").get<int>()};
    ImageSection img = read_pgm((base / nj.at("image").get<std::string>()).string());
    if (nj.contains("mask"))
      read_mask_pgm((base / nj.at("mask").get<std::string>()).string(), img);
    img.contrast = n.contrast;
    img.level = n.level;
    if (p.img_h == 0) {
      p.img_h = img.height;
      p.img_w = img.width;
    } else if (img.height != p.img_h || img.width != p.img_w) {
      throw DataError("manifest: image dims differ across nodes");
    }
    p.nodes.push_back(n);
    p.images.emplace(n, std::move(img));
  }
  p.C = max_contrast(p.nodes);
  p.ch = control_dim(p.img_h, cfg.grid_factor);
  p.cw = control_dim(p.img_w, cfg.grid_factor);
  p.spacing = static_cast<double>(p.img_h - 1) / (p.ch - 1);
  p.tree = build_spanning_tree(p.nodes);
  p.obs = build_observation_graph(p.nodes, cfg.neighbourhood);

  std::string reg_dir = j.value("registration_dir", std::string("registrations"));
  for (auto& o : p.obs) {
    fs::path f = base / reg_dir / reg_name(o);
    if (!fs::exists(f)) throw DataError("missing registration file: " + f.string());
    SvfField full = read_svf(f.string());
    if (full.height != p.img_h || full.width != p.img_w)
      throw DataError("registration dims mismatch: " + f.string());
    SvfField low = downsample_svf_block_mean(full, cfg.grid_factor);
    if (low.height != p.ch || low.width != p.cw) low = upsample_svf(low, p.ch, p.cw);
    low.spacing = p.spacing;
    o.svf = std::move(low);
  }
  p.W = build_path_matrix(p.tree, p.obs);

  std::map<NodeId, const ImageSection*> masks;
  for (const auto& [n, img] : p.images) masks.emplace(n, &img);
  p.subgraphs = build_subgraphs(masks, p.ch, p.cw, p.obs);
  p.has_subgraphs = true;
  return p;
}

/// Splits a problem into slab subproblems (connected components of the
/// observation graph). Slab latents are mapped back via tree-edge endpoints.
struct Slab {
  StackGraph g;
  std::vector<int> tree_map;  // slab tree edge -> global tree edge index
  SubgraphMap sub;
  bool has_sub = false;
};

std::vector<Slab> split_slabs(const Problem& p) {
  auto comps = connected_components(p.nodes, p.obs);
  for (const auto& comp : comps)
    if (comp.size() == 1)
      throw DataError("node (c=" + std::to_string(comp[0].contrast) +
                      ", n=" + std::to_string(comp[0].level) +
                      ") is disconnected from all observations");
  std::map<NodeId, std::pair<int, int>> edge_key;  // (from,to) lookup for tree edges
  std::vector<Slab> slabs;
  for (const auto& comp : comps) {
    Slab s;
    std::set<NodeId> members(comp.begin(), comp.end());
    s.g.nodes = comp;
    s.g.num_contrasts = p.C;
    s.g.tree = build_spanning_tree(comp);
    for (auto& e : s.g.tree) {
      int gix = -1;
      for (const auto& ge : p.tree)
        if (ge.from == e.from && ge.to == e.to) gix = ge.index;
      if (gix < 0) throw DataError("slab tree edge missing from global tree");
      s.tree_map.push_back(gix);
    }
    std::vector<int> obs_map;
    for (const auto& o : p.obs)
      if (members.count(o.from)) {
        ObservationEdge copy = o;
        copy.index = static_cast<int>(s.g.observations.size());
        s.g.observations.push_back(std::move(copy));
        obs_map.push_back(o.index);
      }
    s.g.W = build_path_matrix(s.g.tree, s.g.observations);
    if (p.has_subgraphs) {
      s.sub = SubgraphMap(p.ch, p.cw, s.g.W.rows, true);
      for (int loc = 0; loc < p.ch * p.cw; ++loc)
        for (int k = 0; k < s.g.W.rows; ++k)
          s.sub.set_active(loc, k, p.subgraphs.active(loc, obs_map[k]));
      s.has_sub = true;
    }
    slabs.push_back(std::move(s));
  }
  return slabs;
}

struct SolveOutcome {
  std::vector<SvfField> latents;  // aligned with the global tree
  std::vector<SlabReport> slabs;
  LikelihoodParams params;
  double failed_fraction = 0.0;
};

SolveOutcome solve_problem(const Problem& p, const PipelineConfig& cfg, bool raw_p0) {
  SolveOutcome out;
  out.latents.assign(p.tree.size(), SvfField::zeros(p.ch, p.cw, p.spacing));

  if (raw_p0) {
    // Disconnected per-slice estimation: each spoke takes its raw
    // intermodality observation directly.
    for (const auto& e : p.tree) {
      if (!e.is_spoke()) continue;
      bool found = false;
      for (const auto& o : p.obs)
        if (o.from == e.from && o.to == e.to) {
          out.latents[e.index] = o.svf;
          found = true;
        }
      if (!found)
        throw DataError("raw P=0 estimation: no direct observation for spoke (c=" +
                        std::to_string(e.to.contrast) + ", n=" + std::to_string(e.to.level) + ")");
    }
    SlabReport sr;
    sr.nodes = static_cast<int>(p.nodes.size());
    sr.observations = static_cast<int>(p.obs.size());
    sr.latents = static_cast<int>(p.tree.size());
    out.slabs.push_back(sr);
    return out;
  }

  InferOptions opts;
  opts.threads = cfg.threads;
  long long failed = 0, total = 0;
  for (auto& slab : split_slabs(p)) {
    const SubgraphMap* sub = slab.has_sub ? &slab.sub : nullptr;
    // A node is disconnected inside the slab if no edge touching it is
    // active anywhere.
    if (sub) {
      for (const auto& n : slab.g.nodes) {
        bool touched = false;
        for (const auto& o : slab.g.observations) {
          if (!(o.from == n || o.to == n)) continue;
          for (int loc = 0; loc < p.ch * p.cw && !touched; ++loc)
            touched = sub->active(loc, o.index);
          if (touched) break;
        }
        if (!touched)
          throw DataError("node (c=" + std::to_string(n.contrast) +
                          ", n=" + std::to_string(n.level) +
                          ") has no active observations after mask gating");
      }
    }
    LatentSolution sol = cfg.model == "l2" ? infer_gaussian(slab.g, sub, opts)
                                           : infer_laplacian(slab.g, sub, opts);
    for (size_t l = 0; l < slab.g.tree.size(); ++l)
      out.latents[slab.tree_map[l]] = sol.latents[l];
    SlabReport sr;
    sr.nodes = static_cast<int>(slab.g.nodes.size());
    sr.observations = slab.g.W.rows;
    sr.latents = slab.g.W.cols;
    sr.cost = sol.final_cost;
    sr.lp_iterations = sol.lp_iterations;
    sr.converged = sol.converged;
    for (auto f : sol.flags) {
      sr.ridge_locations += (f & locflag::ridge) ? 1 : 0;
      sr.fallback_locations += (f & locflag::lp_fallback) ? 1 : 0;
      sr.skipped_locations += (f & locflag::skipped) ? 1 : 0;
      failed += (f & locflag::lp_fallback) ? 1 : 0;
      ++total;
    }
    out.slabs.push_back(sr);
    out.params = sol.params;
  }
  out.failed_fraction = total > 0 ? static_cast<double>(failed) / total : 0.0;
  return out;
}

/// Truth/estimate deformations per histology node: exp of the upsampled
/// spoke latents.
std::map<NodeId, DeformationField> integrate_spokes(const Problem& p,
                                                    const std::vector<SvfField>& latents) {
  std::map<NodeId, DeformationField> out;
  for (const auto& e : p.tree) {
    if (!e.is_spoke()) continue;
    out.emplace(e.to, svf_exp(upsample_svf(latents[e.index], p.img_h, p.img_w)));
  }
  return out;
}

/// contrast -> (E_W, E_B); key -1 = cross-contrast pair (1,2) when C >= 2.
std::map<int, std::pair<double, double>> metric_table(
    const Problem& p, const std::map<NodeId, DeformationField>& truth,
    const std::map<NodeId, DeformationField>& est) {
  std::map<int, std::pair<double, double>> table;
  std::vector<std::uint8_t> ones(static_cast<size_t>(p.img_h) * p.img_w, 1);
  for (int c = 1; c <= p.C; ++c) {
    std::vector<ErrorField> errs;
    for (const auto& [n, t] : truth) {
      if (n.contrast != c) continue;
      errs.push_back(pixel_error(t, est.at(n), ones));
    }
    if (errs.empty()) continue;
    table[c] = {intra_slice_error(errs),
                errs.size() >= 2 ? inter_slice_error(errs) : 0.0};
  }
  if (p.C >= 2) {
    std::vector<ErrorField> errs;
    for (const auto& [n, t] : truth) {
      if (n.contrast != 1) continue;
      NodeId n2{2, n.level};
      if (!truth.count(n2)) continue;
      errs.push_back(
          cross_contrast_error(t, truth.at(n2), est.at(n), est.at(n2), ones));
    }
    if (!errs.empty())
      table[-1] = {intra_slice_error(errs),
                   errs.size() >= 2 ? inter_slice_error(errs) : 0.0};
  }
  return table;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write: " + path.string());
  out << text;
}

ordered_json params_json(const LikelihoodParams& params) {
  ordered_json j;
  j["sigma2_inter"] = params.sigma2_inter;
  j["sigma2_contrast"] = params.sigma2_contrast;
  j["b"] = params.b;
  return j;
}

ordered_json metrics_json(const std::map<int, std::pair<double, double>>& table) {
  ordered_json j = ordered_json::object();
  for (const auto& [c, ew_eb] : table) {
    std::string key = c == -1 ? "cross_1_2" : "contrast_" + std::to_string(c);
    j[key] = {{"e_within", ew_eb.first}, {"e_between", ew_eb.second}};
  }
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  if (mode != "synthetic" && mode != "manifest")
    throw ConfigError("mode must be synthetic or manifest");
  if (mode == "manifest" && manifest_path.empty())
    throw ConfigError("manifest mode needs a manifest path");
  if (model != "l1" && model != "l2") throw ConfigError("model must be l1 or l2");
  if (neighbourhood < 0) throw ConfigError("neighbourhood (P) must be >= 0");
  if (grid_factor < 1) throw ConfigError("grid_factor must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  parse_noise(synthetic.noise);
  for (const auto& m : benchmark.models)
    if (m != "l1" && m != "l2") throw ConfigError("benchmark model must be l1 or l2");
  for (const auto& c : benchmark.couplings)
    if (c != "joint" && c != "per_contrast")
      throw ConfigError("benchmark coupling must be joint or per_contrast");
  for (int pv : benchmark.p_values)
    if (pv < 0) throw ConfigError("benchmark P values must be >= 0");
  for (double f : benchmark.outlier_fractions)
    if (f < 0.0 || f > 1.0) throw ConfigError("outlier fractions must lie in [0,1]");
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  PipelineConfig cfg;
  try {
    cfg.mode = j.value("mode", cfg.mode);
    cfg.manifest_path = j.value("manifest", cfg.manifest_path);
    cfg.model = j.value("model", cfg.model);
    cfg.neighbourhood = j.value("neighbourhood", cfg.neighbourhood);
    cfg.grid_factor = j.value("grid_factor", cfg.grid_factor);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.emit_timing = j.value("emit_timing", cfg.emit_timing);
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      cfg.synthetic.levels = s.value("levels", cfg.synthetic.levels);
      cfg.synthetic.contrasts = s.value("contrasts", cfg.synthetic.contrasts);
      cfg.synthetic.image_height = s.value("image_height", cfg.synthetic.image_height);
      cfg.synthetic.image_width = s.value("image_width", cfg.synthetic.image_width);
      if (s.contains("sigma")) {
        cfg.synthetic.sigma_lo = s["sigma"].at(0).get<double>();
        cfg.synthetic.sigma_hi = s["sigma"].at(1).get<double>();
      }
      cfg.synthetic.noise = s.value("noise", cfg.synthetic.noise);
      cfg.synthetic.noise_param = s.value("noise_param", cfg.synthetic.noise_param);
      cfg.synthetic.outlier_fraction = s.value("outlier_fraction", cfg.synthetic.outlier_fraction);
    }
    if (j.contains("benchmark")) {
      const auto& b = j["benchmark"];
      if (b.contains("models")) cfg.benchmark.models = b["models"].get<std::vector<std::string>>();
      if (b.contains("couplings"))
        cfg.benchmark.couplings = b["couplings"].get<std::vector<std::string>>();
      if (b.contains("p_values")) cfg.benchmark.p_values = b["p_values"].get<std::vector<int>>();
      if (b.contains("outlier_fractions"))
        cfg.benchmark.outlier_fractions = b["outlier_fractions"].get<std::vector<double>>();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config field error: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

SvfField synthetic_truth_latent(std::uint64_t seed, int edge_index, int grid_h, int grid_w,
                                double spacing, double sigma_lo, double sigma_hi) {
  SynthConfig gen;
  gen.sigma_lo = sigma_lo;
  gen.sigma_hi = sigma_hi;
  gen.seed = seed;
  Rng rng = Rng::stream(seed ^ kTruthTag, static_cast<std::uint64_t>(edge_index));
  return synth_svf(gen, grid_h, grid_w, spacing, rng);
}

std::uint64_t cell_seed(std::uint64_t seed, int p, int frac_index) {
  return Rng::stream(seed ^ kCellTag,
                     (static_cast<std::uint64_t>(p) << 16) | static_cast<std::uint64_t>(frac_index))
      .next_u64();
}

RunReport run_reconstruction(const PipelineConfig& cfg) {
  cfg.validate();
  fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);

  Problem p = cfg.mode == "synthetic"
                  ? build_synthetic(cfg, cfg.neighbourhood, true,
                                    cfg.synthetic.outlier_fraction,
                                    cell_seed(cfg.seed, cfg.neighbourhood, 0))
                  : build_manifest(cfg);

  auto t0 = std::chrono::steady_clock::now();
  SolveOutcome solved = solve_problem(p, cfg, false);
  auto t1 = std::chrono::steady_clock::now();

  // Latent fields.
  fs::create_directories(out_dir / "latents");
  for (const auto& e : p.tree) {
    std::string name = e.is_spoke() ? spoke_name(e.to) : chain_name(e);
    write_svf((out_dir / "latents" / name).string(), solved.latents[e.index]);
  }

  // Reconstructed per-contrast stacks: reference sections pass through,
  // histology sections are warped into the reference frame.
  auto est = integrate_spokes(p, solved.latents);
  for (const auto& n : p.nodes) {
    fs::path dir = out_dir / "recon" / std::to_string(n.contrast);
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof name, "slice_%04d.pgm", n.level);
    const ImageSection& img = p.images.at(n);
    if (n.contrast == 0)
      write_pgm((dir / name).string(), img);
    else
      write_pgm((dir / name).string(), warp_image(img, est.at(n)));
  }

  RunReport rep;
  rep.slabs = solved.slabs;
  rep.params = solved.params;
  rep.failed_location_fraction = solved.failed_fraction;

  ordered_json j;
  j["mode"] = cfg.mode;
  j["model"] = cfg.model;
  j["neighbourhood"] = cfg.neighbourhood;
  j["grid_factor"] = cfg.grid_factor;
  j["seed"] = cfg.seed;
  j["control_grid"] = {p.ch, p.cw};
  j["image_dims"] = {p.img_h, p.img_w};
  auto& slabs = j["slabs"] = ordered_json::array();
  for (const auto& s : rep.slabs) {
    ordered_json sj;
    sj["nodes"] = s.nodes;
    sj["observations"] = s.observations;
    sj["latents"] = s.latents;
    sj["cost"] = s.cost;
    sj["lp_iterations"] = s.lp_iterations;
    sj["converged"] = s.converged;
    sj["ridge_locations"] = s.ridge_locations;
    sj["fallback_locations"] = s.fallback_locations;
    sj["skipped_locations"] = s.skipped_locations;
    slabs.push_back(std::move(sj));
  }
  j["params"] = params_json(rep.params);
  j["failed_location_fraction"] = rep.failed_location_fraction;
  bool empty_spokes = est.empty();
  j["spoke_outputs"] = static_cast<int>(est.size());
  if (empty_spokes) j["note"] = "reference-only stack: no histology transforms estimated";

  if (cfg.mode == "synthetic") {
    // Truth manifest + metrics against the known latents.
    fs::create_directories(out_dir / "truth");
    ordered_json tm;
    tm["image_height"] = p.img_h;
    tm["image_width"] = p.img_w;
    tm["seed"] = cfg.seed;
    auto& tslices = tm["slices"] = ordered_json::array();
    for (const auto& e : p.tree) {
      if (!e.is_spoke()) continue;
      std::string name = spoke_name(e.to);
      write_svf((out_dir / "truth" / name).string(), p.truth[e.index]);
      tslices.push_back({{"contrast", e.to.contrast},
                         {"level", e.to.level},
                         {"svf", "truth/" + name},
                         {"outlier", false}});
    }
    write_text(out_dir / "truth_manifest.json", tm.dump(2) + "\n");

    auto truth_def = integrate_spokes(p, p.truth);
    rep.metrics = metric_table(p, truth_def, est);
    j["metrics"] = metrics_json(rep.metrics);

    // Per-slice metrics table.
    std::ostringstream csv;
    csv << "contrast,level,mean_norm,valid_pixels\n";
    std::vector<std::uint8_t> ones(static_cast<size_t>(p.img_h) * p.img_w, 1);
    for (const auto& [node, t] : truth_def) {
      ErrorField e = pixel_error(t, est.at(node), ones);
      double s = 0.0;
      for (int i = 0; i < e.size(); ++i) s += std::hypot(e.ec[i], e.er[i]);
      csv << node.contrast << ',' << node.level << ',' << fmt17(s / e.size()) << ','
          << e.size() << '\n';
    }
    write_text(out_dir / "metrics.csv", csv.str());
  }

  if (cfg.emit_timing) {
    j["timing"] = {{"solve_seconds", std::chrono::duration<double>(t1 - t0).count()}};
  }
  rep.report_path = (out_dir / "report.json").string();
  write_text(rep.report_path, j.dump(2) + "\n");
  return rep;
}

std::vector<BenchmarkRow> run_benchmark(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.mode != "synthetic") throw ConfigError("benchmark requires synthetic mode");
  fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);

  std::vector<BenchmarkRow> rows;
  for (const auto& model : cfg.benchmark.models)
    for (const auto& coupling : cfg.benchmark.couplings)
      for (int P : cfg.benchmark.p_values)
        for (size_t fi = 0; fi < cfg.benchmark.outlier_fractions.size(); ++fi) {
          double frac = cfg.benchmark.outlier_fractions[fi];
          PipelineConfig cell = cfg;
          cell.model = model;
          cell.neighbourhood = P;
          Problem p = build_synthetic(cell, P, coupling == "joint", frac,
                                      cell_seed(cfg.seed, P, static_cast<int>(fi)));
          SolveOutcome solved = solve_problem(p, cell, P == 0);
          auto truth_def = integrate_spokes(p, p.truth);
          auto est = integrate_spokes(p, solved.latents);
          BenchmarkRow row;
          row.model = model;
          row.coupling = coupling;
          row.p = P;
          row.outlier_fraction = frac;
          row.metrics = metric_table(p, truth_def, est);
          rows.push_back(std::move(row));
        }

  write_text(out_dir / "metrics.csv", benchmark_csv(rows));
  ordered_json j;
  j["mode"] = "benchmark";
  j["seed"] = cfg.seed;
  j["levels"] = cfg.synthetic.levels;
  j["contrasts"] = cfg.synthetic.contrasts;
  auto& arr = j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json rj;
    rj["model"] = r.model;
    rj["coupling"] = r.coupling;
    rj["p"] = r.p;
    rj["outlier_fraction"] = r.outlier_fraction;
    rj["metrics"] = metrics_json(r.metrics);
    arr.push_back(std::move(rj));
  }
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  emit_plots(rows, (out_dir / "plots").string());
  return rows;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream os;
  os << "model,coupling,p,outlier_fraction,contrast,e_within,e_between\n";
  for (const auto& r : rows)
    for (const auto& [c, ew_eb] : r.metrics) {
      std::string key = c == -1 ? "cross_1_2" : std::to_string(c);
      os << r.model << ',' << r.coupling << ',' << r.p << ',' << fmt17(r.outlier_fraction)
         << ',' << key << ',' << fmt17(ew_eb.first) << ',' << fmt17(ew_eb.second) << '\n';
    }
  return os.str();
}

namespace {

std::string fmt3(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::string render_svg(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
  const double W = 640, H = 480, ml = 70, mr = 30, mt = 40, mb = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
  if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
        "viewBox=\"0 0 640 480\">\n";
  os << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  os << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
     << "</text>\n";
  os << "<line x1=\"" << fmt3(ml) << "\" y1=\"" << fmt3(H - mb) << "\" x2=\"" << fmt3(W - mr)
     << "\" y2=\"" << fmt3(H - mb) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt3(ml) << "\" y1=\"" << fmt3(mt) << "\" x2=\"" << fmt3(ml)
     << "\" y2=\"" << fmt3(H - mb) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"320\" y=\"466\" text-anchor=\"middle\" font-size=\"13\">" << x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"240\" text-anchor=\"middle\" font-size=\"13\" "
        "transform=\"rotate(-90 18 240)\">"
     << y_label << "</text>\n";
  // Axis extent labels.
  os << "<text x=\"" << fmt3(ml) << "\" y=\"" << fmt3(H - mb + 18)
     << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt3(x0) << "</text>\n";
  os << "<text x=\"" << fmt3(W - mr) << "\" y=\"" << fmt3(H - mb + 18)
     << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt3(x1) << "</text>\n";
  os << "<text x=\"" << fmt3(ml - 8) << "\" y=\"" << fmt3(H - mb)
     << "\" text-anchor=\"end\" font-size=\"11\">" << fmt3(y0) << "</text>\n";
  os << "<text x=\"" << fmt3(ml - 8) << "\" y=\"" << fmt3(mt + 4)
     << "\" text-anchor=\"end\" font-size=\"11\">" << fmt3(y1) << "</text>\n";
  int ci = 0;
  for (const auto& s : series) {
    const char* color = palette[ci % 8];
    if (s.points.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.points.size(); ++i) {
        if (i) os << ' ';
        os << fmt3(px(s.points[i].first)) << ',' << fmt3(py(s.points[i].second));
      }
      os << "\"/>\n";
    }
    for (auto [x, y] : s.points)
      os << "<circle cx=\"" << fmt3(px(x)) << "\" cy=\"" << fmt3(py(y))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << fmt3(W - mr - 4) << "\" y=\"" << fmt3(mt + 16 + 16 * ci)
       << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << s.label
       << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
  return os.str();
}

double mean_metric(const BenchmarkRow& r, bool between) {
  double s = 0.0;
  int n = 0;
  for (const auto& [c, ew_eb] : r.metrics) {
    if (c == -1) continue;
    s += between ? ew_eb.second : ew_eb.first;
    ++n;
  }
  return n > 0 ? s / n : 0.0;
}

}  // namespace

std::vector<std::string> emit_plots(const std::vector<BenchmarkRow>& rows,
                                    const std::string& plot_dir) {
  fs::create_directories(plot_dir);
  std::vector<std::string> files;

  // E_B vs P at the smallest outlier fraction present.
  double base_frac = rows.empty() ? 0.0
                                  : std::min_element(rows.begin(), rows.end(),
                                                     [](const auto& a, const auto& b) {
                                                       return a.outlier_fraction <
                                                              b.outlier_fraction;
                                                     })
                                        ->outlier_fraction;
  std::map<std::string, Series> by_cfg;
  for (const auto& r : rows) {
    if (r.outlier_fraction != base_frac) continue;
    std::string key = r.model + "/" + r.coupling;
    by_cfg[key].label = key;
    by_cfg[key].points.push_back({static_cast<double>(r.p), mean_metric(r, true)});
  }
  std::vector<Series> s1;
  for (auto& [k, s] : by_cfg) {
    std::sort(s.points.begin(), s.points.end());
    s1.push_back(std::move(s));
  }
  std::string f1 = (fs::path(plot_dir) / "eb_vs_p.svg").string();
  write_text(f1, render_svg("Inter-slice error vs neighbourhood radius", "P",
                            "E_B (px)", s1));
  files.push_back(f1);

  // E_W vs outlier fraction at the largest P present.
  int max_p = 0;
  for (const auto& r : rows) max_p = std::max(max_p, r.p);
  std::map<std::string, Series> by_cfg2;
  for (const auto& r : rows) {
    if (r.p != max_p) continue;
    std::string key = r.model + "/" + r.coupling;
    by_cfg2[key].label = key;
    by_cfg2[key].points.push_back({r.outlier_fraction, mean_metric(r, false)});
  }
  std::vector<Series> s2;
  for (auto& [k, s] : by_cfg2) {
    std::sort(s.points.begin(), s.points.end());
    s2.push_back(std::move(s));
  }
  std::string f2 = (fs::path(plot_dir) / "ew_vs_outliers.svg").string();
  write_text(f2, render_svg("Intra-slice error vs outlier fraction", "outlier fraction",
                            "E_W (px)", s2));
  files.push_back(f2);
  return files;
}

std::string evaluate_against_truth(const std::string& truth_manifest,
                                   const std::string& est_dir) {
  std::ifstream in(truth_manifest);
  if (!in) throw DataError("cannot open truth manifest: " + truth_manifest);
  ordered_json tm;
  try {
    in >> tm;
  } catch (const std::exception& e) {
    throw DataError("truth manifest parse error: " + std::string(e.what()));
  }
  fs::path base = fs::path(truth_manifest).parent_path();
  int H = tm.at("image_height").get<int>();
  int W = tm.at("image_width").get<int>();
  std::vector<std::uint8_t> ones(static_cast<size_t>(H) * W, 1);

  std::map<int, std::vector<ErrorField>> per_contrast;
  int excluded = 0;
  for (const auto& sj : tm.at("slices")) {
    if (sj.value("outlier", false)) {
      ++excluded;
      continue;
    }
    int c = sj.at("contrast").get<int>();
    int n = sj.at("level").get<int>();
    SvfField truth = read_svf((base / sj.at("svf").get<std::string>()).string());
    fs::path est_path = fs::path(est_dir) / "latents" / spoke_name(NodeId{c, n});
    if (!fs::exists(est_path)) throw DataError("missing estimate: " + est_path.string());
    SvfField est = read_svf(est_path.string());
    DeformationField dt = svf_exp(upsample_svf(truth, H, W));
    DeformationField de = svf_exp(upsample_svf(est, H, W));
    per_contrast[c].push_back(pixel_error(dt, de, ones));
  }

  ordered_json j;
  j["excluded_slices"] = excluded;
  ordered_json m = ordered_json::object();
  for (const auto& [c, errs] : per_contrast)
    m["contrast_" + std::to_string(c)] = {
        {"e_within", intra_slice_error(errs)},
        {"e_between", errs.size() >= 2 ? inter_slice_error(errs) : 0.0}};
  j["metrics"] = std::move(m);
  return j.dump(2) + "\n";
}

std::string dump_lp_at(const PipelineConfig& cfg, int row, int col) {
  cfg.validate();
  Problem p = cfg.mode == "synthetic"
                  ? build_synthetic(cfg, cfg.neighbourhood, true,
                                    cfg.synthetic.outlier_fraction,
                                    cell_seed(cfg.seed, cfg.neighbourhood, 0))
                  : build_manifest(cfg);
  if (row < 0 || row >= p.ch || col < 0 || col >= p.cw)
    throw ConfigError("lp-dump location outside the control grid");
  int loc = row * p.cw + col;
  int n = p.ch * p.cw;
  std::ostringstream os;
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<int> active;
    std::vector<double> r;
    for (const auto& o : p.obs) {
      if (p.has_subgraphs && !p.subgraphs.active(loc, o.index)) continue;
      active.push_back(o.index);
      r.push_back(o.svf.data[axis == 0 ? loc : n + loc]);
    }
    os << "# axis " << (axis == 0 ? "x1 (columns)" : "x2 (rows)") << " at location (" << row
       << ", " << col << ")\n";
    os << format_lp(assemble_lad_lp(p.W, active, r)) << '\n';
  }
  return os.str();
}

}  // namespace histrec
