#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "histrec/inference.hpp"
#include "histrec/synth.hpp"

namespace histrec {

/// Invalid or inconsistent configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Missing or malformed input data (CLI exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SyntheticConfig {
  int levels = 10;
  int contrasts = 2;
  int image_height = 65;
  int image_width = 65;
  double sigma_lo = 3.0;
  double sigma_hi = 7.0;
  std::string noise = "none";  // none | gaussian | laplace
  double noise_param = 1.0;
  double outlier_fraction = 0.0;
};

struct BenchmarkConfig {
  std::vector<std::string> models{"l1", "l2"};
  std::vector<std::string> couplings{"joint", "per_contrast"};
  std::vector<int> p_values{0, 1, 2, 3, 4};
  std::vector<double> outlier_fractions{0.0, 0.02, 0.05, 0.10, 0.20};
};

struct PipelineConfig {
  std::string mode = "synthetic";  // synthetic | manifest
  std::string manifest_path;
  std::string model = "l1";  // l1 | l2
  int neighbourhood = 2;     // P
  int grid_factor = 8;
  std::string output_dir;
  int threads = 1;
  std::uint64_t seed = 0;
  bool emit_timing = false;  // wall times are excluded from reports by default
  SyntheticConfig synthetic;
  BenchmarkConfig benchmark;

  void validate() const;
};

PipelineConfig load_config(const std::string& path);

struct SlabReport {
  int nodes = 0;
  int observations = 0;  // K
  int latents = 0;       // L
  double cost = 0.0;
  int lp_iterations = 0;
  bool converged = true;
  int ridge_locations = 0;
  int fallback_locations = 0;
  int skipped_locations = 0;
};

struct RunReport {
  std::vector<SlabReport> slabs;
  LikelihoodParams params;
  double failed_location_fraction = 0.0;
  // Per-contrast metrics vs truth (synthetic mode): contrast -> (E_W, E_B).
  std::map<int, std::pair<double, double>> metrics;
  std::string report_path;
};

/// One benchmark sweep cell and its metric outcomes.
struct BenchmarkRow {
  std::string model;
  std::string coupling;  // joint | per_contrast
  int p = 0;
  double outlier_fraction = 0.0;
  // contrast -> (E_W, E_B); key -1 holds the cross-contrast pair (1,2).
  std::map<int, std::pair<double, double>> metrics;
};

/// Full reconstruction: build graphs, run inference per slab, integrate and
/// apply the latent transforms. Writes latents/*.svf, recon/<c>/*.pgm,
/// report.json and (synthetic mode) metrics.csv + a truth manifest under
/// cfg.output_dir.
RunReport run_reconstruction(const PipelineConfig& cfg);

/// Synthetic benchmark sweep over model x coupling x P x outlier fraction.
/// Writes report.json, metrics.csv and plots/*.svg under cfg.output_dir.
std::vector<BenchmarkRow> run_benchmark(const PipelineConfig& cfg);

/// Deterministic SVG line plots of the sweep (E_B vs P, E_W vs outlier
/// fraction). Returns the generated file paths.
std::vector<std::string> emit_plots(const std::vector<BenchmarkRow>& rows,
                                    const std::string& plot_dir);

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);

/// Seed for one benchmark cell; shared across models and couplings so they
/// see identical observations.
std::uint64_t cell_seed(std::uint64_t seed, int p, int frac_index);

/// Ground-truth latent SVF for one tree edge of a synthetic run, exactly as
/// generated inside run_reconstruction / run_benchmark for the same seed.
SvfField synthetic_truth_latent(std::uint64_t seed, int edge_index, int grid_h, int grid_w,
                                double spacing, double sigma_lo, double sigma_hi);

/// Metrics vs a truth manifest for a finished run directory; returns the JSON
/// report text.
std::string evaluate_against_truth(const std::string& truth_manifest,
                                   const std::string& est_dir);

/// Plain-text dump of the LAD LP at one control-grid location (both axes).
std::string dump_lp_at(const PipelineConfig& cfg, int row, int col);

}  // namespace histrec
