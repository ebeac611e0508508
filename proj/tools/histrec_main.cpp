#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "histrec/pipeline.hpp"

namespace {

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const histrec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const histrec::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint refinement of stacked pairwise registrations into "
               "reference-aligned 3D reconstructions"};
  app.require_subcommand(1);

  std::string config_path;
  auto* reconstruct = app.add_subcommand("reconstruct", "Run the full reconstruction pipeline");
  reconstruct->add_option("--config", config_path, "JSON config file")->required();

  auto* benchmark = app.add_subcommand("benchmark", "Run the synthetic benchmark sweep");
  benchmark->add_option("--config", config_path, "JSON config file")->required();

  std::string truth_path, est_dir;
  auto* metrics = app.add_subcommand("metrics", "Evaluate a run directory against ground truth");
  metrics->add_option("--truth", truth_path, "truth manifest JSON")->required();
  metrics->add_option("--est", est_dir, "run output directory")->required();

  std::string location;
  auto* lp_dump = app.add_subcommand("lp-dump", "Dump the LAD LP at one control-grid location");
  lp_dump->add_option("--config", config_path, "JSON config file")->required();
  lp_dump->add_option("--location", location, "control-grid location as row,col")->required();

  CLI11_PARSE(app, argc, argv);

  if (reconstruct->parsed())
    return guarded([&] {
      histrec::RunReport rep = histrec::run_reconstruction(histrec::load_config(config_path));
      std::cout << "report written to " << rep.report_path << "\n";
      if (rep.failed_location_fraction > 0.05) {
        std::cerr << "solver failures at " << rep.failed_location_fraction * 100.0
                  << "% of locations\n";
        return 4;
      }
      return 0;
    });

  if (benchmark->parsed())
    return guarded([&] {
      auto rows = histrec::run_benchmark(histrec::load_config(config_path));
      std::cout << rows.size() << " benchmark cells completed\n";
      return 0;
    });

  if (metrics->parsed())
    return guarded([&] {
      std::cout << histrec::evaluate_against_truth(truth_path, est_dir);
      return 0;
    });

  // lp-dump
  return guarded([&] {
    int r = 0, c = 0;
    if (std::sscanf(location.c_str(), "%d,%d", &r, &c) != 2)
      throw histrec::ConfigError("--location must be row,col");
    std::cout << histrec::dump_lp_at(histrec::load_config(config_path), r, c);
    return 0;
  });
}
