// far: command-line entry point.
//   far gen-synth|train|eval|footprint-report|upscale --config run.json

#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "far/far.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Footprint-aware flux regression"};
  app.require_subcommand(1);
  std::string config_path;
  bool quiet = false;

  const std::map<std::string, std::function<void(const far::RunConfig&)>> commands = {
      {"gen-synth", far::cmd_gen_synth},
      {"train", far::cmd_train},
      {"eval", far::cmd_eval},
      {"footprint-report", far::cmd_footprint_report},
      {"upscale", far::cmd_upscale}};
  const std::map<std::string, std::string> help = {
      {"gen-synth", "write a synthetic dataset, its ground truth and an optional region"},
      {"train", "fit FAR and the uniform-window baseline"},
      {"eval", "metric report for FAR and the baseline on held-out splits"},
      {"footprint-report", "footprint areas, centroids and sensitivity scans"},
      {"upscale", "per-pixel flux rasters over a region"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    sub->add_flag("-q,--quiet", quiet, "suppress the completion line");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const far::RunConfig cfg = far::load_run_config(config_path);
    commands.at(name)(cfg);
    if (!quiet) std::cerr << name << ": done\n";
    return 0;
  } catch (const far::Error& e) {
    std::cerr << far::error_json(name, e).dump() << "\n";
    return far::exit_code(e.kind());
  } catch (const std::exception& e) {
    // Anything unclassified (I/O failures, allocation) counts as a data error.
    std::cerr << nlohmann::json{{"error", "data"}, {"message", e.what()}, {"command", name}, {"exit_code", 2}}.dump()
              << "\n";
    return 2;
  }
}
