#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <gyropic/experiment.hpp>

using nlohmann::json;

namespace {

gyropic::ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cli: cannot open spec file " + path);
  return gyropic::parse_experiment(json::parse(in));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structure-preserving particle experiments"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  int threads = 1;
  bool reproducible = false;

  CLI::App* run = app.add_subcommand(
      "run", "run an experiment spec and write its output files");
  run->add_option("spec", spec_path, "JSON spec file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_dir,
                  "output directory (default: spec out_dir, then $GYROPIC_OUT, "
                  "then the current directory)");
  run->add_option("--threads", threads,
                  "worker slots for independent scan rows")
      ->check(CLI::PositiveNumber);
  run->add_flag("--reproducible", reproducible,
                "zero the timing fields so reruns are byte-identical");

  CLI::App* validate = app.add_subcommand(
      "validate", "parse a spec and print its fully resolved config");
  validate->add_option("spec", spec_path, "JSON spec file")
      ->required()
      ->check(CLI::ExistingFile);

  app.add_subcommand("list-experiments", "print the runnable experiment kinds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("list-experiments")) {
      for (const std::string& k : gyropic::experiment_kinds())
        std::cout << k << "\n";
      return 0;
    }
    gyropic::ExperimentSpec spec = load_spec(spec_path);
    if (run->count("--out") > 0) spec.out_dir = out_dir;
    if (spec.out_dir.empty())
      if (const char* env = std::getenv("GYROPIC_OUT")) spec.out_dir = env;
    if (app.got_subcommand("validate")) {
      std::cout << gyropic::resolve_experiment(spec).dump(2) << "\n";
      return 0;
    }
    if (run->count("--threads") > 0) spec.threads = threads;
    if (reproducible) spec.reproducible = true;
    for (const std::string& f : gyropic::run_experiment(spec))
      std::cout << f << "\n";
    return 0;
  } catch (const std::exception& ex) {
    const json err = {{"error", {{"what", ex.what()}, {"spec", spec_path}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
