#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include <gyropic/types.hpp>

// Named experiment presets behind the command-line runner. A spec names a
// kind and overrides a few of its parameters; resolution fills in every
// default, validates the overrides, and yields a document that parses back
// to itself, so meta.json always carries a runnable copy of the config.

namespace gyropic {

struct ExperimentSpec {
  std::string kind;
  nlohmann::json overrides = nlohmann::json::object();
  std::string out_dir;  // empty: current directory
  int threads = 1;
  bool reproducible = false;  // zero the timing fields for byte-stable reruns
};

// The eight runnable kinds, in listing order: table1, table2, scpd_order,
// refined_eps_scan, mollify_order, fem_order, weak_init_order, pic.
const std::vector<std::string>& experiment_kinds();

// Reads {kind, overrides?, out_dir?, threads?, reproducible?} from a JSON
// document. Unknown top-level keys or an unknown kind throw
// std::invalid_argument; override values are checked later by resolution.
ExperimentSpec parse_experiment(const nlohmann::json& doc);

// Fills defaults and validates every override (types, positivity, halving
// step lists). The result is a fixed point: parsing and resolving it again
// reproduces it byte for byte.
nlohmann::json resolve_experiment(const ExperimentSpec& spec);

// Runs the experiment and writes its files (orders.csv and friends, always
// meta.json last) into spec.out_dir, creating the directory if needed.
// Returns the file names written. Numerical failures surface as exceptions
// tagged with the module that raised them.
std::vector<std::string> run_experiment(const ExperimentSpec& spec);

}  // namespace gyropic
