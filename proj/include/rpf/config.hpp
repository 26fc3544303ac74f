#pragma once

// Declarative run configuration: manifold, target, network, stack, solver
// and training hyperparameters, serialized as JSON. Parsing reports the
// offending field path on errors.

#include <json.hpp>

#include <memory>
#include <string>

#include "rpf/flow.hpp"
#include "rpf/manifold.hpp"
#include "rpf/potential.hpp"
#include "rpf/targets.hpp"
#include "rpf/training.hpp"

namespace rpf {

struct StackConfig {
  int layers = 1;
  bool share_parameters = true;
  bool operator==(const StackConfig&) const = default;
};

struct RunConfig {
  ManifoldKernel manifold =
      ManifoldKernel::torus(Eigen::Vector2d(2.0 * M_PI, 2.0 * M_PI));
  std::string target_name;       // one of the built-in names, or empty
  nlohmann::json custom_target;  // declarative target description, or null
  NetworkSpec network;
  StackConfig stack;
  InnerSolverConfig solver;
  TrainConfig train;
  std::string output_dir = "run_out";

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json manifold_to_json(const ManifoldKernel& m);
ManifoldKernel manifold_from_json(const nlohmann::json& j,
                                  const std::string& field);

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

// Resolves the configured target (named zoo entry or declarative custom).
std::shared_ptr<const TargetEnergy> resolve_target(const RunConfig& config);

struct BuiltRun {
  std::shared_ptr<const TargetEnergy> target;
  FlowStack stack;
  ParamVector theta;
};

// Builds target, potential, initial parameters and the flow stack; validates
// every cross-reference.
BuiltRun build_run(const RunConfig& config);

}  // namespace rpf
