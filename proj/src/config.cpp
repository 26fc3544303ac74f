#include "rpf/config.hpp"

#include <fstream>

namespace rpf {

using nlohmann::json;

namespace {

template <class T>
T get_field(const json& j, const std::string& path, const std::string& key,
            const T& fallback, bool required = false) {
  if (!j.contains(key)) {
    if (required)
      throw ConfigError(path.empty() ? key : path + "." + key,
                        "missing required field");
    return fallback;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path.empty() ? key : path + "." + key, e.what());
  }
}

}  // namespace

json manifold_to_json(const ManifoldKernel& m) {
  json j;
  j["kind"] = m.kind();
  j["dimension"] = m.dim();
  if (m.is_torus()) {
    const auto& L = std::get<Torus>(m.impl()).circumferences();
    std::vector<double> circ(L.data(), L.data() + L.size());
    j["circumferences"] = circ;
  }
  return j;
}

ManifoldKernel manifold_from_json(const json& j, const std::string& field) {
  std::string kind = get_field<std::string>(j, field, "kind", "", true);
  int dim = get_field<int>(j, field, "dimension", 2);
  if (kind == "torus") {
    std::vector<double> circ = get_field<std::vector<double>>(
        j, field, "circumferences",
        std::vector<double>(dim, 2.0 * M_PI));
    if (static_cast<int>(circ.size()) != dim)
      throw ConfigError(field + ".circumferences",
                        "length must match dimension");
    Eigen::VectorXd L(dim);
    for (int i = 0; i < dim; ++i) L[i] = circ[i];
    return ManifoldKernel::torus(L);
  }
  if (kind == "sphere") return ManifoldKernel::sphere(dim);
  if (kind == "euclidean") return ManifoldKernel::euclidean(dim);
  throw ConfigError(field + ".kind", "must be torus, sphere or euclidean");
}

namespace {

json network_to_json(const NetworkSpec& spec) {
  json j;
  j["architecture"] = architecture_name(spec.architecture);
  j["layer_sizes"] = spec.layer_sizes;
  j["output_scale"] = spec.output_scale;
  if (!spec.target_name.empty()) j["target"] = spec.target_name;
  return j;
}

NetworkSpec network_from_json(const json& j) {
  NetworkSpec spec;
  spec.architecture = architecture_from_name(
      get_field<std::string>(j, "network", "architecture", "mlp"));
  spec.layer_sizes =
      get_field<std::vector<int>>(j, "network", "layer_sizes", {32, 32, 1});
  spec.output_scale = get_field<double>(j, "network", "output_scale", 0.0);
  spec.target_name = get_field<std::string>(j, "network", "target", "");
  return spec;
}

json solver_to_json(const InnerSolverConfig& s) {
  json j;
  j["grad_tolerance"] = s.grad_tolerance;
  j["max_gd_steps"] = s.max_gd_steps;
  j["gd_step_size"] = s.gd_step_size;
  j["newton_polish"] = s.newton_polish;
  j["restart_points"] = s.restart_points;
  j["newton_threshold"] = s.newton_threshold;
  return j;
}

InnerSolverConfig solver_from_json(const json& j) {
  InnerSolverConfig s;
  s.grad_tolerance = get_field<double>(j, "solver", "grad_tolerance", s.grad_tolerance);
  s.max_gd_steps = get_field<int>(j, "solver", "max_gd_steps", s.max_gd_steps);
  s.gd_step_size = get_field<double>(j, "solver", "gd_step_size", s.gd_step_size);
  s.newton_polish = get_field<bool>(j, "solver", "newton_polish", s.newton_polish);
  s.restart_points = get_field<int>(j, "solver", "restart_points", s.restart_points);
  s.newton_threshold =
      get_field<double>(j, "solver", "newton_threshold", s.newton_threshold);
  s.validate();
  return s;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["batch_size"] = t.batch_size;
  j["steps"] = t.steps;
  j["learning_rate"] = t.learning_rate;
  j["adam_betas"] = {t.adam_betas.first, t.adam_betas.second};
  j["adam_eps"] = t.adam_eps;
  j["seed"] = t.seed;
  j["grad_path"] = grad_path_name(t.grad_path);
  j["eval_every"] = t.eval_every;
  j["eval_samples"] = t.eval_samples;
  j["early_stop_ess"] = t.early_stop_ess;
  j["unroll_steps"] = t.unroll_steps;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.batch_size = get_field<int>(j, "train", "batch_size", t.batch_size);
  t.steps = get_field<int>(j, "train", "steps", t.steps);
  t.learning_rate = get_field<double>(j, "train", "learning_rate", t.learning_rate);
  auto betas = get_field<std::vector<double>>(
      j, "train", "adam_betas", {t.adam_betas.first, t.adam_betas.second});
  if (betas.size() != 2)
    throw ConfigError("train.adam_betas", "expected two values");
  t.adam_betas = {betas[0], betas[1]};
  t.adam_eps = get_field<double>(j, "train", "adam_eps", t.adam_eps);
  t.seed = get_field<std::uint64_t>(j, "train", "seed", t.seed);
  t.grad_path = grad_path_from_name(
      get_field<std::string>(j, "train", "grad_path", "implicit"));
  t.eval_every = get_field<int>(j, "train", "eval_every", t.eval_every);
  t.eval_samples = get_field<int>(j, "train", "eval_samples", t.eval_samples);
  t.early_stop_ess =
      get_field<double>(j, "train", "early_stop_ess", t.early_stop_ess);
  t.unroll_steps = get_field<int>(j, "train", "unroll_steps", t.unroll_steps);
  t.validate();
  return t;
}

TargetEnergy::Impl custom_target_impl(const json& j, ManifoldKernel& manifold) {
  std::string kind = get_field<std::string>(j, "target", "kind", "", true);
  manifold = manifold_from_json(
      j.contains("manifold") ? j.at("manifold") : json::object(),
      "target.manifold");
  if (kind == "trig") {
    if (!manifold.is_torus())
      throw ConfigError("target.kind", "trig targets require a torus");
    const auto& L = std::get<Torus>(manifold.impl()).circumferences();
    TrigPolyTarget t;
    t.omegas = Eigen::VectorXd(L.size());
    for (int i = 0; i < L.size(); ++i) t.omegas[i] = 2.0 * M_PI / L[i];
    for (const auto& term : j.at("terms")) {
      TrigPolyTarget::Term tt;
      tt.coef = get_field<double>(term, "target.terms", "coef", 0.0, true);
      tt.use_sin =
          get_field<std::string>(term, "target.terms", "trig", "sin") == "sin";
      auto freqs = get_field<std::vector<int>>(term, "target.terms", "freqs",
                                               {}, true);
      tt.freqs = Eigen::Map<Eigen::VectorXi>(freqs.data(), freqs.size());
      tt.phase = get_field<double>(term, "target.terms", "phase", 0.0);
      t.terms.push_back(tt);
    }
    return t;
  }
  if (kind == "vmf_torus") {
    if (!manifold.is_torus())
      throw ConfigError("target.kind", "vmf_torus requires a torus");
    const auto& L = std::get<Torus>(manifold.impl()).circumferences();
    TorusVonMisesTarget t;
    t.omegas = Eigen::VectorXd(L.size());
    for (int i = 0; i < L.size(); ++i) t.omegas[i] = 2.0 * M_PI / L[i];
    for (const auto& comp : j.at("components")) {
      TorusVonMisesTarget::Component c;
      c.weight = get_field<double>(comp, "target.components", "weight", 1.0);
      auto mean = get_field<std::vector<double>>(comp, "target.components",
                                                 "mean", {}, true);
      c.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), mean.size());
      c.kappa = get_field<double>(comp, "target.components", "kappa", 1.0);
      t.components.push_back(c);
    }
    return t;
  }
  if (kind == "vmf_sphere") {
    if (!manifold.is_sphere())
      throw ConfigError("target.kind", "vmf_sphere requires a sphere");
    SphereVmfTarget t;
    for (const auto& comp : j.at("components")) {
      SphereVmfTarget::Component c;
      c.weight = get_field<double>(comp, "target.components", "weight", 1.0);
      if (comp.contains("mean_latlon")) {
        auto ll = comp.at("mean_latlon").get<std::vector<double>>();
        if (ll.size() != 2)
          throw ConfigError("target.components.mean_latlon", "expected [lat, lon]");
        c.mean = latlon_to_ambient(ll[0], ll[1]);
      } else {
        auto xyz = get_field<std::vector<double>>(comp, "target.components",
                                                  "mean_xyz", {}, true);
        if (xyz.size() != 3)
          throw ConfigError("target.components.mean_xyz", "expected [x, y, z]");
        c.mean = Eigen::Vector3d(xyz[0], xyz[1], xyz[2]).normalized();
      }
      c.kappa = get_field<double>(comp, "target.components", "kappa", 1.0);
      t.components.push_back(c);
    }
    return t;
  }
  if (kind == "constant") {
    return ConstantTarget{get_field<double>(j, "target", "value", 0.0)};
  }
  throw ConfigError("target.kind",
                    "must be trig, vmf_torus, vmf_sphere or constant");
}

}  // namespace

json run_config_to_json(const RunConfig& config) {
  json j;
  j["manifold"] = manifold_to_json(config.manifold);
  if (!config.target_name.empty())
    j["target"] = config.target_name;
  else
    j["target"] = config.custom_target;
  j["network"] = network_to_json(config.network);
  j["stack"] = {{"layers", config.stack.layers},
                {"share_parameters", config.stack.share_parameters}};
  j["solver"] = solver_to_json(config.solver);
  j["train"] = train_to_json(config.train);
  j["output_dir"] = config.output_dir;
  return j;
}

std::shared_ptr<const TargetEnergy> resolve_target(const RunConfig& config) {
  if (!config.target_name.empty()) return make_target(config.target_name);
  if (config.custom_target.is_object()) {
    ManifoldKernel m = config.manifold;
    TargetEnergy::Impl impl = custom_target_impl(config.custom_target, m);
    return std::make_shared<TargetEnergy>("custom", m, impl);
  }
  throw ConfigError("target", "missing required field");
}

RunConfig run_config_from_json(const json& j) {
  RunConfig config;
  if (!j.contains("target") || (j.at("target").is_string() &&
                                j.at("target").get<std::string>().empty()))
    throw ConfigError("target", "missing required field");
  if (j.at("target").is_string())
    config.target_name = j.at("target").get<std::string>();
  else
    config.custom_target = j.at("target");

  if (j.contains("network")) config.network = network_from_json(j.at("network"));
  if (j.contains("stack")) {
    config.stack.layers = get_field<int>(j.at("stack"), "stack", "layers", 1);
    config.stack.share_parameters =
        get_field<bool>(j.at("stack"), "stack", "share_parameters", true);
  }
  if (config.stack.layers < 1)
    throw ConfigError("stack.layers", "must be at least 1");
  if (j.contains("solver")) config.solver = solver_from_json(j.at("solver"));
  if (j.contains("train")) config.train = train_from_json(j.at("train"));
  config.output_dir =
      get_field<std::string>(j, "", "output_dir", config.output_dir);

  // the manifold may be omitted, in which case the target's manifold is used
  if (j.contains("manifold")) {
    config.manifold = manifold_from_json(j.at("manifold"), "manifold");
    auto target = resolve_target(config);
    if (!(target->manifold() == config.manifold))
      throw ConfigError("manifold",
                        "does not match the manifold of target '" +
                            target->name() + "'");
  } else {
    config.manifold = resolve_target(config)->manifold();
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file: " + path);
  out << run_config_to_json(config).dump(2) << "\n";
}

BuiltRun build_run(const RunConfig& config) {
  BuiltRun run;
  run.target = resolve_target(config);
  auto [theta, potential] =
      build_potential(config.network, config.manifold, run.target,
                      derive_seed(config.train.seed, "init"));
  FlowLayer layer(config.manifold,
                  std::make_shared<Potential>(std::move(potential)),
                  config.solver);
  run.stack = make_stack(layer, config.stack.layers,
                         config.stack.share_parameters);
  if (!config.stack.share_parameters && config.stack.layers > 1) {
    // independent per-layer parameters: replicate the initial vector
    Eigen::VectorXd all(theta.size() * config.stack.layers);
    for (int l = 0; l < config.stack.layers; ++l)
      all.segment(l * theta.size(), theta.size()) = theta.values();
    auto layout = std::make_shared<ParamLayout>();
    for (int l = 0; l < config.stack.layers; ++l)
      for (const auto& s : theta.layout().segments)
        layout->segments.push_back({"stack" + std::to_string(l) + "." + s.name,
                                    s.offset + l * theta.size(), s.size});
    layout->total = static_cast<int>(all.size());
    run.theta = ParamVector(std::move(all), layout);
  } else {
    run.theta = std::move(theta);
  }
  return run;
}

}  // namespace rpf
