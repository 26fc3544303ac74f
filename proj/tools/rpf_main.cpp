// Command-line entry point: training, evaluation, bound verification,
// oracle self-checks and density/sample exports, driven by a JSON config.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "rpf/checkpoint.hpp"
#include "rpf/config.hpp"
#include "rpf/metrics.hpp"
#include "rpf/threading.hpp"

namespace fs = std::filesystem;
using namespace rpf;

namespace {

int usage_error(const std::string& what) {
  std::cerr << "usage error: " << what << "\n";
  return 2;
}

// ---------------------------------------------------------------------------
// verification suites (closed-form and finite-difference oracles)
// ---------------------------------------------------------------------------

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

SuiteResult suite_lemma3() {
  SuiteResult res{"lemma3_closed_form", true, ""};
  auto eng = make_engine(41);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Matrix2d R;
    R << gauss(eng), gauss(eng), gauss(eng), gauss(eng);
    Eigen::Matrix2d M = R.transpose() * R + 0.05 * Eigen::Matrix2d::Identity();
    Eigen::Vector2d mu(gauss(eng), gauss(eng));
    Eigen::Vector2d x(gauss(eng), gauss(eng));

    auto [theta, pot] = make_quadratic_potential(mu, M);
    FlowLayer layer(ManifoldKernel::euclidean(2),
                    std::make_shared<Potential>(pot));
    InnerSolveReport rep = inner_minimize(layer, theta, Point{x});

    Eigen::Matrix2d IM = Eigen::Matrix2d::Identity() + M;
    Eigen::Vector2d ystar = IM.inverse() * (x + M * mu);
    double value = 0.5 * (x - mu).transpose() *
                   (Eigen::Matrix2d::Identity() - IM.inverse()) * (x - mu);
    worst = std::max(worst, (rep.minimizer.coords - ystar).norm());
    worst = std::max(worst, std::abs(rep.psi_c_value - value));
  }
  res.pass = worst <= 1e-8;
  res.detail = "max error " + std::to_string(worst);
  return res;
}

FlowLayer small_mlp_layer(const ManifoldKernel& m, double output_scale,
                          std::uint64_t seed) {
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {16, 16, 1};
  spec.output_scale = output_scale;
  auto [theta, pot] = build_potential(spec, m, nullptr, seed);
  FlowLayer layer(m, std::make_shared<Potential>(pot));
  return layer;
}

ParamVector small_mlp_theta(const ManifoldKernel& m, double output_scale,
                            std::uint64_t seed) {
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {16, 16, 1};
  spec.output_scale = output_scale;
  return build_potential(spec, m, nullptr, seed).first;
}

SuiteResult suite_envelope() {
  SuiteResult res{"envelope_identity", true, ""};
  double worst = 0.0;
  for (int mi = 0; mi < 2; ++mi) {
    ManifoldKernel m = mi == 0
                           ? ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI))
                           : ManifoldKernel::sphere(2);
    FlowLayer layer = small_mlp_layer(m, 25.0, 7 + mi);
    ParamVector theta = small_mlp_theta(m, 25.0, 7 + mi);
    auto xs = m.sample_base(25, 100 + mi);
    for (const auto& x : xs) {
      InnerSolveReport rep = inner_minimize(layer, theta, x);
      if (!rep.converged) continue;
      TangentBasis ex = m.tangent_basis(x);
      const int dim = m.dim();
      const double eps = 1e-5;
      Eigen::VectorXd g(dim);
      for (int i = 0; i < dim; ++i) {
        Eigen::VectorXd dir = ex.rows.row(i);
        Point xp = m.exp_map(x, {x, eps * dir});
        Point xm = m.exp_map(x, {x, -eps * dir});
        g[i] = (psi_c(layer, theta, xp) - psi_c(layer, theta, xm)) / (2 * eps);
      }
      Point y2 = m.exp_map(x, {x, ex.rows.transpose() * (-g)});
      worst = std::max(worst,
                       std::sqrt(m.dist_sq(y2, rep.minimizer)));
    }
  }
  res.pass = worst <= 1e-6;
  res.detail = "max distance " + std::to_string(worst);
  return res;
}

SuiteResult suite_equivariance() {
  SuiteResult res{"equivariance", true, ""};
  double worst = 0.0;
  {
    auto m = ManifoldKernel::torus(Eigen::Vector2d(2.0, 2.0));
    NetworkSpec spec;
    spec.architecture = Architecture::symmetric_mlp;
    spec.layer_sizes = {16, 16, 1};
    spec.output_scale = 30.0;
    auto [theta, pot] = build_potential(spec, m, nullptr, 11);
    FlowLayer layer(m, std::make_shared<Potential>(pot));
    auto eng = make_engine(12);
    std::uniform_real_distribution<double> unit(0.0, 2.0);
    auto xs = m.sample_base(50, 13);
    for (const auto& x : xs) {
      double c = unit(eng);
      Point xg{x.coords + Eigen::Vector2d(c, c)};
      xg = std::get<Torus>(m.impl()).wrap(xg);
      ForwardResult a = forward(layer, theta, xg);
      ForwardResult b = forward(layer, theta, x);
      Point bg{b.y.coords + Eigen::Vector2d(c, c)};
      bg = std::get<Torus>(m.impl()).wrap(bg);
      worst = std::max(worst, std::sqrt(m.dist_sq(a.y, bg)));
    }
  }
  {
    // rotation-invariant ψ about the z axis on the sphere
    auto m = ManifoldKernel::sphere(2);
    SphereVmfTarget t;
    t.components.push_back({1.0, Eigen::Vector3d(0, 0, 1), 3.0});
    auto target = std::make_shared<TargetEnergy>("pole", m, t);
    NetworkSpec spec;
    spec.architecture = Architecture::energy_scaled;
    spec.target_name = "pole";
    auto [theta, pot] = build_potential(spec, m, target, 14);
    theta.values()[0] = 0.05;
    FlowLayer layer(m, std::make_shared<Potential>(pot));
    auto eng = make_engine(15);
    std::uniform_real_distribution<double> ang(0.0, 2 * M_PI);
    auto xs = m.sample_base(50, 16);
    for (const auto& x : xs) {
      double c = ang(eng);
      Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
      R(0, 0) = std::cos(c);
      R(0, 1) = -std::sin(c);
      R(1, 0) = std::sin(c);
      R(1, 1) = std::cos(c);
      ForwardResult a = forward(layer, theta, Point{(R * x.coords).eval()});
      ForwardResult b = forward(layer, theta, x);
      worst = std::max(worst,
                       std::sqrt(m.dist_sq(a.y, Point{(R * b.y.coords).eval()})));
    }
  }
  res.pass = worst <= 1e-6;
  res.detail = "max equivariance defect " + std::to_string(worst);
  return res;
}

SuiteResult suite_jacobian_fd() {
  SuiteResult res{"jacobian_fd", true, ""};
  double worst = 0.0;
  for (int mi = 0; mi < 2; ++mi) {
    ManifoldKernel m = mi == 0
                           ? ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI))
                           : ManifoldKernel::sphere(2);
    FlowLayer layer = small_mlp_layer(m, 25.0, 21 + mi);
    ParamVector theta = small_mlp_theta(m, 25.0, 21 + mi);
    auto xs = m.sample_base(10, 300 + mi);
    const int dim = m.dim();
    const double eps = 1e-5;
    for (const auto& x : xs) {
      Eigen::MatrixXd J = implicit_jacobian(layer, theta, x);
      Point y0 = inner_minimize(layer, theta, x).minimizer;
      TangentBasis ex = m.tangent_basis(x);
      TangentBasis ey = m.tangent_basis(y0);
      Eigen::MatrixXd Jfd(dim, dim);
      for (int j = 0; j < dim; ++j) {
        Eigen::VectorXd dir = ex.rows.row(j);
        Point xp = m.exp_map(x, {x, eps * dir});
        Point xm = m.exp_map(x, {x, -eps * dir});
        Point yp = inner_minimize(layer, theta, xp).minimizer;
        Point ym = inner_minimize(layer, theta, xm).minimizer;
        Eigen::VectorXd dp = ey.rows * m.log_map(y0, yp).components;
        Eigen::VectorXd dm = ey.rows * m.log_map(y0, ym).components;
        Jfd.col(j) = (dp - dm) / (2 * eps);
      }
      worst = std::max(worst, (J - Jfd).norm() / std::max(1.0, J.norm()));
    }
  }
  res.pass = worst <= 1e-4;
  res.detail = "max rel error " + std::to_string(worst);
  return res;
}

SuiteResult suite_grad_check() {
  SuiteResult res{"grad_check", true, ""};
  double worst = 0.0;
  {
    auto target = make_target("u3");
    NetworkSpec spec;
    spec.architecture = Architecture::energy_scaled;
    spec.target_name = "u3";
    auto [theta, pot] = build_potential(spec, target->manifold(), target, 31);
    theta.values()[0] = 0.05;
    FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot));
    FlowStack stack = make_stack(layer, 1);
    GradCheckReport rep = grad_check(stack, theta, *target, 16, 1e-5);
    worst = std::max(worst, rep.max_rel_error);
  }
  {
    auto target = make_target("u1");
    NetworkSpec spec;
    spec.architecture = Architecture::mlp;
    spec.layer_sizes = {8, 8, 1};
    spec.output_scale = 10.0;
    auto [theta, pot] = build_potential(spec, target->manifold(), target, 32);
    FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot));
    FlowStack stack = make_stack(layer, 1);
    GradCheckReport rep = grad_check(stack, theta, *target, 16, 1e-5);
    worst = std::max(worst, rep.max_rel_error);
  }
  res.pass = worst <= 1e-3;
  res.detail = "max rel error " + std::to_string(worst);
  return res;
}

int cmd_verify(bool inject_fault) {
  set_distance_fault_injection(inject_fault);
  std::vector<SuiteResult> suites;
  suites.push_back(suite_lemma3());
  suites.push_back(suite_envelope());
  suites.push_back(suite_equivariance());
  suites.push_back(suite_jacobian_fd());
  suites.push_back(suite_grad_check());
  set_distance_fault_injection(false);

  int failures = 0;
  std::printf("%-24s %-6s %s\n", "suite", "result", "detail");
  for (const auto& s : suites) {
    std::printf("%-24s %-6s %s\n", s.name.c_str(), s.pass ? "pass" : "FAIL",
                s.detail.c_str());
    if (!s.pass) ++failures;
  }
  return failures;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::int64_t seed_override) {
  RunConfig config = load_run_config(config_path);
  if (!out_override.empty()) config.output_dir = out_override;
  if (seed_override >= 0)
    config.train.seed = static_cast<std::uint64_t>(seed_override);

  fs::create_directories(config.output_dir);
  BuiltRun run = build_run(config);
  MetricsWriter metrics(config.output_dir + "/metrics.jsonl");

  TrainHooks hooks;
  hooks.on_metrics = [&](const MetricsRecord& rec) {
    metrics.write(rec);
    std::printf("step %ld  kl %.6f  ess %.2f%%  nonconv %.3f  |grad| %.4f  |hess| %.4f\n",
                rec.step, rec.kl, rec.ess, rec.nonconverged_frac,
                rec.max_grad_psi, rec.max_hess_psi);
    std::fflush(stdout);
  };
  hooks.on_checkpoint = [&](const ParamVector& th, const std::string& tag) {
    std::string name = tag == "final" ? "checkpoint.rpf"
                                      : "checkpoint_" + tag + ".rpf";
    save_checkpoint(config.output_dir + "/" + name, config, th);
  };

  try {
    TrainResult result = train(config.train, run.stack, run.theta, *run.target,
                               hooks);
    if (!result.history.empty()) {
      const auto& last = result.history.back();
      std::printf("final: step %ld kl %.6f ess %.2f%%\n", last.step, last.kl,
                  last.ess);
    }
  } catch (const TrainingHealthError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& target_name,
                 std::int64_t n, std::uint64_t seed) {
  if (n <= 0) return usage_error("--n must be positive");
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  if (!target_name.empty()) ck.config.target_name = target_name;
  BuiltRun run = build_run(ck.config);

  EssReport er = ess(run.stack, ck.theta, *run.target, n, seed);
  double log_z = log_z_quadrature(*run.target).log_z;
  KlReport kr = kl_report(run.stack, ck.theta, *run.target, n, seed + 1, log_z);
  std::printf("ess %.4f%% (raw %.4f%%, excluded %zu/%zu)\n", er.ess_pct,
              er.ess_pct_raw, er.n_excluded, er.n_total);
  std::printf("kl %.6f nats (stderr %.6f, n=%zu)\n", kr.kl, kr.std_error,
              kr.n_used);
  return 0;
}

int cmd_check_bounds(const std::string& checkpoint_path, std::int64_t n_probe,
                     double lambda, std::uint64_t seed) {
  if (n_probe <= 0) return usage_error("--n must be positive");
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  BuiltRun run = build_run(ck.config);
  ParamVector th0 = layer_theta(run.stack, ck.theta, 0);
  BoundReport rep =
      bound_check(*run.stack.layers.front().potential, th0,
                  ck.config.manifold, lambda, n_probe, seed);
  std::printf("n_probe %zu\nmax_grad_norm %.6f\nmax_hess_opnorm %.6f\n"
              "lambda %.6f\neta_required %.6f\nverdict %s\n",
              rep.n_probe, rep.max_grad_norm, rep.max_hess_opnorm, rep.lambda,
              rep.eta_required, rep.passes ? "pass" : "fail");
  return rep.passes ? 0 : 1;
}

int cmd_grid(const std::string& checkpoint_path, int resolution,
             const std::string& out_path, const std::string& ppm_path) {
  if (resolution <= 0) return usage_error("--resolution must be positive");
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  BuiltRun run = build_run(ck.config);
  DensityGrid grid = density_grid(run.stack, ck.theta, resolution);
  export_density_grid_csv(out_path, grid);
  if (!ppm_path.empty()) {
    if (!ck.config.manifold.is_torus())
      return usage_error("--ppm is only supported for torus grids");
    export_torus_grid_ppm(ppm_path, grid);
  }
  std::printf("grid %dx%d, mass %.6f, flagged %zu\n", grid.res1, grid.res2,
              grid.quadrature_mass(),
              static_cast<std::size_t>(
                  std::count(grid.ok.begin(), grid.ok.end(), 0)));
  return 0;
}

int cmd_sample(const std::string& checkpoint_path, std::int64_t n,
               const std::string& out_path, std::uint64_t seed) {
  if (n <= 0) return usage_error("--n must be positive");
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  BuiltRun run = build_run(ck.config);
  const ManifoldKernel& m = ck.config.manifold;
  auto xs = m.sample_base(n, seed);
  Eigen::MatrixXd coords(n, m.ambient_dim());
  Eigen::VectorXd log_q(n);
  for (std::int64_t i = 0; i < n; ++i) {
    StackForwardResult fr = stack_forward(run.stack, ck.theta, xs[i]);
    coords.row(i) = fr.y.coords.transpose();
    log_q[i] = m.base_log_density(xs[i]) - fr.total_logdet;
  }
  export_samples_csv(out_path, coords, log_q);
  std::printf("wrote %lld samples\n", static_cast<long long>(n));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Riemannian potential flows: implicit c-concave transport maps"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_path, ppm_path, target_name;
  std::int64_t n = 20000;
  int resolution = 256;
  std::int64_t seed_override = -1;
  std::uint64_t seed = 1234;
  double lambda = 0.0;
  bool inject_fault = false;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--out", out_path, "output directory override");
  train_cmd->add_option("--seed", seed_override, "seed override");

  auto* eval_cmd = app.add_subcommand("evaluate", "ESS/KL of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  eval_cmd->add_option("--target", target_name, "override target name");
  eval_cmd->add_option("--n", n, "number of samples");
  eval_cmd->add_option("--seed", seed);

  auto* bounds_cmd =
      app.add_subcommand("check-bounds", "derivative-bound verdict");
  bounds_cmd->add_option("--checkpoint", checkpoint_path)->required();
  bounds_cmd->add_option("--n", n, "number of probe points");
  bounds_cmd->add_option("--lambda", lambda, "ball radius (default 2·max-grad)");
  bounds_cmd->add_option("--seed", seed);

  auto* verify_cmd =
      app.add_subcommand("verify", "closed-form and finite-difference oracles");
  verify_cmd->add_flag("--inject-distance-fault", inject_fault,
                       "corrupt distance derivatives (self-test hook)");

  auto* grid_cmd = app.add_subcommand("grid", "export a density grid");
  grid_cmd->add_option("--checkpoint", checkpoint_path)->required();
  grid_cmd->add_option("--resolution", resolution);
  grid_cmd->add_option("--out", out_path, "csv output path")->required();
  grid_cmd->add_option("--ppm", ppm_path, "optional heat-map (torus only)");

  auto* sample_cmd = app.add_subcommand("sample", "export model samples");
  sample_cmd->add_option("--checkpoint", checkpoint_path)->required();
  sample_cmd->add_option("--n", n, "number of samples");
  sample_cmd->add_option("--out", out_path, "csv output path")->required();
  sample_cmd->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_path, seed_override);
    if (eval_cmd->parsed()) return cmd_evaluate(checkpoint_path, target_name, n, seed);
    if (bounds_cmd->parsed()) return cmd_check_bounds(checkpoint_path, n, lambda, seed);
    if (verify_cmd->parsed()) return cmd_verify(inject_fault);
    if (grid_cmd->parsed()) return cmd_grid(checkpoint_path, resolution, out_path, ppm_path);
    if (sample_cmd->parsed()) return cmd_sample(checkpoint_path, n, out_path, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
