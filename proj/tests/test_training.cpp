#include <doctest.h>

#include <cmath>

#include "rpf/checkpoint.hpp"
#include "rpf/training.hpp"
#include "support/oracles.hpp"

using namespace rpf;

TEST_SUITE_BEGIN("training");

namespace {

FlowStack stack_of(const std::shared_ptr<const TargetEnergy>& target,
                   const NetworkSpec& spec, ParamVector* theta_out,
                   std::uint64_t seed, int height = 1) {
  auto [theta, pot] = build_potential(spec, target->manifold(), target, seed);
  *theta_out = theta;
  FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot));
  return make_stack(layer, height);
}

}  // namespace

TEST_CASE("adam closed forms") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  auto layout = std::make_shared<ParamLayout>();
  layout->segments.push_back({"w", 0, 3});
  layout->total = 3;
  ParamVector theta(Eigen::Vector3d(1.0, -2.0, 3.0), layout);

  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState st;
    Eigen::VectorXd before = theta.values();
    adam_step(st, theta, Eigen::Vector3d::Zero(), cfg);
    CHECK((theta.values() - before).norm() == 0.0);
  }
  SUBCASE("first step from zero moments") {
    AdamState st;
    Eigen::Vector3d g(0.5, -0.1, 2.0);
    Eigen::VectorXd before = theta.values();
    adam_step(st, theta, g, cfg);
    for (int i = 0; i < 3; ++i) {
      double expect = -cfg.learning_rate * g[i] / (std::abs(g[i]) + cfg.adam_eps);
      CHECK(theta.values()[i] - before[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("constant gradient converges to signed learning-rate steps") {
    AdamState st;
    Eigen::Vector3d g(0.5, -0.1, 2.0);
    Eigen::VectorXd prev = theta.values();
    for (int k = 0; k < 500; ++k) {
      prev = theta.values();
      adam_step(st, theta, g, cfg);
    }
    for (int i = 0; i < 3; ++i)
      CHECK(theta.values()[i] - prev[i] ==
            doctest::Approx(-cfg.learning_rate * (g[i] > 0 ? 1.0 : -1.0))
                .epsilon(1e-6));
  }
  SUBCASE("non-finite gradient names the offending segment") {
    AdamState st;
    Eigen::Vector3d g(0.5, std::nan(""), 2.0);
    try {
      adam_step(st, theta, g, cfg);
      FAIL("expected TrainingHealthError");
    } catch (const TrainingHealthError& e) {
      CHECK(e.segment == "w");
    }
  }
}

TEST_CASE("identity flow on the matched uniform target gives exactly zero KL") {
  auto target = make_target("uniform_torus");
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 5);
  theta.values()[0] = 0.0;  // ψ ≡ 0
  double log_z = log_z_quadrature(*target).log_z;
  auto batch = target->manifold().sample_base(64, 6);
  LossBreakdown lb = kl_loss_batch(stack, theta, *target, batch, log_z);
  CHECK(std::abs(lb.kl_estimate) <= 1e-9);
  CHECK(lb.non_converged_fraction == 0.0);
  CHECK(std::abs(lb.mean_logdet) <= 1e-10);
}

TEST_CASE("KL stays above the Gibbs floor") {
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {8, 8, 1};
  spec.output_scale = 8.0;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 7);
  double log_z = log_z_quadrature(*target).log_z;
  EssReport er = ess(stack, theta, *target, 4000, 8);
  KlReport kr = kl_report(stack, theta, *target, 4000, 9, log_z);
  CHECK(kr.kl >= -3.0 * kr.std_error);
  CHECK(er.ess_pct > 0.0);
}

TEST_CASE("implicit gradient matches finite differences (energy form)") {
  auto target = make_target("u3");
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 10);
  theta.values()[0] = 0.08;
  GradCheckReport rep = grad_check(stack, theta, *target, 24, 1e-5);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("implicit gradient matches finite differences (mlp, quadratic form)") {
  auto target = make_target("u1");
  SUBCASE("mlp [8,8,1]") {
    NetworkSpec spec;
    spec.architecture = Architecture::mlp;
    spec.layer_sizes = {8, 8, 1};
    spec.output_scale = 6.0;
    ParamVector theta;
    FlowStack stack = stack_of(target, spec, &theta, 11);
    GradCheckReport rep = grad_check(stack, theta, *target, 12, 1e-5);
    CHECK(rep.max_rel_error <= 1e-3);
  }
  SUBCASE("energy_quadratic") {
    NetworkSpec spec;
    spec.architecture = Architecture::energy_quadratic;
    ParamVector theta;
    FlowStack stack = stack_of(target, spec, &theta, 12);
    theta.values() << 0.1, 0.02, -0.01, 0.015;
    GradCheckReport rep = grad_check(stack, theta, *target, 16, 1e-5);
    CHECK(rep.max_rel_error <= 1e-3);
  }
}

TEST_CASE("stacked shared-parameter gradients match finite differences") {
  // exercises the reverse sweep across layers, including the input-side
  // pull-back of the log-det terms
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {4, 1};
  spec.output_scale = 8.0;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 13, 3);
  CHECK(stack.param_count() == theta.size());
  GradCheckReport rep = grad_check(stack, theta, *target, 12, 1e-5);
  CHECK(rep.max_rel_error <= 1e-3);
}

TEST_CASE("stacked gradients on the sphere match finite differences") {
  auto target = make_target("sphere_vmf4");
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {4, 1};
  spec.output_scale = 25.0;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 14, 2);
  GradCheckReport rep = grad_check(stack, theta, *target, 8, 1e-5);
  CHECK(rep.max_rel_error <= 1e-3);
}

TEST_CASE("implicit and unrolled paths agree on a small net") {
  // 1D torus with a 20-parameter toy network, well inside the regime
  TrigPolyTarget trig;
  trig.omegas = Eigen::VectorXd::Constant(1, 1.0);
  trig.terms.push_back({0.5, true, Eigen::VectorXi::Constant(1, 1), 0.3});
  auto target = std::make_shared<TargetEnergy>(
      "t1", ManifoldKernel::torus(Eigen::VectorXd::Constant(1, 2 * M_PI)), trig);

  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {4, 1};  // 2*4+4 + 4+1 = 17 params
  spec.output_scale = 10.0;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 15);
  auto batch = target->manifold().sample_base(32, 16);

  Eigen::VectorXd gi =
      loss_param_grad(stack, theta, *target, batch, GradPath::implicit);
  Eigen::VectorXd gu =
      loss_param_grad(stack, theta, *target, batch, GradPath::unrolled, 60);
  double scale = std::max(1.0, gi.cwiseAbs().maxCoeff());
  CHECK((gi - gu).cwiseAbs().maxCoeff() <= 1e-3 * scale);

  // the unrolled value agrees with its own finite differences exactly
  ParamVector work = theta;
  const double eps = 1e-6;
  auto unrolled_batch_loss = [&](const ParamVector& th) {
    double acc = 0.0;
    for (const auto& x : batch)
      acc += unrolled_loss_value(stack, th, *target, x, 60);
    return acc / batch.size();
  };
  Eigen::VectorXd gu_sum = Eigen::VectorXd::Zero(theta.size());
  for (const auto& x : batch)
    gu_sum += unrolled_loss_grad(stack, theta, *target, x, 60).grad;
  gu_sum /= static_cast<double>(batch.size());
  for (int k = 0; k < theta.size(); k += 5) {
    work.values()[k] = theta.values()[k] + eps;
    double up = unrolled_batch_loss(work);
    work.values()[k] = theta.values()[k] - eps;
    double dn = unrolled_batch_loss(work);
    work.values()[k] = theta.values()[k];
    CHECK(std::abs((up - dn) / (2 * eps) - gu_sum[k]) <= 1e-5 * scale);
  }

  // unrolled mode is a flat-manifold cross-check only
  auto sphere_target = make_target("sphere_vmf4");
  NetworkSpec sspec;
  sspec.architecture = Architecture::mlp;
  sspec.layer_sizes = {4, 1};
  sspec.output_scale = 25.0;
  ParamVector stheta;
  FlowStack sstack = stack_of(sphere_target, sspec, &stheta, 17);
  CHECK_THROWS_AS(unrolled_loss_grad(sstack, stheta, *sphere_target,
                                     sphere_target->manifold().sample_base(1, 1)[0],
                                     50),
                  UnsupportedError);
}

TEST_CASE("alpha at its optimum has a vanishing gradient component") {
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  ParamVector theta;
  FlowStack stack = stack_of(target, spec, &theta, 18);
  auto batch = target->manifold().sample_base(512, 19);
  double log_z = log_z_quadrature(*target).log_z;

  auto loss_at = [&](double alpha) {
    ParamVector th = theta;
    th.values()[0] = alpha;
    return kl_loss_batch(stack, th, *target, batch, log_z).kl_estimate;
  };
  // coarse-to-fine scan for the frozen-batch optimum
  double best_a = 0.0, best_v = loss_at(0.0);
  for (double a = 0.02; a <= 0.6; a += 0.02) {
    double v = loss_at(a);
    if (v < best_v) {
      best_v = v;
      best_a = a;
    }
  }
  for (double a = best_a - 0.02; a <= best_a + 0.02; a += 0.002) {
    if (a < 0) continue;
    double v = loss_at(a);
    if (v < best_v) {
      best_v = v;
      best_a = a;
    }
  }
  ParamVector th = theta;
  th.values()[0] = best_a;
  Eigen::VectorXd g = loss_param_grad(stack, th, *target, batch);
  // curvature of the scan is O(1); at the scan optimum the gradient is small
  CHECK(std::abs(g[0]) <= 0.05);
}

TEST_CASE("health errors on failing batches") {
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  auto [theta, pot] = build_potential(spec, target->manifold(), target, 20);
  theta.values()[0] = 5.0;
  InnerSolverConfig solver;
  solver.max_gd_steps = 2;
  solver.newton_polish = false;
  FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot), solver);
  FlowStack stack = make_stack(layer, 1);
  auto batch = target->manifold().sample_base(64, 21);
  CHECK_THROWS_AS(kl_loss_batch(stack, theta, *target, batch, 0.0),
                  TrainingHealthError);
}

TEST_CASE("training runs deterministically and improves the loss") {
  auto target = make_target("u1");
  RunConfig config;
  config.manifold = target->manifold();
  config.target_name = "u1";
  config.network.architecture = Architecture::energy_scaled;
  config.train.batch_size = 32;
  config.train.steps = 40;
  config.train.learning_rate = 0.05;
  config.train.eval_every = 20;
  config.train.eval_samples = 500;
  config.train.seed = 99;

  auto run_once = [&]() {
    BuiltRun run = build_run(config);
    std::vector<std::string> lines;
    TrainHooks hooks;
    hooks.on_metrics = [&](const MetricsRecord& r) {
      lines.push_back(metrics_record_line(r));
    };
    TrainResult res = train(config.train, run.stack, run.theta, *target, hooks);
    return std::make_pair(lines, res);
  };
  auto [lines1, res1] = run_once();
  auto [lines2, res2] = run_once();
  REQUIRE(lines1.size() == lines2.size());
  for (std::size_t i = 0; i < lines1.size(); ++i) CHECK(lines1[i] == lines2[i]);
  CHECK((res1.theta.values() - res2.theta.values()).norm() == 0.0);

  // smoke property: the KL gap shrinks by at least half over the run
  REQUIRE(res1.history.size() >= 2);
  double first = res1.history.front().kl;
  double last = res1.history.back().kl;
  CHECK(last <= 0.5 * first + 1e-9);
}

TEST_SUITE_END();
