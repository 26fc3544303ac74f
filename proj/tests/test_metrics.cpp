#include <doctest.h>

#include <cmath>

#include "rpf/metrics.hpp"
#include "support/oracles.hpp"

using namespace rpf;

TEST_SUITE_BEGIN("metrics");

namespace {

// identity flow (ψ ≡ const) over an arbitrary target's manifold
std::pair<FlowStack, ParamVector> identity_stack(
    const std::shared_ptr<const TargetEnergy>& target, int height = 1) {
  auto constant = std::make_shared<TargetEnergy>(
      "const", target->manifold(), ConstantTarget{0.0});
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  auto [theta, pot] = build_potential(spec, target->manifold(), constant, 3);
  FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot));
  return {make_stack(layer, height), theta};
}

}  // namespace

TEST_CASE("ess degenerate cases") {
  // equal weights -> 100%
  std::vector<double> equal(500, 0.37);
  CHECK(ess_percent_of_weights(equal) == doctest::Approx(100.0).epsilon(1e-12));
  // one dominant weight among N -> 100/N %
  std::vector<double> dominant(200, 1e-14);
  dominant[17] = 1.0;
  CHECK(ess_percent_of_weights(dominant) ==
        doctest::Approx(100.0 / 200).epsilon(1e-6));
}

TEST_CASE("ess estimator equals the direct formula on the same samples") {
  auto target = make_target("u1");
  auto [stack, theta] = identity_stack(target);
  const std::size_t n = 2000;
  const std::uint64_t seed = 91;
  EssReport er = ess(stack, theta, *target, n, seed);

  // identity flow: log q = base density, so w ∝ exp(-u(x)) on the same draw
  auto xs = target->manifold().sample_base(n, seed);
  std::vector<double> w;
  double base = target->manifold().base_log_density(xs[0]);
  for (const auto& x : xs)
    w.push_back(std::exp(-target->energy_at(x) - base));
  CHECK(er.ess_pct == doctest::Approx(testing::ess_reference(w)).epsilon(1e-12));
  CHECK(er.n_excluded == 0);
}

TEST_CASE("perfect model reaches 100% ESS and zero KL") {
  auto target = make_target("uniform_sphere");
  auto [stack, theta] = identity_stack(target);
  EssReport er = ess(stack, theta, *target, 2000, 17);
  CHECK(er.ess_pct == doctest::Approx(100.0).epsilon(1e-10));
  double log_z = log_z_quadrature(*target).log_z;
  KlReport kr = kl_report(stack, theta, *target, 2000, 18, log_z);
  CHECK(std::abs(kr.kl) <= std::max(3.0 * kr.std_error, 1e-6));  // log Z quadrature tolerance
}

TEST_CASE("bound verdicts reproduce the reported pass/fail arithmetic") {
  // measured stats just under (0.24, 0.84) with λ = 0.48 pass on the sphere
  BoundReport pass = bound_verdict(0.24 - 1e-9, 0.84, 0.48, true, 1000000);
  CHECK(pass.passes);
  CHECK(pass.eta_required > 0.84);
  // (0.365, 1.11) fails: 1.11 exceeds tcg(0.73)
  BoundReport fail = bound_verdict(0.365, 1.11, 0.73, true, 1000000);
  CHECK(!fail.passes);
  CHECK(fail.eta_required < 1.11);
  // the torus requirement is an operator norm below 1
  BoundReport torus = bound_verdict(0.1, 0.5, 1.0, false, 10);
  CHECK(torus.passes);
  CHECK(torus.eta_required == 1.0);
  BoundReport torus_fail = bound_verdict(0.1, 1.05, 1.0, false, 10);
  CHECK(!torus_fail.passes);
}

TEST_CASE("bound_check on a constant potential passes with zero stats") {
  auto target = make_target("uniform_sphere");
  auto [stack, theta] = identity_stack(target);
  BoundReport rep = bound_check(*stack.layers.front().potential, theta,
                                target->manifold(), 0.5, 200, 21);
  CHECK(rep.max_grad_norm <= 1e-14);
  CHECK(rep.max_hess_opnorm <= 1e-12);
  CHECK(rep.passes);
  CHECK_THROWS_AS(bound_check(*stack.layers.front().potential, theta,
                              target->manifold(), 0.5, 0, 21),
                  ContractError);
}

TEST_CASE("bound_check maxima are monotone over nested probe sets") {
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;
  spec.layer_sizes = {8, 8, 1};
  spec.output_scale = 2.0;
  auto [theta, pot] = build_potential(spec, target->manifold(), nullptr, 22);
  double prev_grad = 0.0, prev_hess = 0.0;
  for (std::size_t n : {50, 100, 200, 400, 800}) {
    BoundReport rep = bound_check(pot, theta, target->manifold(), 1.0, n, 23);
    CHECK(rep.max_grad_norm >= prev_grad);
    CHECK(rep.max_hess_opnorm >= prev_hess);
    prev_grad = rep.max_grad_norm;
    prev_hess = rep.max_hess_opnorm;
  }
}

TEST_CASE("density grid of the identity flow is the base density") {
  for (const char* name : {"uniform_torus", "uniform_sphere"}) {
    auto target = make_target(name);
    auto [stack, theta] = identity_stack(target, 2);
    DensityGrid grid = density_grid(stack, theta, 48);
    double base = target->manifold().base_log_density(
        target->manifold().sample_base(1, 1)[0]);
    for (int i = 0; i < grid.log_q.size(); ++i) {
      REQUIRE(grid.ok[i] == 1);
      CHECK(std::abs(grid.log_q[i] - base) <= 1e-9);
    }
    CHECK(std::abs(grid.quadrature_mass() - 1.0) <= 1e-3);
  }
}

TEST_CASE("density grid normalizes for a non-trivial flow") {
  auto target = make_target("u1");
  NetworkSpec spec;
  spec.architecture = Architecture::energy_scaled;
  auto [theta, pot] = build_potential(spec, target->manifold(), target, 24);
  theta.values()[0] = 0.04;  // keeps ||H_psi|| < 1, so the flow stays invertible
  FlowLayer layer(target->manifold(), std::make_shared<Potential>(pot));
  FlowStack stack = make_stack(layer, 1);
  DensityGrid grid = density_grid(stack, theta, 128);
  for (int i = 0; i < grid.log_q.size(); ++i) REQUIRE(grid.ok[i] == 1);
  CHECK(std::abs(grid.quadrature_mass() - 1.0) <= 1e-3);
}

TEST_SUITE_END();
