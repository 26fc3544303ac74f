#pragma once

// Model-quality metrics: importance-sampling ESS, Monte-Carlo KL, the
// derivative-bound checker behind the gradient-descent guarantee, and
// density-grid exports.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "rpf/flow.hpp"
#include "rpf/targets.hpp"

namespace rpf {

struct EssReport {
  double ess_pct = 0.0;      // converged samples only
  double ess_pct_raw = 0.0;  // every sample that produced a finite weight
  std::size_t n_total = 0;
  std::size_t n_excluded = 0;  // non-converged (dropped from ess_pct)
};

// Draw n base samples, push them through the stack and compute
// 100·(Σw)²/(N·Σw²) for w = exp(-u(y) - log q(y)).
EssReport ess(const FlowStack& stack, const ParamVector& theta,
              const TargetEnergy& target, std::size_t n, std::uint64_t seed);

// Direct one-line ESS on explicit weights (reference implementation).
double ess_percent_of_weights(const std::vector<double>& weights);

struct KlReport {
  double kl = 0.0;
  double std_error = 0.0;
  double mean_logdet = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;
};

KlReport kl_report(const FlowStack& stack, const ParamVector& theta,
                   const TargetEnergy& target, std::size_t n,
                   std::uint64_t seed, double log_z);

struct BoundReport {
  std::size_t n_probe = 0;
  double max_grad_norm = 0.0;
  double max_hess_opnorm = 0.0;
  double lambda = 0.0;
  double eta_required = 0.0;
  bool passes = false;
};

// passes ⇔ max_grad_norm < λ/2 and max_hess_opnorm < η(λ), with
// η = tcg(λ) on spheres and 1 on flat manifolds.
BoundReport bound_verdict(double max_grad_norm, double max_hess_opnorm,
                          double lambda, bool on_sphere, std::size_t n_probe);

// Probe uniformly at random and apply the verdict; lambda <= 0 picks the
// tightest ball 2·max_grad_norm.
BoundReport bound_check(const Potential& potential, const ParamVector& theta,
                        const ManifoldKernel& manifold, double lambda,
                        std::size_t n_probe, std::uint64_t seed);

struct DensityGrid {
  int res1 = 0, res2 = 0;              // grid shape (rows x cols)
  Eigen::MatrixXd coords;              // (res1*res2) x 2 chart coordinates
  Eigen::VectorXd log_q;               // NaN on flagged cells
  std::vector<std::uint8_t> ok;        // 0 where inversion failed
  Eigen::VectorXd quad_weights;        // per-cell area weights

  double quadrature_mass() const;      // ∫ exp(log_q) over ok cells
};

// Chart grid of the model density: torus grids are cell centres in the two
// angle coordinates, sphere grids are (latitude, longitude) with res x 2*res
// cells. log q at a grid point comes from inverting the stack layer by layer
// (closed-form preimage checked by a forward inner solve) and applying the
// change of variables.
DensityGrid density_grid(const FlowStack& stack, const ParamVector& theta,
                         int resolution);

}  // namespace rpf
