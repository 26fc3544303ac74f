#pragma once

// The implicit c-concave transport layer. The dual potential ψ defines
// h(x, y) = ½ d(x, y)² + ψ(y); the layer maps x to the inner minimizer
// y* = argmin_y h(x, y), which equals exp_x(-∇ψ^c(x)) by the envelope
// identity. Jacobians, log-determinants and parameter gradients come from
// the implicit function theorem applied in geodesic normal charts frozen at
// (x, y*), where the whole computation is ordinary Euclidean calculus.

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "rpf/errors.hpp"
#include "rpf/manifold.hpp"
#include "rpf/potential.hpp"
#include "rpf/targets.hpp"

namespace rpf {

struct InnerSolverConfig {
  double grad_tolerance = 1e-10;
  int max_gd_steps = 200;
  double gd_step_size = 1.0;
  bool newton_polish = true;
  int restart_points = 0;
  double newton_threshold = 1e-4;  // gradient norm where Newton takes over

  void validate() const {
    if (!(grad_tolerance > 0.0))
      throw ConfigError("solver.grad_tolerance", "must be positive");
    if (!(gd_step_size > 0.0 && gd_step_size < 2.0))
      throw ConfigError("solver.gd_step_size", "must lie in (0, 2)");
    if (max_gd_steps < 1)
      throw ConfigError("solver.max_gd_steps", "must be at least 1");
    if (restart_points < 0)
      throw ConfigError("solver.restart_points", "must be non-negative");
  }

  bool operator==(const InnerSolverConfig&) const = default;
};

struct InnerSolveReport {
  Point minimizer;
  double psi_c_value = 0.0;
  int iterations = 0;
  double final_grad_norm = 0.0;
  bool converged = false;
  double hessian_min_eig = 0.0;
};

struct FlowLayer {
  ManifoldKernel manifold;
  std::shared_ptr<const Potential> potential;
  InnerSolverConfig solver;

  FlowLayer(ManifoldKernel m, std::shared_ptr<const Potential> p,
            InnerSolverConfig s = {})
      : manifold(std::move(m)), potential(std::move(p)), solver(s) {
    solver.validate();
    if (!(potential->manifold() == manifold))
      throw ConfigError("layer.potential",
                        "potential manifold does not match the layer manifold");
  }
};

struct FlowStack {
  std::vector<FlowLayer> layers;
  bool share_parameters = true;

  int param_count() const {
    if (layers.empty()) return 0;
    if (share_parameters) return layers.front().potential->param_count();
    int n = 0;
    for (const auto& l : layers) n += l.potential->param_count();
    return n;
  }
};

// A stack of `height` copies of one layer. With share_parameters the single
// parameter vector drives every copy.
FlowStack make_stack(const FlowLayer& layer, int height,
                     bool share_parameters = true);

// ---------------------------------------------------------------------------
// Core per-layer operations
// ---------------------------------------------------------------------------

InnerSolveReport inner_minimize(const FlowLayer& layer, const ParamVector& theta,
                                const Point& x);

// ψ^c(x) = h(x, y*); the report carries the convergence flag
double psi_c(const FlowLayer& layer, const ParamVector& theta, const Point& x,
             InnerSolveReport* report = nullptr);

struct ForwardResult {
  Point y;
  double logdet = 0.0;
  InnerSolveReport report;
};

ForwardResult forward(const FlowLayer& layer, const ParamVector& theta,
                      const Point& x);

// J = [h_yy]⁻¹ (-h_yx) in the tangent bases at (y*, x)
Eigen::MatrixXd implicit_jacobian(const FlowLayer& layer,
                                  const ParamVector& theta, const Point& x);

// order-1 vector-Jacobian product u = vᵀ ∂x y* (one linear solve)
Eigen::RowVectorXd implicit_vjp(const FlowLayer& layer, const ParamVector& theta,
                                const Point& x, const Eigen::VectorXd& v);

// order-2 product: gradient with respect to x of the scalar vᵀ J(x) w
Eigen::RowVectorXd implicit_vjp2(const FlowLayer& layer,
                                 const ParamVector& theta, const Point& x,
                                 const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& w);

// parameter-direction product vᵀ ∂θ y* (length |θ|)
Eigen::VectorXd param_vjp(const FlowLayer& layer, const ParamVector& theta,
                          const Point& x, const Eigen::VectorXd& v);

// ∇θ log |det E_y J E_xᵀ| at fixed x
Eigen::VectorXd logdet_param_grad(const FlowLayer& layer,
                                  const ParamVector& theta, const Point& x);

// ---------------------------------------------------------------------------
// Stack operations
// ---------------------------------------------------------------------------

struct StackForwardResult {
  Point y;
  double total_logdet = 0.0;
  std::vector<InnerSolveReport> reports;
  bool all_converged = true;
};

StackForwardResult stack_forward(const FlowStack& stack, const ParamVector& theta,
                                 const Point& x);

// Per-sample loss -Σ log-dets + u(y) together with its exact θ-gradient,
// assembled by one reverse sweep over the layers (implicit path).
struct StackGradSample {
  bool converged = false;
  double neg_logdet = 0.0;
  double energy = 0.0;
  Point y;
  Eigen::VectorXd grad;
};

StackGradSample stack_loss_grad(const FlowStack& stack, const ParamVector& theta,
                                const TargetEnergy& target, const Point& x);

// Cross-checking route: forward unroll of a fixed number of plain gradient
// descent steps with reverse accumulation through the iteration. Flat
// manifolds only.
double unrolled_loss_value(const FlowStack& stack, const ParamVector& theta,
                           const TargetEnergy& target, const Point& x,
                           int unroll_steps);
StackGradSample unrolled_loss_grad(const FlowStack& stack,
                                   const ParamVector& theta,
                                   const TargetEnergy& target, const Point& x,
                                   int unroll_steps);

// min_i ½ d(x, y_i)² + α_i — the discrete dual used as an independent oracle
double discrete_c_concave(const ManifoldKernel& manifold,
                          const std::vector<std::pair<Point, double>>& anchors,
                          const Point& x);

// ---------------------------------------------------------------------------
// Internal: frozen-chart local data for one solved layer (exposed for the
// training loop and the oracle suites).
// ---------------------------------------------------------------------------

struct LayerLocal {
  Point x, y;
  TangentBasis ex, ey;
  InnerSolveReport report;
  Eigen::MatrixXd A;  // h̃_υυ at the solution (positive definite when sane)
  Eigen::MatrixXd B;  // -h̃_υξ
  Eigen::MatrixXd J;  // A⁻¹ B
  double logdet = 0.0;
  // third-order tensors of h̃; [k](i,j) indexes ∂³h̃ / ∂υ_i ∂υ_j ∂υ_k (C1),
  // ∂υ_i ∂υ_j ∂ξ_k (C2) and ∂υ_i ∂ξ_j ∂ξ_k (C3)
  std::vector<Eigen::MatrixXd> C1, C2, C3;
};

LayerLocal layer_local(const FlowLayer& layer, const ParamVector& theta,
                       const Point& x, int order);

// d logdet / dυ and / dξ from the third-order tensors
Eigen::VectorXd logdet_grad_upsilon(const LayerLocal& loc);
Eigen::VectorXd logdet_grad_xi(const LayerLocal& loc);

// view of the parameters belonging to layer `index` (identity when shared)
ParamVector layer_theta(const FlowStack& stack, const ParamVector& theta,
                        int index);

}  // namespace rpf
