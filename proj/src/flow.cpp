#include "rpf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace rpf {

namespace {

AVec<double> to_avec(const Eigen::VectorXd& v) {
  AVec<double> out{};
  for (int i = 0; i < v.size() && i < kMaxAmbient; ++i) out[i] = v[i];
  return out;
}

double h_value(const FlowLayer& layer, const ParamVector& theta, const Point& x,
               const Point& y) {
  return 0.5 * layer.manifold.dist_sq(x, y) +
         layer.potential->value<double>(theta, to_avec(y.coords));
}

// gradient of h(x, ·) at y in the tangent basis at y
Eigen::VectorXd h_grad(const FlowLayer& layer, const ParamVector& theta,
                       const Point& x, const Point& y, const TangentBasis& ey) {
  TangentVector lg = layer.manifold.log_map(y, x);
  Eigen::VectorXd g = -(ey.rows * lg.components);
  g += layer.potential->chart_gradient(theta, y, ey);
  return g;
}

// Hessian of h(x, ·) at y in the tangent basis at y (distance part via the
// chart-composed duals, ψ part likewise)
Eigen::MatrixXd h_hess(const FlowLayer& layer, const ParamVector& theta,
                       const Point& x, const Point& y, const TangentBasis& ex,
                       const TangentBasis& ey) {
  const int dim = layer.manifold.dim();
  Eigen::MatrixXd A(dim, dim);
  layer.manifold.visit([&](const auto& m) {
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        AVec<D2> xi = zero_avec<D2>(dim);
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] += d2_seed(0.0, 1.0, 0.0);
        up[j] += d2_seed(0.0, 0.0, 1.0);
        double v =
            d_slot01(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up)) +
            d_slot01(layer.potential->chart_value<D2>(theta, y, ey.rows, up));
        A(i, j) = v;
        A(j, i) = v;
      }
  });
  return A;
}

double min_eigenvalue(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  return es.eigenvalues().minCoeff();
}

struct SolveOutcome {
  InnerSolveReport report;
  TangentBasis ey;
  Eigen::MatrixXd A;
};

SolveOutcome descend_from(const FlowLayer& layer, const ParamVector& theta,
                          const Point& x, const Point& start) {
  const auto& cfg = layer.solver;
  const ManifoldKernel& M = layer.manifold;

  Point y = start;
  double h_cur = h_value(layer, theta, x, y);
  double gn = std::numeric_limits<double>::infinity();
  bool aborted = false;
  int iter = 0;
  double s_prev = cfg.gd_step_size;

  for (; iter < cfg.max_gd_steps; ++iter) {
    TangentBasis ey = M.tangent_basis(y);
    Eigen::VectorXd g;
    try {
      g = h_grad(layer, theta, x, y, ey);
    } catch (const CutLocusError&) {
      aborted = true;
      break;
    }
    gn = g.norm();
    if (!std::isfinite(gn)) {
      aborted = true;
      break;
    }
    if (gn <= cfg.grad_tolerance) break;

    bool stepped = false;
    if (cfg.newton_polish && gn <= cfg.newton_threshold) {
      TangentBasis ex = M.tangent_basis(x);
      Eigen::MatrixXd A = h_hess(layer, theta, x, y, ex, ey);
      if (min_eigenvalue(A) > 0.0) {
        Eigen::VectorXd delta = -A.ldlt().solve(g);
        Point y2 = M.exp_map(y, {y, ey.rows.transpose() * delta});
        double h2 = h_value(layer, theta, x, y2);
        if (h2 <= h_cur + 1e-14 * (1.0 + std::abs(h_cur))) {
          y = y2;
          h_cur = h2;
          stepped = true;
        }
      }
    }
    if (!stepped) {
      // backtracking keeps descent monotone; the full step is always
      // accepted inside the Lemma-5 regime where H_h eigenvalues sit in
      // (0, 2). The accepted step seeds the next trial so stiff problems
      // still converge at their natural rate.
      double s = std::min(cfg.gd_step_size, 2.0 * s_prev);
      while (s > 1e-12) {
        Point y2 = M.exp_map(y, {y, ey.rows.transpose() * (-s * g)});
        double h2 = h_value(layer, theta, x, y2);
        if (h2 <= h_cur - 1e-4 * s * gn * gn) {
          y = y2;
          h_cur = h2;
          stepped = true;
          s_prev = s;
          break;
        }
        s *= 0.5;
      }
      if (!stepped) break;  // line search stalled
    }
  }

  // final polish: if the gradient-descent budget ran out in a locally convex
  // region, a few guarded Newton steps finish the job (one step suffices for
  // quadratic landscapes)
  if (!aborted && cfg.newton_polish && gn > cfg.grad_tolerance) {
    for (int extra = 0; extra < 25; ++extra) {
      TangentBasis ey = M.tangent_basis(y);
      Eigen::VectorXd g;
      try {
        g = h_grad(layer, theta, x, y, ey);
      } catch (const CutLocusError&) {
        aborted = true;
        break;
      }
      gn = g.norm();
      if (!std::isfinite(gn) || gn <= cfg.grad_tolerance) break;
      TangentBasis ex = M.tangent_basis(x);
      Eigen::MatrixXd A = h_hess(layer, theta, x, y, ex, ey);
      if (!(min_eigenvalue(A) > 0.0)) break;
      Eigen::VectorXd delta = -A.ldlt().solve(g);
      Point y2 = M.exp_map(y, {y, ey.rows.transpose() * delta});
      double h2 = h_value(layer, theta, x, y2);
      if (h2 > h_cur + 1e-14 * (1.0 + std::abs(h_cur))) break;
      y = y2;
      h_cur = h2;
      ++iter;
    }
  }

  SolveOutcome out;
  out.ey = M.tangent_basis(y);
  double min_eig = 0.0;
  if (!aborted) {
    try {
      Eigen::VectorXd g = h_grad(layer, theta, x, y, out.ey);
      gn = g.norm();
      TangentBasis ex = M.tangent_basis(x);
      out.A = h_hess(layer, theta, x, y, ex, out.ey);
      min_eig = min_eigenvalue(out.A);
    } catch (const CutLocusError&) {
      aborted = true;
    }
  }
  out.report.minimizer = y;
  out.report.psi_c_value = h_cur;
  out.report.iterations = iter;
  out.report.final_grad_norm = gn;
  out.report.hessian_min_eig = min_eig;
  out.report.converged =
      !aborted && gn <= cfg.grad_tolerance && min_eig > 0.0;
  return out;
}

std::uint64_t point_hash(const Point& x) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < x.coords.size(); ++i) {
    std::uint64_t bits;
    double v = x.coords[i];
    std::memcpy(&bits, &v, sizeof(bits));
    h = (h ^ bits) * 0x100000001b3ULL;
  }
  return h;
}

SolveOutcome inner_solve(const FlowLayer& layer, const ParamVector& theta,
                         const Point& x) {
  SolveOutcome best = descend_from(layer, theta, x, x);
  if (layer.solver.restart_points > 0) {
    auto starts = layer.manifold.sample_base(layer.solver.restart_points,
                                             derive_seed(point_hash(x), "restart"));
    for (const auto& s : starts) {
      SolveOutcome cand = descend_from(layer, theta, x, s);
      double dv = cand.report.psi_c_value - best.report.psi_c_value;
      if (dv < -1e-9) {
        best = std::move(cand);
      } else if (std::abs(dv) <= 1e-9) {
        // deterministic tie-break: prefer the minimizer nearest to x
        if (layer.manifold.dist_sq(x, cand.report.minimizer) <
            layer.manifold.dist_sq(x, best.report.minimizer))
          best = std::move(cand);
      }
    }
  }
  return best;
}

}  // namespace

FlowStack make_stack(const FlowLayer& layer, int height, bool share_parameters) {
  if (height < 1) throw ConfigError("stack.layers", "must be at least 1");
  FlowStack stack;
  stack.share_parameters = share_parameters;
  for (int i = 0; i < height; ++i) stack.layers.push_back(layer);
  return stack;
}

InnerSolveReport inner_minimize(const FlowLayer& layer, const ParamVector& theta,
                                const Point& x) {
  return inner_solve(layer, theta, x).report;
}

double psi_c(const FlowLayer& layer, const ParamVector& theta, const Point& x,
             InnerSolveReport* report) {
  InnerSolveReport r = inner_minimize(layer, theta, x);
  if (report) *report = r;
  return r.psi_c_value;
}

LayerLocal layer_local(const FlowLayer& layer, const ParamVector& theta,
                       const Point& x, int order) {
  SolveOutcome so = inner_solve(layer, theta, x);
  LayerLocal loc;
  loc.x = x;
  loc.y = so.report.minimizer;
  loc.ex = layer.manifold.tangent_basis(x);
  loc.ey = so.ey;
  loc.report = so.report;
  loc.A = so.A;
  if (order < 2) return loc;

  const int dim = layer.manifold.dim();
  const Point& y = loc.y;
  loc.B = Eigen::MatrixXd(dim, dim);
  layer.manifold.visit([&](const auto& m) {
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) {
        AVec<D2> xi = zero_avec<D2>(dim);
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] = d2_seed(0.0, 1.0, 0.0);
        xi[j] = d2_seed(0.0, 0.0, 1.0);
        loc.B(i, j) = -d_slot01(
            chart_half_dist_sq(m, x, loc.ex.rows, xi, y, loc.ey.rows, up));
      }
  });
  double detA = loc.A.determinant();
  double detB = loc.B.determinant();
  if (std::abs(detA) > 0.0) loc.J = loc.A.ldlt().solve(loc.B);
  loc.logdet = std::log(std::abs(detB)) - std::log(std::abs(detA));
  if (order < 3) return loc;

  auto zero_mats = [dim] {
    return std::vector<Eigen::MatrixXd>(dim, Eigen::MatrixXd::Zero(dim, dim));
  };
  loc.C1 = zero_mats();
  loc.C2 = zero_mats();
  loc.C3 = zero_mats();
  layer.manifold.visit([&](const auto& m) {
    // C1: distance + ψ, symmetric in all three indices
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          up[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          up[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t =
              d_slot012(
                  chart_half_dist_sq(m, x, loc.ex.rows, xi, y, loc.ey.rows, up)) +
              d_slot012(
                  layer.potential->chart_value<D3>(theta, y, loc.ey.rows, up));
          int idx[3] = {i, j, k};
          std::sort(idx, idx + 3);
          do {
            loc.C1[idx[2]](idx[0], idx[1]) = t;
            loc.C1[idx[2]](idx[1], idx[0]) = t;
          } while (std::next_permutation(idx, idx + 3));
        }
    // C2 and C3 touch ξ, so ψ drops out and only the distance term remains
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = 0; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          up[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          xi[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t = d_slot012(
              chart_half_dist_sq(m, x, loc.ex.rows, xi, y, loc.ey.rows, up));
          loc.C2[k](i, j) = t;
          loc.C2[k](j, i) = t;
        }
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          xi[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          xi[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t = d_slot012(
              chart_half_dist_sq(m, x, loc.ex.rows, xi, y, loc.ey.rows, up));
          loc.C3[k](i, j) = t;
          loc.C3[j](i, k) = t;
        }
  });
  return loc;
}

ForwardResult forward(const FlowLayer& layer, const ParamVector& theta,
                      const Point& x) {
  LayerLocal loc = layer_local(layer, theta, x, 2);
  double detJ = loc.J.size() ? loc.J.determinant() : 0.0;
  if (!(std::abs(detJ) >= 1e-300))
    throw DegenerateFlowError("forward: singular projected Jacobian");
  return {loc.y, loc.logdet, loc.report};
}

Eigen::MatrixXd implicit_jacobian(const FlowLayer& layer,
                                  const ParamVector& theta, const Point& x) {
  LayerLocal loc = layer_local(layer, theta, x, 2);
  if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0)
    throw ImplicitSolveError("implicit_jacobian: inner Hessian not positive definite",
                             loc.report.hessian_min_eig);
  return loc.J;
}

Eigen::RowVectorXd implicit_vjp(const FlowLayer& layer, const ParamVector& theta,
                                const Point& x, const Eigen::VectorXd& v) {
  LayerLocal loc = layer_local(layer, theta, x, 2);
  if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0)
    throw ImplicitSolveError("implicit_vjp: inner Hessian not positive definite",
                             loc.report.hessian_min_eig);
  // u = vᵀ A⁻¹ B via one symmetric solve
  Eigen::VectorXd z = loc.A.ldlt().solve(v);
  return (z.transpose() * loc.B).eval();
}

Eigen::RowVectorXd implicit_vjp2(const FlowLayer& layer,
                                 const ParamVector& theta, const Point& x,
                                 const Eigen::VectorXd& v,
                                 const Eigen::VectorXd& w) {
  LayerLocal loc = layer_local(layer, theta, x, 3);
  if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0)
    throw ImplicitSolveError("implicit_vjp2: inner Hessian not positive definite",
                             loc.report.hessian_min_eig);
  const int dim = layer.manifold.dim();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(loc.A);
  Eigen::RowVectorXd out(dim);
  for (int m = 0; m < dim; ++m) {
    // total derivatives of A and B along ξ_m, including the motion of y*
    Eigen::MatrixXd dA = loc.C2[m];
    Eigen::MatrixXd dB(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) {
        double b = -loc.C3[m](i, j);
        for (int k = 0; k < dim; ++k) b -= loc.C2[j](i, k) * loc.J(k, m);
        dB(i, j) = b;
      }
    for (int k = 0; k < dim; ++k) dA += loc.C1[k] * loc.J(k, m);
    Eigen::MatrixXd dJ = ldlt.solve(dB - dA * loc.J);
    out[m] = v.dot(dJ * w);
  }
  return out;
}

Eigen::VectorXd param_vjp(const FlowLayer& layer, const ParamVector& theta,
                          const Point& x, const Eigen::VectorXd& v) {
  LayerLocal loc = layer_local(layer, theta, x, 2);
  if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0)
    throw ImplicitSolveError("param_vjp: inner Hessian not positive definite",
                             loc.report.hessian_min_eig);
  Eigen::VectorXd w = loc.A.ldlt().solve(v);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  layer.potential->param_grad_bundle(theta, loc.y, 0.0, w, Eigen::MatrixXd(),
                                     -1.0, out);
  return out;
}

Eigen::VectorXd logdet_grad_upsilon(const LayerLocal& loc) {
  const int dim = static_cast<int>(loc.A.rows());
  Eigen::MatrixXd Ainv = loc.A.inverse();
  Eigen::MatrixXd Binv = loc.B.inverse();
  Eigen::VectorXd g(dim);
  for (int m = 0; m < dim; ++m) {
    double acc = -(Ainv.transpose().cwiseProduct(loc.C1[m])).sum();
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        acc += Binv(j, i) * (-loc.C2[j](i, m));
    g[m] = acc;
  }
  return g;
}

Eigen::VectorXd logdet_grad_xi(const LayerLocal& loc) {
  const int dim = static_cast<int>(loc.A.rows());
  Eigen::MatrixXd Ainv = loc.A.inverse();
  Eigen::MatrixXd Binv = loc.B.inverse();
  Eigen::VectorXd g(dim);
  for (int m = 0; m < dim; ++m) {
    double acc = -(Ainv.transpose().cwiseProduct(loc.C2[m])).sum();
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        acc += Binv(j, i) * (-loc.C3[m](i, j));
    g[m] = acc;
  }
  return g;
}

Eigen::VectorXd logdet_param_grad(const FlowLayer& layer,
                                  const ParamVector& theta, const Point& x) {
  LayerLocal loc = layer_local(layer, theta, x, 3);
  if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0)
    throw ImplicitSolveError("logdet_param_grad: inner Hessian not positive definite",
                             loc.report.hessian_min_eig);
  Eigen::MatrixXd Ainv = loc.A.inverse();
  Eigen::VectorXd w = Ainv * logdet_grad_upsilon(loc);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  layer.potential->param_grad_bundle(theta, loc.y, 0.0, w, Ainv, -1.0, out);
  return out;
}

ParamVector layer_theta(const FlowStack& stack, const ParamVector& theta,
                        int index) {
  if (stack.share_parameters) return theta;
  int off = 0;
  for (int l = 0; l < index; ++l)
    off += stack.layers[l].potential->param_count();
  int n = stack.layers[index].potential->param_count();
  return ParamVector(theta.values().segment(off, n),
                     stack.layers[index].potential->make_layout());
}

StackForwardResult stack_forward(const FlowStack& stack, const ParamVector& theta,
                                 const Point& x) {
  StackForwardResult out;
  out.y = x;
  for (int l = 0; l < static_cast<int>(stack.layers.size()); ++l) {
    ParamVector th = layer_theta(stack, theta, l);
    ForwardResult fr = forward(stack.layers[l], th, out.y);
    out.total_logdet += fr.logdet;
    out.all_converged = out.all_converged && fr.report.converged;
    out.reports.push_back(fr.report);
    out.y = fr.y;
  }
  return out;
}

StackGradSample stack_loss_grad(const FlowStack& stack, const ParamVector& theta,
                                const TargetEnergy& target, const Point& x) {
  const int L = static_cast<int>(stack.layers.size());
  StackGradSample out;
  out.grad = Eigen::VectorXd::Zero(theta.size());

  std::vector<LayerLocal> locals;
  std::vector<ParamVector> thetas;
  locals.reserve(L);
  Point cur = x;
  for (int l = 0; l < L; ++l) {
    thetas.push_back(layer_theta(stack, theta, l));
    LayerLocal loc = layer_local(stack.layers[l], thetas[l], cur, 3);
    if (!loc.report.converged || loc.report.hessian_min_eig <= 0.0) {
      out.converged = false;
      return out;
    }
    cur = loc.y;
    out.neg_logdet -= loc.logdet;
    locals.push_back(std::move(loc));
  }
  out.y = cur;
  out.energy = target.energy_at(cur);
  out.converged = true;

  // reverse sweep: λ is the adjoint of the current layer's output in its
  // tangent basis; the final output feeds the target energy
  Eigen::VectorXd lambda =
      locals.back().ey.rows * target.gradient_at(cur);
  int off_end = static_cast<int>(theta.size());
  for (int l = L - 1; l >= 0; --l) {
    const LayerLocal& loc = locals[l];
    Eigen::MatrixXd Ainv = loc.A.inverse();
    Eigen::VectorXd gu = logdet_grad_upsilon(loc);
    Eigen::VectorXd w = Ainv * (gu - lambda);
    int n = thetas[l].size();
    int off = stack.share_parameters ? 0 : off_end - n;
    Eigen::VectorXd slice = Eigen::VectorXd::Zero(n);
    stack.layers[l].potential->param_grad_bundle(thetas[l], loc.y, 0.0, w, Ainv,
                                                 1.0, slice);
    out.grad.segment(off, n) += slice;
    off_end = off;
    if (l > 0)
      lambda = (-logdet_grad_xi(loc) + loc.J.transpose() * (lambda - gu)).eval();
  }
  return out;
}

double discrete_c_concave(const ManifoldKernel& manifold,
                          const std::vector<std::pair<Point, double>>& anchors,
                          const Point& x) {
  if (anchors.empty())
    throw ContractError("discrete_c_concave: anchors must be non-empty");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [y, alpha] : anchors)
    best = std::min(best, 0.5 * manifold.dist_sq(x, y) + alpha);
  return best;
}

// ------------------------------ unrolled path ------------------------------

namespace {

Point wrap_to_manifold(const ManifoldKernel& m, const Eigen::VectorXd& coords) {
  if (m.is_torus()) return std::get<Torus>(m.impl()).wrap(Point{coords});
  return Point{coords};
}

Eigen::VectorXd wrapped_diff(const ManifoldKernel& m, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& x) {
  Eigen::VectorXd d = y - x;
  if (m.is_torus()) {
    const auto& L = std::get<Torus>(m.impl()).circumferences();
    for (int i = 0; i < d.size(); ++i)
      d[i] -= L[i] * std::floor(d[i] / L[i] + 0.5);
  }
  return d;
}

struct UnrolledLayerTape {
  std::vector<Eigen::VectorXd> trajectory;  // y_0 .. y_K (raw coordinates)
  Eigen::MatrixXd A;                        // I + H_ψ at y_K
  double logdet = 0.0;
};

UnrolledLayerTape unroll_layer(const FlowLayer& layer, const ParamVector& theta,
                               const Eigen::VectorXd& x, int steps) {
  if (!(layer.manifold.is_torus() || layer.manifold.is_euclidean()))
    throw UnsupportedError("unrolled path: flat manifolds only");
  const ManifoldKernel& M = layer.manifold;
  const double s = layer.solver.gd_step_size;
  UnrolledLayerTape tape;
  Eigen::VectorXd y = x;
  tape.trajectory.push_back(y);
  for (int k = 0; k < steps; ++k) {
    Point yp = wrap_to_manifold(M, y);
    TangentBasis ey = M.tangent_basis(yp);
    Eigen::VectorXd g =
        wrapped_diff(M, y, x) + layer.potential->chart_gradient(theta, yp, ey);
    y -= s * g;
    tape.trajectory.push_back(y);
  }
  Point yp = wrap_to_manifold(M, y);
  DerivativeBundle db = layer.potential->eval(theta, yp, 2);
  tape.A = Eigen::MatrixXd::Identity(M.dim(), M.dim()) + db.hess_x;
  tape.logdet = -std::log(std::abs(tape.A.determinant()));
  return tape;
}

}  // namespace

double unrolled_loss_value(const FlowStack& stack, const ParamVector& theta,
                           const TargetEnergy& target, const Point& x,
                           int unroll_steps) {
  double loss = 0.0;
  Eigen::VectorXd cur = x.coords;
  for (int l = 0; l < static_cast<int>(stack.layers.size()); ++l) {
    ParamVector th = layer_theta(stack, theta, l);
    UnrolledLayerTape tape =
        unroll_layer(stack.layers[l], th, cur, unroll_steps);
    loss -= tape.logdet;
    cur = tape.trajectory.back();
  }
  loss += target.energy_at(wrap_to_manifold(stack.layers.back().manifold, cur));
  return loss;
}

StackGradSample unrolled_loss_grad(const FlowStack& stack,
                                   const ParamVector& theta,
                                   const TargetEnergy& target, const Point& x,
                                   int unroll_steps) {
  const int L = static_cast<int>(stack.layers.size());
  StackGradSample out;
  out.grad = Eigen::VectorXd::Zero(theta.size());

  std::vector<UnrolledLayerTape> tapes;
  std::vector<ParamVector> thetas;
  Eigen::VectorXd cur = x.coords;
  for (int l = 0; l < L; ++l) {
    thetas.push_back(layer_theta(stack, theta, l));
    tapes.push_back(unroll_layer(stack.layers[l], thetas[l], cur, unroll_steps));
    out.neg_logdet -= tapes[l].logdet;
    cur = tapes[l].trajectory.back();
  }
  const ManifoldKernel& M = stack.layers.back().manifold;
  Point yfin = wrap_to_manifold(M, cur);
  out.y = yfin;
  out.energy = target.energy_at(yfin);
  out.converged = true;

  Eigen::VectorXd lambda = target.gradient_at(yfin);
  int off_end = static_cast<int>(theta.size());
  for (int l = L - 1; l >= 0; --l) {
    const auto& tape = tapes[l];
    const auto& layer = stack.layers[l];
    const double s = layer.solver.gd_step_size;
    const int dim = layer.manifold.dim();
    int n = thetas[l].size();
    int off = stack.share_parameters ? 0 : off_end - n;
    Eigen::VectorXd slice = Eigen::VectorXd::Zero(n);

    // tail: loss has -logdet = +log det A(y_K, θ)
    Point yk = wrap_to_manifold(layer.manifold, tape.trajectory.back());
    Eigen::MatrixXd Ainv = tape.A.inverse();
    layer.potential->param_grad_bundle(thetas[l], yk, 0.0, Eigen::VectorXd(),
                                       Ainv, 1.0, slice);
    DerivativeBundle third = layer.potential->eval(thetas[l], yk, 3);
    for (int m = 0; m < dim; ++m)
      lambda[m] += (Ainv.transpose().cwiseProduct(third.third_x[m])).sum();

    // backward through the gradient-descent iteration
    Eigen::VectorXd lambda_x = Eigen::VectorXd::Zero(dim);
    for (int k = unroll_steps - 1; k >= 0; --k) {
      Point ypt = wrap_to_manifold(layer.manifold, tape.trajectory[k]);
      layer.potential->param_grad_bundle(thetas[l], ypt, 0.0, lambda,
                                         Eigen::MatrixXd(), -s, slice);
      DerivativeBundle db = layer.potential->eval(thetas[l], ypt, 2);
      Eigen::MatrixXd H =
          Eigen::MatrixXd::Identity(dim, dim) + db.hess_x;
      lambda_x += s * lambda;
      lambda = (lambda - s * H.transpose() * lambda).eval();
    }
    out.grad.segment(off, n) += slice;
    off_end = off;
    lambda += lambda_x;  // y_0 = x contributes the remaining adjoint
  }
  return out;
}

}  // namespace rpf
