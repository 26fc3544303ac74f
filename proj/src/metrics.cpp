#include "rpf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rpf/threading.hpp"

namespace rpf {

namespace {

double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

struct PushedSample {
  bool ok = false;         // produced a finite weight
  bool converged = false;  // every inner solve converged
  double log_w = 0.0;
  double logdet = 0.0;
  double energy = 0.0;
};

std::vector<PushedSample> push_samples(const FlowStack& stack,
                                       const ParamVector& theta,
                                       const TargetEnergy& target,
                                       std::size_t n, std::uint64_t seed) {
  const ManifoldKernel& m = stack.layers.front().manifold;
  auto xs = m.sample_base(n, seed);
  std::vector<PushedSample> out(n);
  parallel_for(n, [&](std::size_t i) {
    PushedSample& s = out[i];
    try {
      StackForwardResult fr = stack_forward(stack, theta, xs[i]);
      double log_q = m.base_log_density(xs[i]) - fr.total_logdet;
      s.energy = target.energy_at(fr.y);
      s.logdet = fr.total_logdet;
      s.log_w = -s.energy - log_q;
      s.ok = std::isfinite(s.log_w);
      s.converged = s.ok && fr.all_converged;
    } catch (const Error&) {
      s.ok = false;
    }
  });
  return out;
}

double ess_from_logw(const std::vector<double>& log_w) {
  if (log_w.empty()) return 0.0;
  std::vector<double> lw2(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) lw2[i] = 2.0 * log_w[i];
  double num = 2.0 * logsumexp(log_w);
  double den = logsumexp(lw2);
  return 100.0 * std::exp(num - den) / static_cast<double>(log_w.size());
}

}  // namespace

double ess_percent_of_weights(const std::vector<double>& weights) {
  double sum = 0.0, sum2 = 0.0;
  for (double w : weights) {
    sum += w;
    sum2 += w * w;
  }
  if (sum2 == 0.0) return 0.0;
  return 100.0 * sum * sum / (static_cast<double>(weights.size()) * sum2);
}

EssReport ess(const FlowStack& stack, const ParamVector& theta,
              const TargetEnergy& target, std::size_t n, std::uint64_t seed) {
  auto samples = push_samples(stack, theta, target, n, seed);
  std::vector<double> lw_conv, lw_raw;
  lw_conv.reserve(n);
  lw_raw.reserve(n);
  for (const auto& s : samples) {
    if (!s.ok) continue;
    lw_raw.push_back(s.log_w);
    if (s.converged) lw_conv.push_back(s.log_w);
  }
  EssReport rep;
  rep.n_total = n;
  rep.n_excluded = n - lw_conv.size();
  rep.ess_pct = ess_from_logw(lw_conv);
  rep.ess_pct_raw = ess_from_logw(lw_raw);
  return rep;
}

KlReport kl_report(const FlowStack& stack, const ParamVector& theta,
                   const TargetEnergy& target, std::size_t n,
                   std::uint64_t seed, double log_z) {
  auto samples = push_samples(stack, theta, target, n, seed);
  KlReport rep;
  double acc = 0.0, acc2 = 0.0, acc_logdet = 0.0;
  std::size_t used = 0;
  for (const auto& s : samples) {
    if (!s.converged) continue;
    double val = -s.log_w;  // u(y) + log q(y) = ln π - logdet + u
    acc += val;
    acc2 += val * val;
    acc_logdet += s.logdet;
    ++used;
  }
  rep.n_used = used;
  rep.n_excluded = n - used;
  if (used == 0) return rep;
  double mean = acc / used;
  rep.kl = mean + log_z;
  rep.mean_logdet = acc_logdet / used;
  double var = std::max(0.0, acc2 / used - mean * mean);
  rep.std_error = std::sqrt(var / used);
  return rep;
}

BoundReport bound_verdict(double max_grad_norm, double max_hess_opnorm,
                          double lambda, bool on_sphere, std::size_t n_probe) {
  BoundReport rep;
  rep.n_probe = n_probe;
  rep.max_grad_norm = max_grad_norm;
  rep.max_hess_opnorm = max_hess_opnorm;
  rep.lambda = lambda;
  if (on_sphere)
    rep.eta_required = lambda < M_PI ? tcg(lambda)
                                     : -std::numeric_limits<double>::infinity();
  else
    rep.eta_required = 1.0;
  rep.passes = (max_grad_norm < lambda / 2.0) &&
               (max_hess_opnorm < rep.eta_required);
  return rep;
}

BoundReport bound_check(const Potential& potential, const ParamVector& theta,
                        const ManifoldKernel& manifold, double lambda,
                        std::size_t n_probe, std::uint64_t seed) {
  if (n_probe < 1) throw ContractError("bound_check: n_probe must be >= 1");
  auto probes = manifold.sample_base(n_probe, seed);
  std::vector<double> grad(n_probe), hess(n_probe);
  parallel_for(n_probe, [&](std::size_t i) {
    DerivativeBundle db = potential.eval(theta, probes[i], 2);
    grad[i] = db.grad_x.norm();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(db.hess_x);
    hess[i] = es.eigenvalues().cwiseAbs().maxCoeff();
  });
  double max_grad = 0.0, max_hess = 0.0;
  for (std::size_t i = 0; i < n_probe; ++i) {
    max_grad = std::max(max_grad, grad[i]);
    max_hess = std::max(max_hess, hess[i]);
  }
  // tightest ball consistent with the gradient bound, plus a hair so the
  // strict inequality in the verdict is satisfiable
  if (lambda <= 0.0) lambda = 2.0 * max_grad * (1.0 + 1e-9) + 1e-300;
  return bound_verdict(max_grad, max_hess, lambda, manifold.is_sphere(),
                       n_probe);
}

double DensityGrid::quadrature_mass() const {
  double acc = 0.0;
  for (int i = 0; i < log_q.size(); ++i)
    if (ok[i]) acc += quad_weights[i] * std::exp(log_q[i]);
  return acc;
}

DensityGrid density_grid(const FlowStack& stack, const ParamVector& theta,
                         int resolution) {
  const ManifoldKernel& m = stack.layers.front().manifold;
  if (m.dim() != 2)
    throw UnsupportedError("density_grid: only 2D manifolds supported");
  const int L = static_cast<int>(stack.layers.size());

  DensityGrid grid;
  std::vector<Point> cells;
  if (m.is_torus()) {
    const auto& torus = std::get<Torus>(m.impl());
    const auto& Lc = torus.circumferences();
    grid.res1 = resolution;
    grid.res2 = resolution;
    const int n = resolution * resolution;
    grid.coords.resize(n, 2);
    grid.quad_weights.resize(n);
    cells.reserve(n);
    double cell = (Lc[0] / resolution) * (Lc[1] / resolution);
    for (int i = 0; i < resolution; ++i)
      for (int j = 0; j < resolution; ++j) {
        int idx = i * resolution + j;
        double a = (i + 0.5) * Lc[0] / resolution;
        double b = (j + 0.5) * Lc[1] / resolution;
        grid.coords(idx, 0) = a;
        grid.coords(idx, 1) = b;
        grid.quad_weights[idx] = cell;
        cells.push_back(Point{Eigen::Vector2d(a, b)});
      }
  } else {
    grid.res1 = resolution;
    grid.res2 = 2 * resolution;
    const int n = grid.res1 * grid.res2;
    grid.coords.resize(n, 2);
    grid.quad_weights.resize(n);
    cells.reserve(n);
    double dl = M_PI / resolution;
    for (int i = 0; i < grid.res1; ++i)
      for (int j = 0; j < grid.res2; ++j) {
        int idx = i * grid.res2 + j;
        double lat = -M_PI / 2.0 + (i + 0.5) * dl;
        double lon = (j + 0.5) * dl;
        grid.coords(idx, 0) = lat;
        grid.coords(idx, 1) = lon;
        grid.quad_weights[idx] = std::cos(lat) * dl * dl;
        Eigen::Vector3d p(std::cos(lat) * std::cos(lon),
                          std::cos(lat) * std::sin(lon), std::sin(lat));
        cells.push_back(Point{p});
      }
  }

  const int n = static_cast<int>(cells.size());
  grid.log_q.setConstant(n, std::numeric_limits<double>::quiet_NaN());
  grid.ok.assign(n, 0);

  parallel_for(n, [&](std::size_t c) {
    Point y = cells[c];
    double logdet_sum = 0.0;
    bool ok = true;
    for (int l = L - 1; l >= 0 && ok; --l) {
      const FlowLayer& layer = stack.layers[l];
      ParamVector th = layer_theta(stack, theta, l);
      try {
        // closed-form preimage: the stationarity condition gives
        // log_y(x) = ∇ψ(y), hence x = exp_y(grad ψ(y))
        TangentBasis ey = m.tangent_basis(y);
        Eigen::VectorXd g = layer.potential->chart_gradient(th, y, ey);
        Point x = m.exp_map(y, {y, ey.rows.transpose() * g});
        LayerLocal loc = layer_local(layer, th, x, 2);
        if (!loc.report.converged ||
            m.dist_sq(loc.y, y) > 1e-10) {
          ok = false;
          break;
        }
        logdet_sum += loc.logdet;
        y = x;
      } catch (const Error&) {
        ok = false;
      }
    }
    if (ok) {
      grid.log_q[c] = m.base_log_density(y) - logdet_sum;
      grid.ok[c] = 1;
    }
  });
  return grid;
}

}  // namespace rpf
