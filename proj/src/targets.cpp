#include "rpf/targets.hpp"

#include <algorithm>
#include <cmath>

namespace rpf {

namespace {

AVec<double> to_avec(const Eigen::VectorXd& v) {
  AVec<double> out{};
  for (int i = 0; i < v.size() && i < kMaxAmbient; ++i) out[i] = v[i];
  return out;
}

}  // namespace

double TargetEnergy::energy_at(const Point& x) const {
  return energy<double>(to_avec(x.coords));
}

Eigen::VectorXd TargetEnergy::gradient_at(const Point& x) const {
  AVec<double> g = energy_grad<double>(to_avec(x.coords));
  Eigen::VectorXd out(x.coords.size());
  for (int i = 0; i < out.size(); ++i) out[i] = g[i];
  return out;
}

std::shared_ptr<const TargetEnergy> make_target(const std::string& name) {
  if (name == "u1") {
    // sin(π(x1 - x2)) is periodic with circumference 2 per axis
    auto m = ManifoldKernel::torus(Eigen::Vector2d(2.0, 2.0));
    TrigPolyTarget t;
    t.omegas = Eigen::Vector2d(M_PI, M_PI);
    t.terms.push_back({1.0, true, (Eigen::VectorXi(2) << 1, -1).finished(), 0.0});
    return std::make_shared<TargetEnergy>("u1", m, t, "diagonal_shift");
  }
  if (name == "u2_substitute") {
    // documented stand-in for the externally defined u2: three von Mises
    // product modes on the 2π torus
    auto m = ManifoldKernel::torus(Eigen::Vector2d(2.0 * M_PI, 2.0 * M_PI));
    TorusVonMisesTarget t;
    t.omegas = Eigen::Vector2d(1.0, 1.0);
    t.components.push_back({1.0 / 3.0, Eigen::Vector2d(0.0, 0.0), 2.0});
    t.components.push_back({1.0 / 3.0, Eigen::Vector2d(M_PI, M_PI), 2.0});
    t.components.push_back({1.0 / 3.0, Eigen::Vector2d(4.8, 1.0), 2.0});
    return std::make_shared<TargetEnergy>("u2_substitute", m, t);
  }
  if (name == "u3") {
    // 1.4 sin(2πx1/3) sin(2πx2/3); circumference 6 per axis keeps the target
    // periodic and preserves its 8-mode structure
    auto m = ManifoldKernel::torus(Eigen::Vector2d(6.0, 6.0));
    TrigPolyTarget t;
    t.omegas = Eigen::Vector2d(M_PI / 3.0, M_PI / 3.0);
    t.terms.push_back({0.7, false, (Eigen::VectorXi(2) << 2, -2).finished(), 0.0});
    t.terms.push_back({-0.7, false, (Eigen::VectorXi(2) << 2, 2).finished(), 0.0});
    return std::make_shared<TargetEnergy>("u3", m, t);
  }
  if (name == "sphere_vmf4") {
    auto m = ManifoldKernel::sphere(2);
    SphereVmfTarget t;
    t.components.push_back({1.0, latlon_to_ambient(0.7, 1.5), 10.0});
    t.components.push_back({1.0, latlon_to_ambient(-1.0, 1.0), 10.0});
    t.components.push_back({1.0, latlon_to_ambient(0.6, 0.5), 10.0});
    t.components.push_back({1.0, latlon_to_ambient(-0.7, 4.0), 10.0});
    return std::make_shared<TargetEnergy>("sphere_vmf4", m, t);
  }
  if (name == "uniform_torus") {
    auto m = ManifoldKernel::torus(Eigen::Vector2d(2.0 * M_PI, 2.0 * M_PI));
    return std::make_shared<TargetEnergy>("uniform_torus", m, ConstantTarget{0.0});
  }
  if (name == "uniform_sphere") {
    auto m = ManifoldKernel::sphere(2);
    return std::make_shared<TargetEnergy>("uniform_sphere", m,
                                          ConstantTarget{0.0});
  }
  throw ConfigError("target", "unknown target name '" + name + "'");
}

double log_z_at_resolution(const TargetEnergy& target, int resolution) {
  const ManifoldKernel& m = target.manifold();
  if (m.dim() != 2)
    throw UnsupportedError("log_z_quadrature: only 2D manifolds supported");
  const int n = resolution;

  double max_neg_u = -std::numeric_limits<double>::infinity();
  std::vector<double> vals;
  std::vector<double> weights;
  vals.reserve(static_cast<std::size_t>(n) * n);
  weights.reserve(static_cast<std::size_t>(n) * n);

  if (m.is_torus()) {
    const auto& torus = std::get<Torus>(m.impl());
    const auto& L = torus.circumferences();
    double cell = (L[0] / n) * (L[1] / n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        AVec<double> x{};
        x[0] = (i + 0.5) * L[0] / n;
        x[1] = (j + 0.5) * L[1] / n;
        double v = -target.energy<double>(x);
        vals.push_back(v);
        weights.push_back(cell);
        max_neg_u = std::max(max_neg_u, v);
      }
  } else if (m.is_sphere()) {
    // midpoint rule in colatitude and longitude with sin-latitude weights
    for (int i = 0; i < n; ++i) {
      double theta = (i + 0.5) * M_PI / n;
      for (int j = 0; j < 2 * n; ++j) {
        double phi = (j + 0.5) * M_PI / n;
        AVec<double> x{};
        x[0] = std::sin(theta) * std::cos(phi);
        x[1] = std::sin(theta) * std::sin(phi);
        x[2] = std::cos(theta);
        double v = -target.energy<double>(x);
        vals.push_back(v);
        weights.push_back(std::sin(theta) * (M_PI / n) * (M_PI / n));
        max_neg_u = std::max(max_neg_u, v);
      }
    }
  } else {
    throw UnsupportedError("log_z_quadrature: unbounded manifold");
  }

  double acc = 0.0;
  for (std::size_t k = 0; k < vals.size(); ++k)
    acc += weights[k] * std::exp(vals[k] - max_neg_u);
  return max_neg_u + std::log(acc);
}

QuadratureResult log_z_quadrature(const TargetEnergy& target,
                                  int initial_resolution, int max_resolution) {
  int n = initial_resolution;
  double prev = log_z_at_resolution(target, n);
  while (2 * n <= max_resolution) {
    n *= 2;
    double cur = log_z_at_resolution(target, n);
    if (std::abs(cur - prev) < 1e-6) return {cur, n};
    prev = cur;
  }
  return {prev, n};
}

}  // namespace rpf
