#pragma once

// Target energy zoo: unnormalized energies u(x) with p(x) ∝ e^{-u(x)}.
// Energies and their gradients are scalar-generic so potentials built from
// the target (α·u and the quadratic-gradient form) can be differentiated to
// any order with the same code.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rpf/dual.hpp"
#include "rpf/errors.hpp"
#include "rpf/manifold.hpp"

namespace rpf {

// u(x) = Σ_t coef · trig(Σ_i k_i ω_i x_i + phase), ω_i = 2π / L_i
struct TrigPolyTarget {
  struct Term {
    double coef = 0.0;
    bool use_sin = true;
    Eigen::VectorXi freqs;  // integer multiples of the per-axis base frequency
    double phase = 0.0;
  };
  std::vector<Term> terms;
  Eigen::VectorXd omegas;

  template <class S>
  S energy(const AVec<S>& x) const {
    S acc(0.0);
    for (const auto& t : terms) {
      S arg(t.phase);
      for (int i = 0; i < omegas.size(); ++i)
        if (t.freqs[i] != 0) arg += (t.freqs[i] * omegas[i]) * x[i];
      acc += t.use_sin ? t.coef * sin(arg) : t.coef * cos(arg);
    }
    return acc;
  }

  template <class S>
  AVec<S> energy_grad(const AVec<S>& x) const {
    AVec<S> g{};
    for (const auto& t : terms) {
      S arg(t.phase);
      for (int i = 0; i < omegas.size(); ++i)
        if (t.freqs[i] != 0) arg += (t.freqs[i] * omegas[i]) * x[i];
      S d = t.use_sin ? t.coef * cos(arg) : -t.coef * sin(arg);
      for (int i = 0; i < omegas.size(); ++i)
        if (t.freqs[i] != 0) g[i] += (t.freqs[i] * omegas[i]) * d;
    }
    return g;
  }
};

// u(x) = -log Σ_k w_k exp(Σ_i κ_k cos(ω_i (x_i - m_{k,i})))
struct TorusVonMisesTarget {
  struct Component {
    double weight = 1.0;
    Eigen::VectorXd mean;
    double kappa = 1.0;
  };
  std::vector<Component> components;
  Eigen::VectorXd omegas;

  template <class S>
  S energy(const AVec<S>& x) const {
    const int n = static_cast<int>(components.size());
    std::vector<S> e(n);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      S acc(std::log(components[k].weight));
      for (int i = 0; i < omegas.size(); ++i)
        acc += components[k].kappa * cos(omegas[i] * (x[i] - components[k].mean[i]));
      e[k] = acc;
      m = std::max(m, val(acc));
    }
    S sum(0.0);
    for (int k = 0; k < n; ++k) sum += exp(e[k] - m);
    return -(log(sum) + m);
  }

  template <class S>
  AVec<S> energy_grad(const AVec<S>& x) const {
    const int n = static_cast<int>(components.size());
    std::vector<S> e(n);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      S acc(std::log(components[k].weight));
      for (int i = 0; i < omegas.size(); ++i)
        acc += components[k].kappa * cos(omegas[i] * (x[i] - components[k].mean[i]));
      e[k] = acc;
      m = std::max(m, val(acc));
    }
    S sum(0.0);
    for (int k = 0; k < n; ++k) {
      e[k] = exp(e[k] - m);
      sum += e[k];
    }
    AVec<S> g{};
    for (int k = 0; k < n; ++k) {
      S p = e[k] / sum;
      for (int i = 0; i < omegas.size(); ++i)
        g[i] += p * components[k].kappa * omegas[i] *
                sin(omegas[i] * (x[i] - components[k].mean[i]));
    }
    return g;
  }
};

// u(x) = -log Σ_k w_k exp(κ_k x·m_k) on the embedded sphere
struct SphereVmfTarget {
  struct Component {
    double weight = 1.0;
    Eigen::Vector3d mean;
    double kappa = 1.0;
  };
  std::vector<Component> components;

  template <class S>
  S energy(const AVec<S>& x) const {
    const int n = static_cast<int>(components.size());
    std::vector<S> e(n);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      S acc(std::log(components[k].weight));
      for (int a = 0; a < 3; ++a)
        acc += (components[k].kappa * components[k].mean[a]) * x[a];
      e[k] = acc;
      m = std::max(m, val(acc));
    }
    S sum(0.0);
    for (int k = 0; k < n; ++k) sum += exp(e[k] - m);
    return -(log(sum) + m);
  }

  template <class S>
  AVec<S> energy_grad(const AVec<S>& x) const {
    const int n = static_cast<int>(components.size());
    std::vector<S> e(n);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      S acc(std::log(components[k].weight));
      for (int a = 0; a < 3; ++a)
        acc += (components[k].kappa * components[k].mean[a]) * x[a];
      e[k] = acc;
      m = std::max(m, val(acc));
    }
    S sum(0.0);
    for (int k = 0; k < n; ++k) {
      e[k] = exp(e[k] - m);
      sum += e[k];
    }
    AVec<S> g{};
    for (int k = 0; k < n; ++k) {
      S p = e[k] / sum;
      for (int a = 0; a < 3; ++a)
        g[a] += p * (-components[k].kappa * components[k].mean[a]);
    }
    return g;
  }
};

struct ConstantTarget {
  double value = 0.0;
  template <class S>
  S energy(const AVec<S>&) const {
    return S(value);
  }
  template <class S>
  AVec<S> energy_grad(const AVec<S>&) const {
    return AVec<S>{};
  }
};

class TargetEnergy {
 public:
  using Impl =
      std::variant<TrigPolyTarget, TorusVonMisesTarget, SphereVmfTarget,
                   ConstantTarget>;

  TargetEnergy(std::string name, ManifoldKernel manifold, Impl impl,
               std::string symmetry = "")
      : name_(std::move(name)),
        manifold_(std::move(manifold)),
        impl_(std::move(impl)),
        symmetry_(std::move(symmetry)) {}

  const std::string& name() const { return name_; }
  const ManifoldKernel& manifold() const { return manifold_; }
  const Impl& impl() const { return impl_; }
  // e.g. "diagonal_shift" for u1; empty when no symmetry is declared
  const std::string& symmetry() const { return symmetry_; }

  template <class S>
  S energy(const AVec<S>& coords) const {
    return std::visit([&](const auto& t) { return t.template energy<S>(coords); },
                      impl_);
  }
  template <class S>
  AVec<S> energy_grad(const AVec<S>& coords) const {
    return std::visit(
        [&](const auto& t) { return t.template energy_grad<S>(coords); }, impl_);
  }

  double energy_at(const Point& x) const;
  Eigen::VectorXd gradient_at(const Point& x) const;  // ambient/chart coords

 private:
  std::string name_;
  ManifoldKernel manifold_;
  Impl impl_;
  std::string symmetry_;
};

// Spherical-coordinate convention used for vMF means given as (lat, lon).
inline Eigen::Vector3d latlon_to_ambient(double lat, double lon) {
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
          std::sin(lat)};
}

// Built-in zoo: "u1", "u2_substitute", "u3", "sphere_vmf4", "uniform_torus",
// "uniform_sphere". Throws ConfigError for unknown names.
std::shared_ptr<const TargetEnergy> make_target(const std::string& name);

struct QuadratureResult {
  double log_z = 0.0;
  int resolution = 0;
};

// log Z = log ∫ e^{-u} dμ on the target's 2D manifold; doubles the grid
// resolution until the estimate moves by less than 1e-6.
QuadratureResult log_z_quadrature(const TargetEnergy& target,
                                  int initial_resolution = 64,
                                  int max_resolution = 4096);

// Single fixed-resolution pass (exposed for convergence tests).
double log_z_at_resolution(const TargetEnergy& target, int resolution);

}  // namespace rpf
