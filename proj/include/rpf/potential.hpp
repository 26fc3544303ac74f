#pragma once

// Parametric scalar potentials ψ_θ on a manifold together with the full
// derivative surface the implicit layer consumes: intrinsic input
// derivatives to third order (nested forward mode through the chart
// composition) and exact parameter gradients of ψ, wᵀ∇ψ and wᵀH_ψw'
// (reverse accumulation over the forward-augmented graph).

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "rpf/dual.hpp"
#include "rpf/errors.hpp"
#include "rpf/manifold.hpp"
#include "rpf/targets.hpp"

namespace rpf {

// ----------------------------- parameters ----------------------------------

struct ParamSegment {
  std::string name;
  int offset = 0;
  int size = 0;
};

struct ParamLayout {
  std::vector<ParamSegment> segments;
  int total = 0;

  const ParamSegment& find(const std::string& name) const {
    for (const auto& s : segments)
      if (s.name == name) return s;
    throw ContractError("ParamLayout: no segment named '" + name + "'");
  }
};

class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(Eigen::VectorXd values, std::shared_ptr<const ParamLayout> layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    if (layout_ && values_.size() != layout_->total)
      throw ContractError("ParamVector: layout/value size mismatch");
  }

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }
  int size() const { return static_cast<int>(values_.size()); }

  Eigen::VectorBlock<Eigen::VectorXd> segment(const std::string& name) {
    const auto& s = layout_->find(name);
    return values_.segment(s.offset, s.size);
  }
  Eigen::VectorBlock<const Eigen::VectorXd> segment(
      const std::string& name) const {
    const auto& s = layout_->find(name);
    return values_.segment(s.offset, s.size);
  }

 private:
  Eigen::VectorXd values_;
  std::shared_ptr<const ParamLayout> layout_;
};

// ----------------------------- network spec --------------------------------

enum class Architecture { mlp, symmetric_mlp, energy_scaled, energy_quadratic };

std::string architecture_name(Architecture a);
Architecture architecture_from_name(const std::string& name);

struct NetworkSpec {
  Architecture architecture = Architecture::mlp;
  std::vector<int> layer_sizes = {32, 32, 1};
  double output_scale = 0.0;  // <= 0: 20 on spheres, 1 elsewhere
  std::string target_name;    // energy_* forms only

  bool operator==(const NetworkSpec&) const = default;
};

struct DerivativeBundle {
  double value = 0.0;
  Eigen::VectorXd grad_x;
  Eigen::MatrixXd hess_x;
  std::vector<Eigen::MatrixXd> third_x;  // [k](i,j) = ∂³ψ/∂x_i∂x_j∂x_k
};

// ----------------------------- feature maps --------------------------------

struct TorusTrigFeatures {
  Eigen::VectorXd omegas;
  int count() const { return 2 * static_cast<int>(omegas.size()); }
  template <class S>
  void map(const AVec<S>& x, std::vector<S>& out) const {
    out.resize(count());
    for (int i = 0; i < omegas.size(); ++i) {
      S arg = omegas[i] * x[i];
      out[2 * i] = cos(arg);
      out[2 * i + 1] = sin(arg);
    }
  }
  // d feature / d coords, column-major into 'jac' (count x dim)
  void jacobian(const AVec<double>& x, Eigen::MatrixXd& jac) const {
    jac.setZero(count(), omegas.size());
    for (int i = 0; i < omegas.size(); ++i) {
      double arg = omegas[i] * x[i];
      jac(2 * i, i) = -omegas[i] * std::sin(arg);
      jac(2 * i + 1, i) = omegas[i] * std::cos(arg);
    }
  }
};

// invariant features of the diagonal-shift group: h = x1 - x2 as (cos, sin)
struct TorusDiffTrigFeatures {
  double omega = 1.0;
  int count() const { return 2; }
  template <class S>
  void map(const AVec<S>& x, std::vector<S>& out) const {
    out.resize(2);
    S arg = omega * (x[0] - x[1]);
    out[0] = cos(arg);
    out[1] = sin(arg);
  }
  void jacobian(const AVec<double>& x, Eigen::MatrixXd& jac) const {
    jac.setZero(2, 2);
    double arg = omega * (x[0] - x[1]);
    jac(0, 0) = -omega * std::sin(arg);
    jac(0, 1) = omega * std::sin(arg);
    jac(1, 0) = omega * std::cos(arg);
    jac(1, 1) = -omega * std::cos(arg);
  }
};

struct AmbientFeatures {
  int n = 3;
  int count() const { return n; }
  template <class S>
  void map(const AVec<S>& x, std::vector<S>& out) const {
    out.assign(x.begin(), x.begin() + n);
  }
  void jacobian(const AVec<double>&, Eigen::MatrixXd& jac) const {
    jac = Eigen::MatrixXd::Identity(n, n);
  }
};

using FeatureMap =
    std::variant<TorusTrigFeatures, TorusDiffTrigFeatures, AmbientFeatures>;

// ------------------------------- MLP form ----------------------------------

struct MlpPotential {
  FeatureMap features;
  std::vector<int> sizes;  // input count followed by layer sizes
  double output_scale = 1.0;

  int n_layers() const { return static_cast<int>(sizes.size()) - 1; }

  template <class S>
  S value(const ParamVector& theta, const AVec<S>& coords) const;

  // accumulate += weight * extract(∂ out / ∂ θ_k) for every parameter, where
  // out is the S-valued network output at the seeded coords
  template <class S, class Extract>
  void param_backprop(const ParamVector& theta, const AVec<S>& coords,
                      Extract&& extract, double weight,
                      Eigen::VectorXd& accumulate) const;

  // reverse-mode gradient of ψ with respect to the input coords (doubles)
  Eigen::VectorXd coord_gradient(const ParamVector& theta,
                                 const AVec<double>& coords) const;
};

// --------------------------- energy-based forms ----------------------------

// ψ = α·u(x)                        (energy_scaled,   1 parameter)
// ψ = α·u(x) + ∇u(x)ᵀ M ∇u(x)       (energy_quadratic, 1 + nb(nb+1)/2)
// Linear in the parameters, so parameter gradients of any derivative
// functional reduce to evaluating the functional on the basis functions.
struct EnergyPotential {
  std::shared_ptr<const TargetEnergy> target;
  bool quadratic = false;
  int grad_dim = 2;  // components of ∇u entering the quadratic form

  int n_params() const {
    return quadratic ? 1 + grad_dim * (grad_dim + 1) / 2 : 1;
  }

  // basis function k at generic scalars; k = 0 is u, the rest enumerate the
  // upper triangle of ∇u ∇uᵀ (off-diagonal entries carry the factor 2)
  template <class S>
  S basis_value(int k, const AVec<S>& coords) const {
    if (k == 0) return target->energy<S>(coords);
    AVec<S> g = target->energy_grad<S>(coords);
    int idx = 1;
    for (int i = 0; i < grad_dim; ++i)
      for (int j = i; j < grad_dim; ++j) {
        if (idx == k) {
          S q = g[i] * g[j];
          return i == j ? q : 2.0 * q;
        }
        ++idx;
      }
    throw ContractError("EnergyPotential: basis index out of range");
  }

  template <class S>
  S value(const ParamVector& theta, const AVec<S>& coords) const {
    S acc = theta.values()[0] * target->energy<S>(coords);
    if (!quadratic) return acc;
    AVec<S> g = target->energy_grad<S>(coords);
    int idx = 1;
    for (int i = 0; i < grad_dim; ++i)
      for (int j = i; j < grad_dim; ++j) {
        double m = theta.values()[idx++];
        acc += (i == j ? m : 2.0 * m) * g[i] * g[j];
      }
    return acc;
  }
};

// Fixed quadratic potential ½(x-μ)ᵀM(x-μ); parameter-free, used by the
// closed-form verification suites on the Euclidean manifold.
struct QuadraticPotential {
  Eigen::VectorXd mu;
  Eigen::MatrixXd M;

  template <class S>
  S value(const ParamVector&, const AVec<S>& coords) const {
    const int d = static_cast<int>(mu.size());
    S acc(0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        acc += 0.5 * M(i, j) * (coords[i] - mu[i]) * (coords[j] - mu[j]);
    return acc;
  }
};

// ------------------------------- potential ---------------------------------

class Potential {
 public:
  using Impl = std::variant<MlpPotential, EnergyPotential, QuadraticPotential>;

  Potential(Impl impl, ManifoldKernel manifold, NetworkSpec spec)
      : impl_(std::move(impl)),
        manifold_(std::move(manifold)),
        spec_(std::move(spec)) {}

  const ManifoldKernel& manifold() const { return manifold_; }
  const NetworkSpec& spec() const { return spec_; }
  const Impl& impl() const { return impl_; }

  template <class S>
  S value(const ParamVector& theta, const AVec<S>& coords) const {
    return std::visit(
        [&](const auto& p) { return p.template value<S>(theta, coords); },
        impl_);
  }

  // ψ in the geodesic normal chart centred at `center` with the given basis
  template <class S>
  S chart_value(const ParamVector& theta, const Point& center,
                const Eigen::MatrixXd& basis, const AVec<S>& upsilon) const {
    return manifold_.visit([&](const auto& m) {
      return value<S>(theta, m.chart_point(center, basis, upsilon));
    });
  }

  // intrinsic derivative bundle at x (tangent basis of the manifold at x)
  DerivativeBundle eval(const ParamVector& theta, const Point& x,
                        int order) const;

  // fast reverse-mode intrinsic gradient at x (equals eval(..., 1).grad_x)
  Eigen::VectorXd chart_gradient(const ParamVector& theta, const Point& x,
                                 const TangentBasis& basis) const;

  // ∂θ ψ(y)
  Eigen::VectorXd param_grad_value(const ParamVector& theta,
                                   const Point& y) const;
  // ∂θ [wᵀ∇ψ(y)] for tangent components w in the basis at y
  Eigen::VectorXd param_grad_dir_grad(const ParamVector& theta, const Point& y,
                                      const Eigen::VectorXd& w) const;
  // ∂θ [wᵀ H_ψ(y) w']
  Eigen::VectorXd param_grad_hess_quad(const ParamVector& theta, const Point& y,
                                       const Eigen::VectorXd& w,
                                       const Eigen::VectorXd& wp) const;
  // ∂θ [ c0·ψ(y) + wᵀ∇ψ(y) + Σ_ij C_ij (H_ψ)_ij ], accumulated into `out`
  // with the given overall weight; C may be empty (no Hessian term) and w
  // may be empty (no gradient term).
  void param_grad_bundle(const ParamVector& theta, const Point& y, double c0,
                         const Eigen::VectorXd& w, const Eigen::MatrixXd& C,
                         double weight, Eigen::VectorXd& out) const;

  int param_count() const;
  std::shared_ptr<const ParamLayout> make_layout() const;

 private:
  template <class S, class Extract>
  void backprop_chart(const ParamVector& theta, const Point& center,
                      const Eigen::MatrixXd& basis, const AVec<S>& upsilon,
                      Extract&& extract, double weight,
                      Eigen::VectorXd& out) const;

  Impl impl_;
  ManifoldKernel manifold_;
  NetworkSpec spec_;
};

// Builds the potential described by `spec` on `manifold`, with weights drawn
// from fan-in-scaled uniform noise. energy_* forms need the target.
std::pair<ParamVector, Potential> build_potential(
    const NetworkSpec& spec, const ManifoldKernel& manifold,
    std::shared_ptr<const TargetEnergy> target, std::uint64_t seed);

// Fixed quadratic test potential on the Euclidean manifold.
std::pair<ParamVector, Potential> make_quadratic_potential(
    const Eigen::VectorXd& mu, const Eigen::MatrixXd& M);

// ----------------------- template implementations --------------------------

template <class S>
S MlpPotential::value(const ParamVector& theta, const AVec<S>& coords) const {
  thread_local std::vector<S> feats, cur, next;
  std::visit([&](const auto& fm) { fm.template map<S>(coords, feats); },
             features);
  const double* p = theta.values().data();
  cur = feats;
  int off = 0;
  for (int l = 1; l < static_cast<int>(sizes.size()); ++l) {
    const int in = sizes[l - 1], out_n = sizes[l];
    next.assign(out_n, S(0.0));
    for (int o = 0; o < out_n; ++o) {
      S acc(p[off + out_n * in + o]);  // bias
      const double* w = p + off + o * in;
      for (int i = 0; i < in; ++i) acc += w[i] * cur[i];
      next[o] = (l + 1 < static_cast<int>(sizes.size())) ? softplus(acc) : acc;
    }
    std::swap(cur, next);
    off += out_n * in + out_n;
  }
  return cur[0] / output_scale;
}

template <class S, class Extract>
void MlpPotential::param_backprop(const ParamVector& theta,
                                  const AVec<S>& coords, Extract&& extract,
                                  double weight,
                                  Eigen::VectorXd& accumulate) const {
  const int L = n_layers();
  thread_local std::vector<std::vector<S>> acts;   // post-activation per layer
  thread_local std::vector<std::vector<S>> gates;  // softplus' at hidden layers
  acts.resize(L + 1);
  gates.resize(L);
  std::visit([&](const auto& fm) { fm.template map<S>(coords, acts[0]); },
             features);

  const double* p = theta.values().data();
  std::vector<int> offsets(L);
  int off = 0;
  for (int l = 0; l < L; ++l) {
    offsets[l] = off;
    const int in = sizes[l], out_n = sizes[l + 1];
    acts[l + 1].assign(out_n, S(0.0));
    gates[l].assign(out_n, S(0.0));
    for (int o = 0; o < out_n; ++o) {
      S acc(p[off + out_n * in + o]);
      const double* w = p + off + o * in;
      for (int i = 0; i < in; ++i) acc += w[i] * acts[l][i];
      if (l + 1 < L) {
        gates[l][o] = sigmoid(acc);
        acts[l + 1][o] = softplus(acc);
      } else {
        acts[l + 1][o] = acc;
      }
    }
    off += out_n * in + out_n;
  }

  // reverse sweep: delta[o] = ∂ out / ∂ (pre-activation of unit o)
  thread_local std::vector<S> delta, delta_prev;
  delta.assign(1, S(1.0 / output_scale));
  for (int l = L - 1; l >= 0; --l) {
    const int in = sizes[l], out_n = sizes[l + 1];
    double* acc_w = accumulate.data() + offsets[l];
    for (int o = 0; o < out_n; ++o) {
      for (int i = 0; i < in; ++i)
        acc_w[o * in + i] += weight * extract(delta[o] * acts[l][i]);
      acc_w[out_n * in + o] += weight * extract(delta[o]);
    }
    if (l == 0) break;
    delta_prev.assign(in, S(0.0));
    const double* w = p + offsets[l];
    for (int o = 0; o < out_n; ++o)
      for (int i = 0; i < in; ++i) delta_prev[i] += w[o * in + i] * delta[o];
    for (int i = 0; i < in; ++i) delta_prev[i] *= gates[l - 1][i];
    std::swap(delta, delta_prev);
  }
}

}  // namespace rpf
