#pragma once

// Differential geometry of the supported manifolds: flat tori with
// configurable circumferences, unit spheres stored in ambient coordinates,
// and Euclidean space (used as the closed-form test bed).
//
// Every local computation is available in two forms: a plain double API
// (exp/log/dist/dist_derivatives) and scalar-generic chart functions that
// accept nested dual numbers, so that callers can differentiate through
// geodesic normal coordinates to any order they need.

#include <Eigen/Dense>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "rpf/dual.hpp"
#include "rpf/errors.hpp"
#include "rpf/rng.hpp"

namespace rpf {

constexpr int kMaxAmbient = 4;

template <class S>
using AVec = std::array<S, kMaxAmbient>;

struct Point {
  Eigen::VectorXd coords;
};

struct TangentVector {
  Point base;
  Eigen::VectorXd components;  // same representation as Point coords
};

struct TangentBasis {
  Point base;
  Eigen::MatrixXd rows;  // dim x ambient, orthonormal rows spanning T_x M
};

// Derivatives of ½ d(x,y)² expressed in the tangent bases at y (row/col i)
// and x where applicable. Third-order tensors are indexed as
// third[k](i, j) = ∂³ (½d²) / ∂y_i ∂y_j ∂y_k (yyy), ∂y_i ∂y_j ∂x_k (yyx)
// and ∂y_i ∂x_j ∂x_k (yxx).
struct DistanceDerivatives {
  TangentVector grad_y;
  Eigen::MatrixXd hess_yy;
  Eigen::MatrixXd cross_yx;
  std::vector<Eigen::MatrixXd> third_yyy;
  std::vector<Eigen::MatrixXd> third_yyx;
  std::vector<Eigen::MatrixXd> third_yxx;
};

// t·cot(t) on [0, π); the non-radial eigenvalue of the Hessian of ½d² on the
// unit sphere at geodesic distance t.
inline double tcg(double t) {
  if (!(t >= 0.0) || t >= M_PI)
    throw ContractError("tcg: argument outside [0, pi)");
  if (t < 1e-4) {
    double t2 = t * t;
    return 1.0 - t2 / 3.0 - t2 * t2 / 45.0;
  }
  return t * std::cos(t) / std::sin(t);
}

namespace detail {

inline std::atomic<bool> g_distance_fault{false};

// cos(√s), sin(√s)/√s and asin(√s)² as smooth functions of s = t²; the
// series branch keeps them differentiable through s = 0, which the inner
// solver hits every time it starts at y = x.
constexpr double kSeriesThreshold = 1e-5;

template <class S>
S cos_sqrt(const S& s) {
  if (val(s) < kSeriesThreshold) {
    return 1.0 + s * (-1.0 / 2.0 + s * (1.0 / 24.0 + s * (-1.0 / 720.0 + s * (1.0 / 40320.0))));
  }
  return cos(sqrt(s));
}

template <class S>
S sinc_sqrt(const S& s) {
  if (val(s) < kSeriesThreshold) {
    return 1.0 + s * (-1.0 / 6.0 + s * (1.0 / 120.0 + s * (-1.0 / 5040.0 + s * (1.0 / 362880.0))));
  }
  S t = sqrt(s);
  return sin(t) / t;
}

template <class S>
S asin_sqrt_sq(const S& s) {
  if (val(s) < kSeriesThreshold) {
    return s * (1.0 + s * (1.0 / 3.0 + s * (8.0 / 45.0 + s * (4.0 / 35.0 + s * (128.0 / 1575.0)))));
  }
  S t = asin(sqrt(s));
  return t * t;
}

// wraps the value part of w into [-period/2, period/2); tangent parts pass
// through untouched (the shift is locally constant)
template <class S>
S wrap_signed(const S& w, double period) {
  double k = std::floor(val(w) / period + 0.5);
  if (k == 0.0) return w;
  return w - k * period;
}

}  // namespace detail

// Enables a deliberate error in dist_derivatives; used by the verification
// command to prove the finite-difference oracles can fail.
inline void set_distance_fault_injection(bool on) {
  detail::g_distance_fault.store(on);
}

// ---------------------------------------------------------------------------
// Flat torus with per-axis circumferences L_i; points are axis coordinates
// in [0, L_i).
// ---------------------------------------------------------------------------
class Torus {
 public:
  explicit Torus(Eigen::VectorXd circumferences)
      : circumferences_(std::move(circumferences)) {
    for (int i = 0; i < circumferences_.size(); ++i)
      if (!(circumferences_[i] > 0.0))
        throw ContractError("Torus: circumferences must be positive");
  }

  int dim() const { return static_cast<int>(circumferences_.size()); }
  int ambient_dim() const { return dim(); }
  const Eigen::VectorXd& circumferences() const { return circumferences_; }
  double injectivity_radius() const { return circumferences_.minCoeff() / 2.0; }

  Point wrap(const Point& x) const {
    Point out = x;
    for (int i = 0; i < dim(); ++i) {
      double L = circumferences_[i];
      out.coords[i] -= L * std::floor(out.coords[i] / L);
    }
    return out;
  }

  template <class S>
  AVec<S> chart_point(const Point& center, const Eigen::MatrixXd& /*basis*/,
                      const AVec<S>& xi) const {
    AVec<S> out{};
    for (int i = 0; i < dim(); ++i) out[i] = xi[i] + center.coords[i];
    return out;
  }

  template <class S>
  S half_dist_sq(const AVec<S>& x, const AVec<S>& y) const {
    S acc(0.0);
    for (int i = 0; i < dim(); ++i) {
      S w = detail::wrap_signed(x[i] - y[i], circumferences_[i]);
      acc += 0.5 * w * w;
    }
    return acc;
  }

  Point exp_map(const Point& x, const TangentVector& v) const;
  TangentVector log_map(const Point& x, const Point& y) const;
  double dist_sq(const Point& x, const Point& y) const;
  TangentBasis tangent_basis(const Point& x) const;
  std::vector<Point> sample_base(std::size_t n, std::uint64_t seed) const;
  double base_log_density(const Point& x) const;
  void check_point(const Point& x) const;

 private:
  Eigen::VectorXd circumferences_;
};

// ---------------------------------------------------------------------------
// Unit sphere S^n embedded in R^{n+1}.
// ---------------------------------------------------------------------------
class Sphere {
 public:
  explicit Sphere(int intrinsic_dim) : n_(intrinsic_dim) {
    if (n_ < 1 || n_ + 1 > kMaxAmbient)
      throw ContractError("Sphere: unsupported dimension");
  }

  int dim() const { return n_; }
  int ambient_dim() const { return n_ + 1; }
  double injectivity_radius() const { return M_PI; }

  template <class S>
  AVec<S> chart_point(const Point& center, const Eigen::MatrixXd& basis,
                      const AVec<S>& xi) const {
    // exp_center(E^T xi) via norm-squared series forms, smooth at xi = 0
    AVec<S> v{};
    for (int a = 0; a < ambient_dim(); ++a) {
      S acc(0.0);
      for (int i = 0; i < n_; ++i) acc += xi[i] * basis(i, a);
      v[a] = acc;
    }
    S s(0.0);
    for (int a = 0; a < ambient_dim(); ++a) s += v[a] * v[a];
    S c = detail::cos_sqrt(s);
    S k = detail::sinc_sqrt(s);
    AVec<S> out{};
    for (int a = 0; a < ambient_dim(); ++a)
      out[a] = c * center.coords[a] + k * v[a];
    return out;
  }

  template <class S>
  S half_dist_sq(const AVec<S>& x, const AVec<S>& y) const {
    S c2(0.0);
    for (int a = 0; a < ambient_dim(); ++a) {
      S d = x[a] - y[a];
      c2 += d * d;
    }
    return 2.0 * detail::asin_sqrt_sq(c2 * 0.25);
  }

  Point exp_map(const Point& x, const TangentVector& v) const;
  TangentVector log_map(const Point& x, const Point& y) const;
  double dist_sq(const Point& x, const Point& y) const;
  TangentBasis tangent_basis(const Point& x) const;
  std::vector<Point> sample_base(std::size_t n, std::uint64_t seed) const;
  double base_log_density(const Point& x) const;
  void check_point(const Point& x) const;

 private:
  int n_;
};

// ---------------------------------------------------------------------------
// Euclidean space R^d; the base measure is the standard Gaussian.
// ---------------------------------------------------------------------------
class Euclidean {
 public:
  explicit Euclidean(int d) : d_(d) {
    if (d_ < 1 || d_ > kMaxAmbient)
      throw ContractError("Euclidean: unsupported dimension");
  }

  int dim() const { return d_; }
  int ambient_dim() const { return d_; }
  double injectivity_radius() const {
    return std::numeric_limits<double>::infinity();
  }

  template <class S>
  AVec<S> chart_point(const Point& center, const Eigen::MatrixXd& /*basis*/,
                      const AVec<S>& xi) const {
    AVec<S> out{};
    for (int i = 0; i < d_; ++i) out[i] = xi[i] + center.coords[i];
    return out;
  }

  template <class S>
  S half_dist_sq(const AVec<S>& x, const AVec<S>& y) const {
    S acc(0.0);
    for (int i = 0; i < d_; ++i) {
      S w = x[i] - y[i];
      acc += 0.5 * w * w;
    }
    return acc;
  }

  Point exp_map(const Point& x, const TangentVector& v) const;
  TangentVector log_map(const Point& x, const Point& y) const;
  double dist_sq(const Point& x, const Point& y) const;
  TangentBasis tangent_basis(const Point& x) const;
  std::vector<Point> sample_base(std::size_t n, std::uint64_t seed) const;
  double base_log_density(const Point& x) const;
  void check_point(const Point& x) const;

 private:
  int d_;
};

// ---------------------------------------------------------------------------
// Type-erased kernel. Immutable after construction; all operations are pure.
// ---------------------------------------------------------------------------
class ManifoldKernel {
 public:
  using Impl = std::variant<Torus, Sphere, Euclidean>;

  explicit ManifoldKernel(Impl impl) : impl_(std::move(impl)) {}

  static ManifoldKernel torus(Eigen::VectorXd circumferences) {
    return ManifoldKernel(Torus(std::move(circumferences)));
  }
  static ManifoldKernel sphere(int intrinsic_dim) {
    return ManifoldKernel(Sphere(intrinsic_dim));
  }
  static ManifoldKernel euclidean(int d) {
    return ManifoldKernel(Euclidean(d));
  }

  const Impl& impl() const { return impl_; }

  template <class Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), impl_);
  }

  int dim() const {
    return visit([](const auto& m) { return m.dim(); });
  }
  int ambient_dim() const {
    return visit([](const auto& m) { return m.ambient_dim(); });
  }
  double injectivity_radius() const {
    return visit([](const auto& m) { return m.injectivity_radius(); });
  }
  Point exp_map(const Point& x, const TangentVector& v) const {
    return visit([&](const auto& m) { return m.exp_map(x, v); });
  }
  TangentVector log_map(const Point& x, const Point& y) const {
    return visit([&](const auto& m) { return m.log_map(x, y); });
  }
  double dist_sq(const Point& x, const Point& y) const {
    return visit([&](const auto& m) { return m.dist_sq(x, y); });
  }
  TangentBasis tangent_basis(const Point& x) const {
    return visit([&](const auto& m) { return m.tangent_basis(x); });
  }
  std::vector<Point> sample_base(std::size_t n, std::uint64_t seed) const {
    return visit([&](const auto& m) { return m.sample_base(n, seed); });
  }
  double base_log_density(const Point& x) const {
    return visit([&](const auto& m) { return m.base_log_density(x); });
  }
  DistanceDerivatives dist_derivatives(const Point& x, const Point& y,
                                       int order) const;

  bool is_torus() const { return std::holds_alternative<Torus>(impl_); }
  bool is_sphere() const { return std::holds_alternative<Sphere>(impl_); }
  bool is_euclidean() const { return std::holds_alternative<Euclidean>(impl_); }

  std::string kind() const {
    if (is_torus()) return "torus";
    if (is_sphere()) return "sphere";
    return "euclidean";
  }

  bool operator==(const ManifoldKernel& other) const;

 private:
  Impl impl_;
};

// Generic chart-composed ½d²: g(xi, upsilon) with xi in the chart at
// (x_center, x_basis) and upsilon in the chart at (y_center, y_basis).
template <class M, class S>
S chart_half_dist_sq(const M& m, const Point& xc, const Eigen::MatrixXd& xb,
                     const AVec<S>& xi, const Point& yc,
                     const Eigen::MatrixXd& yb, const AVec<S>& upsilon) {
  return m.half_dist_sq(m.chart_point(xc, xb, xi),
                        m.chart_point(yc, yb, upsilon));
}

template <class S>
AVec<S> zero_avec(int n) {
  (void)n;
  AVec<S> out{};
  return out;
}

}  // namespace rpf
