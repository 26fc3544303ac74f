#include "rpf/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rpf {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ContractError(what);
}

}  // namespace

// ------------------------------- Torus -------------------------------------

void Torus::check_point(const Point& x) const {
  require(x.coords.size() == dim(), "Torus: point dimension mismatch");
}

Point Torus::exp_map(const Point& x, const TangentVector& v) const {
  check_point(x);
  require(v.components.size() == dim(), "Torus: tangent dimension mismatch");
  Point out{x.coords + v.components};
  return wrap(out);
}

TangentVector Torus::log_map(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  Eigen::VectorXd d(dim());
  for (int i = 0; i < dim(); ++i) {
    double L = circumferences_[i];
    double w = y.coords[i] - x.coords[i];
    w -= L * std::floor(w / L + 0.5);
    if (std::abs(w) >= L / 2.0 * (1.0 - 1e-12))
      throw CutLocusError("Torus::log_map: antipodal along an axis");
    d[i] = w;
  }
  return TangentVector{x, d};
}

double Torus::dist_sq(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  double acc = 0.0;
  for (int i = 0; i < dim(); ++i) {
    double L = circumferences_[i];
    double w = y.coords[i] - x.coords[i];
    w -= L * std::floor(w / L + 0.5);
    acc += w * w;
  }
  return acc;
}

TangentBasis Torus::tangent_basis(const Point& x) const {
  check_point(x);
  return TangentBasis{x, Eigen::MatrixXd::Identity(dim(), dim())};
}

std::vector<Point> Torus::sample_base(std::size_t n, std::uint64_t seed) const {
  auto eng = make_engine(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::VectorXd c(dim());
    for (int i = 0; i < dim(); ++i) c[i] = unit(eng) * circumferences_[i];
    out.push_back(wrap(Point{std::move(c)}));
  }
  return out;
}

double Torus::base_log_density(const Point& x) const {
  check_point(x);
  double acc = 0.0;
  for (int i = 0; i < dim(); ++i) acc += std::log(circumferences_[i]);
  return -acc;
}

// ------------------------------- Sphere ------------------------------------

void Sphere::check_point(const Point& x) const {
  require(x.coords.size() == ambient_dim(), "Sphere: point dimension mismatch");
  require(std::abs(x.coords.norm() - 1.0) <= 1e-9,
          "Sphere: point not on the unit sphere");
}

Point Sphere::exp_map(const Point& x, const TangentVector& v) const {
  check_point(x);
  require(v.components.size() == ambient_dim(),
          "Sphere: tangent dimension mismatch");
  double s = v.components.squaredNorm();
  double c = detail::cos_sqrt(s);
  double k = detail::sinc_sqrt(s);
  Eigen::VectorXd y = c * x.coords + k * v.components;
  y /= y.norm();
  return Point{std::move(y)};
}

TangentVector Sphere::log_map(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  double u = x.coords.dot(y.coords);
  if (u <= -1.0 + 1e-10)
    throw CutLocusError("Sphere::log_map: antipodal points");
  double s = (x.coords - y.coords).squaredNorm() * 0.25;
  double t = std::sqrt(4.0 * detail::asin_sqrt_sq(s));
  Eigen::VectorXd p = y.coords - u * x.coords;
  double np = p.norm();
  if (np < 1e-14) return TangentVector{x, Eigen::VectorXd::Zero(ambient_dim())};
  return TangentVector{x, (t / np) * p};
}

double Sphere::dist_sq(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  double s = (x.coords - y.coords).squaredNorm() * 0.25;
  return 4.0 * detail::asin_sqrt_sq(std::min(s, 1.0));
}

TangentBasis Sphere::tangent_basis(const Point& x) const {
  check_point(x);
  const int amb = ambient_dim();
  int least = 0;
  for (int a = 1; a < amb; ++a)
    if (std::abs(x.coords[a]) < std::abs(x.coords[least])) least = a;

  Eigen::MatrixXd rows(dim(), amb);
  int filled = 0;
  for (int step = 0; step < amb && filled < dim(); ++step) {
    int axis = (least + step) % amb;
    Eigen::VectorXd cand = Eigen::VectorXd::Unit(amb, axis);
    cand -= cand.dot(x.coords) * x.coords;
    for (int r = 0; r < filled; ++r)
      cand -= cand.dot(rows.row(r)) * rows.row(r).transpose();
    double nc = cand.norm();
    if (nc < 0.1) continue;  // nearly dependent axis, take the next one
    rows.row(filled++) = cand.transpose() / nc;
  }
  require(filled == dim(), "Sphere: basis construction failed");
  return TangentBasis{x, std::move(rows)};
}

std::vector<Point> Sphere::sample_base(std::size_t n, std::uint64_t seed) const {
  auto eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Point> out;
  out.reserve(n);
  while (out.size() < n) {
    Eigen::VectorXd g(ambient_dim());
    for (int a = 0; a < ambient_dim(); ++a) g[a] = gauss(eng);
    double ng = g.norm();
    if (ng < 1e-8) continue;
    out.push_back(Point{g / ng});
  }
  return out;
}

double Sphere::base_log_density(const Point& x) const {
  check_point(x);
  // surface area of S^n: 2 pi^{(n+1)/2} / Gamma((n+1)/2)
  double half = (n_ + 1) / 2.0;
  double log_area = std::log(2.0) + half * std::log(M_PI) - std::lgamma(half);
  return -log_area;
}

// ------------------------------ Euclidean ----------------------------------

void Euclidean::check_point(const Point& x) const {
  require(x.coords.size() == d_, "Euclidean: point dimension mismatch");
}

Point Euclidean::exp_map(const Point& x, const TangentVector& v) const {
  check_point(x);
  require(v.components.size() == d_, "Euclidean: tangent dimension mismatch");
  return Point{x.coords + v.components};
}

TangentVector Euclidean::log_map(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  return TangentVector{x, y.coords - x.coords};
}

double Euclidean::dist_sq(const Point& x, const Point& y) const {
  check_point(x);
  check_point(y);
  return (x.coords - y.coords).squaredNorm();
}

TangentBasis Euclidean::tangent_basis(const Point& x) const {
  check_point(x);
  return TangentBasis{x, Eigen::MatrixXd::Identity(d_, d_)};
}

std::vector<Point> Euclidean::sample_base(std::size_t n,
                                          std::uint64_t seed) const {
  auto eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::VectorXd g(d_);
    for (int i = 0; i < d_; ++i) g[i] = gauss(eng);
    out.push_back(Point{std::move(g)});
  }
  return out;
}

double Euclidean::base_log_density(const Point& x) const {
  check_point(x);
  return -0.5 * x.coords.squaredNorm() - 0.5 * d_ * std::log(2.0 * M_PI);
}

// ------------------------- distance derivatives ----------------------------

namespace {

// All derivatives of the chart-composed ½d² at (xi, upsilon) = (0, 0), taken
// with nested duals. Index conventions match DistanceDerivatives.
template <class M>
DistanceDerivatives dist_derivatives_impl(const M& m, const Point& x,
                                          const Point& y, int order) {
  const int dim = m.dim();
  TangentBasis ex = m.tangent_basis(x);
  TangentBasis ey = m.tangent_basis(y);

  DistanceDerivatives out;
  Eigen::VectorXd grad(dim);
  for (int i = 0; i < dim; ++i) {
    AVec<D1> xi = zero_avec<D1>(dim);
    AVec<D1> up = zero_avec<D1>(dim);
    up[i] = d1_seed(0.0, 1.0);
    grad[i] = d_slot(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
  }
  out.grad_y = TangentVector{y, ey.rows.transpose() * grad};

  if (order >= 2) {
    out.hess_yy = Eigen::MatrixXd(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        AVec<D2> xi = zero_avec<D2>(dim);
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] += d2_seed(0.0, 1.0, 0.0);
        up[j] += d2_seed(0.0, 0.0, 1.0);
        double h = d_slot01(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
        out.hess_yy(i, j) = h;
        out.hess_yy(j, i) = h;
      }
    out.cross_yx = Eigen::MatrixXd(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) {
        AVec<D2> xi = zero_avec<D2>(dim);
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] = d2_seed(0.0, 1.0, 0.0);
        xi[j] = d2_seed(0.0, 0.0, 1.0);
        out.cross_yx(i, j) =
            d_slot01(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
      }
    if (detail::g_distance_fault.load()) out.hess_yy(0, 0) += 1e-3;
  }

  if (order >= 3) {
    auto zero_mats = [dim] {
      return std::vector<Eigen::MatrixXd>(
          dim, Eigen::MatrixXd::Zero(dim, dim));
    };
    out.third_yyy = zero_mats();
    out.third_yyx = zero_mats();
    out.third_yxx = zero_mats();
    // yyy: symmetric in all indices
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          up[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          up[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t =
              d_slot012(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
          int idx[3] = {i, j, k};
          std::sort(idx, idx + 3);
          do {
            out.third_yyy[idx[2]](idx[0], idx[1]) = t;
            out.third_yyy[idx[2]](idx[1], idx[0]) = t;
          } while (std::next_permutation(idx, idx + 3));
        }
    // yyx: symmetric in (i, j)
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = 0; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          up[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          xi[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t =
              d_slot012(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
          out.third_yyx[k](i, j) = t;
          out.third_yyx[k](j, i) = t;
        }
    // yxx: symmetric in (j, k)
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
          AVec<D3> xi = zero_avec<D3>(dim);
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          xi[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          xi[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t =
              d_slot012(chart_half_dist_sq(m, x, ex.rows, xi, y, ey.rows, up));
          out.third_yxx[k](i, j) = t;
          out.third_yxx[j](i, k) = t;
        }
  }
  return out;
}

}  // namespace

DistanceDerivatives ManifoldKernel::dist_derivatives(const Point& x,
                                                     const Point& y,
                                                     int order) const {
  if (order < 1 || order > 3)
    throw ContractError("dist_derivatives: order must be 1, 2 or 3");
  // enforce the injectivity-radius precondition via log_map's checks
  (void)log_map(x, y);
  return visit(
      [&](const auto& m) { return dist_derivatives_impl(m, x, y, order); });
}

bool ManifoldKernel::operator==(const ManifoldKernel& other) const {
  if (impl_.index() != other.impl_.index()) return false;
  if (is_torus()) {
    const auto& a = std::get<Torus>(impl_);
    const auto& b = std::get<Torus>(other.impl_);
    return a.circumferences() == b.circumferences();
  }
  return dim() == other.dim();
}

}  // namespace rpf
