#include <doctest.h>

#include <cmath>

#include "rpf/manifold.hpp"
#include "support/oracles.hpp"

using namespace rpf;

TEST_SUITE_BEGIN("manifold");

namespace {

Point pt(std::initializer_list<double> v) {
  Eigen::VectorXd c(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) c[i++] = x;
  return Point{c};
}

TangentVector tv(const Point& base, std::initializer_list<double> v) {
  Eigen::VectorXd c(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) c[i++] = x;
  return TangentVector{base, c};
}

}  // namespace

TEST_CASE("torus exp wraps modulo the circumference") {
  auto m = ManifoldKernel::torus(Eigen::VectorXd::Constant(1, 2 * M_PI));
  Point x = pt({M_PI});
  Point y = m.exp_map(x, tv(x, {3 * M_PI / 2}));
  CHECK(y.coords[0] == doctest::Approx(M_PI / 2).epsilon(1e-12));
  Point id = m.exp_map(x, tv(x, {0.0}));
  CHECK(id.coords[0] == doctest::Approx(M_PI));
}

TEST_CASE("sphere exp quarter great circle") {
  auto m = ManifoldKernel::sphere(2);
  Point x = pt({1, 0, 0});
  Point y = m.exp_map(x, tv(x, {0, M_PI / 2, 0}));
  CHECK(y.coords[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y.coords[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.coords[2] == doctest::Approx(0.0).epsilon(1e-12));
  Point id = m.exp_map(x, tv(x, {0, 0, 0}));
  CHECK((id.coords - x.coords).norm() == doctest::Approx(0.0));
}

TEST_CASE("log map inverts exp and hits stated examples") {
  auto s = ManifoldKernel::sphere(2);
  TangentVector l = s.log_map(pt({1, 0, 0}), pt({0, 1, 0}));
  CHECK(l.components[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(l.components[1] == doctest::Approx(M_PI / 2).epsilon(1e-12));

  auto t = ManifoldKernel::torus(Eigen::VectorXd::Constant(1, 2 * M_PI));
  TangentVector lt = t.log_map(pt({0.0}), pt({3 * M_PI / 2}));
  CHECK(lt.components[0] == doctest::Approx(-M_PI / 2).epsilon(1e-12));

  TangentVector l0 = s.log_map(pt({0, 0, 1}), pt({0, 0, 1}));
  CHECK(l0.components.norm() == doctest::Approx(0.0));
}

TEST_CASE("log map raises a cut-locus error at antipodes") {
  auto s = ManifoldKernel::sphere(2);
  CHECK_THROWS_AS(s.log_map(pt({1, 0, 0}), pt({-1, 0, 0})), CutLocusError);
  auto t = ManifoldKernel::torus(Eigen::VectorXd::Constant(1, 2.0));
  CHECK_THROWS_AS(t.log_map(pt({0.0}), pt({1.0})), CutLocusError);
}

TEST_CASE("dist_sq matches stated examples") {
  auto s = ManifoldKernel::sphere(2);
  CHECK(s.dist_sq(pt({1, 0, 0}), pt({0, 1, 0})) ==
        doctest::Approx(M_PI * M_PI / 4).epsilon(1e-12));
  CHECK(s.dist_sq(pt({1, 0, 0}), pt({1, 0, 0})) == doctest::Approx(0.0));

  auto t = ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI));
  CHECK(t.dist_sq(pt({0, 0}), pt({M_PI, 3 * M_PI / 2})) ==
        doctest::Approx(M_PI * M_PI + M_PI * M_PI / 4).epsilon(1e-12));
}

TEST_CASE("exp/log round trip within the injectivity radius") {
  for (int which = 0; which < 3; ++which) {
    ManifoldKernel m = which == 0 ? ManifoldKernel::torus(Eigen::Vector2d(2.0, 3.0))
                      : which == 1 ? ManifoldKernel::sphere(2)
                                   : ManifoldKernel::euclidean(2);
    double radius = which == 2 ? 3.0 : 0.9 * m.injectivity_radius();
    auto eng = make_engine(7 + which);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto xs = m.sample_base(100, 1000 + which);
    for (const auto& x : xs) {
      TangentBasis basis = m.tangent_basis(x);
      Eigen::VectorXd dir(m.dim());
      for (int i = 0; i < m.dim(); ++i) dir[i] = gauss(eng);
      dir.normalize();
      double len = radius * unit(eng);
      Eigen::VectorXd v = basis.rows.transpose() * (len * dir);
      Point y = m.exp_map(x, {x, v});
      TangentVector back = m.log_map(x, y);
      CHECK((back.components - v).norm() <= 1e-8);
      CHECK(std::sqrt(m.dist_sq(x, y)) == doctest::Approx(len).epsilon(1e-8));
    }
  }
}

TEST_CASE("distance derivatives match finite differences") {
  for (int which = 0; which < 2; ++which) {
    ManifoldKernel m = which == 0
                           ? ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 4.0))
                           : ManifoldKernel::sphere(2);
    auto xs = m.sample_base(100, 51 + which);
    auto ys = m.sample_base(100, 97 + which);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Point& x = xs[k];
      const Point& y = ys[k];
      if (std::sqrt(m.dist_sq(x, y)) > 0.95 * m.injectivity_radius()) continue;
      DistanceDerivatives dd = m.dist_derivatives(x, y, 2);
      TangentBasis ey = m.tangent_basis(y);
      Eigen::VectorXd fd = testing::fd_manifold_grad(
          m, y, [&](const Point& p) { return 0.5 * m.dist_sq(x, p); });
      Eigen::VectorXd an = ey.rows * dd.grad_y.components;
      CHECK((fd - an).norm() <= 1e-5 * std::max(1.0, an.norm()));
      CHECK((dd.hess_yy - dd.hess_yy.transpose()).norm() <= 1e-10);
    }
  }
}

TEST_CASE("identity structure at y = x") {
  for (int which = 0; which < 2; ++which) {
    ManifoldKernel m = which == 0
                           ? ManifoldKernel::torus(Eigen::Vector2d(2.0, 2.0))
                           : ManifoldKernel::sphere(2);
    auto xs = m.sample_base(10, 3 + which);
    for (const auto& x : xs) {
      DistanceDerivatives dd = m.dist_derivatives(x, x, 2);
      CHECK((dd.hess_yy - Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-8);
      CHECK((dd.cross_yx + Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-8);
    }
  }
}

TEST_CASE("torus distance Hessian is the identity everywhere") {
  auto m = ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI));
  auto xs = m.sample_base(20, 5);
  auto ys = m.sample_base(20, 6);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (std::sqrt(m.dist_sq(xs[k], ys[k])) > 0.95 * m.injectivity_radius())
      continue;
    DistanceDerivatives dd = m.dist_derivatives(xs[k], ys[k], 3);
    CHECK((dd.hess_yy - Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-10);
    CHECK((dd.cross_yx + Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-10);
    for (int i = 0; i < 2; ++i) {
      CHECK(dd.third_yyy[i].norm() <= 1e-10);
      CHECK(dd.third_yyx[i].norm() <= 1e-10);
      CHECK(dd.third_yxx[i].norm() <= 1e-10);
    }
  }
}

TEST_CASE("sphere Hessian spectrum is {1, tcg(t)}") {
  auto m = ManifoldKernel::sphere(2);
  Point x = pt({1, 0, 0});
  for (double t : {0.1, 0.5, 1.0, 1.5}) {
    Point y = pt({std::cos(t), std::sin(t), 0.0});
    DistanceDerivatives dd = m.dist_derivatives(x, y, 2);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dd.hess_yy);
    Eigen::VectorXd ev = es.eigenvalues();
    double lo = std::min(ev[0], ev[1]);
    double hi = std::max(ev[0], ev[1]);
    CHECK(hi == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(lo == doctest::Approx(tcg(t)).epsilon(1e-8));
  }
  // t = π/2 gives eigenvalues {1, 0}
  Point y = pt({0, 1, 0});
  DistanceDerivatives dd = m.dist_derivatives(x, y, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dd.hess_yy);
  CHECK(es.eigenvalues().minCoeff() == doctest::Approx(0.0).epsilon(1e-10));
}

namespace {

// triple central difference of a scalar chart function; independent of the
// dual-number machinery (only exp_map and the function itself)
double fd3(const std::function<double(const Eigen::Vector2d&)>& f, int a, int b,
           int c, double eps) {
  auto d1 = [&](const Eigen::Vector2d& p, int dir,
                const std::function<double(const Eigen::Vector2d&)>& g) {
    Eigen::Vector2d ep = Eigen::Vector2d::Zero();
    ep[dir] = eps;
    return (g(p + ep) - g(p - ep)) / (2 * eps);
  };
  auto da = [&](const Eigen::Vector2d& p) { return d1(p, a, f); };
  auto dab = [&](const Eigen::Vector2d& p) {
    return d1(p, b, [&](const Eigen::Vector2d& q) { return da(q); });
  };
  return d1(Eigen::Vector2d::Zero(), c, dab);
}

}  // namespace

TEST_CASE("sphere third-order tensors match a triple finite-difference oracle") {
  auto m = ManifoldKernel::sphere(2);
  auto xs = m.sample_base(5, 77);
  auto ys = m.sample_base(5, 78);
  const double eps = 2e-3;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Point &x = xs[k], &y = ys[k];
    if (std::sqrt(m.dist_sq(x, y)) > 2.5) continue;
    DistanceDerivatives dd = m.dist_derivatives(x, y, 3);
    TangentBasis ex = m.tangent_basis(x);
    TangentBasis ey = m.tangent_basis(y);
    auto half_d2_yy = [&](const Eigen::Vector2d& up) {
      Point yp = m.exp_map(y, {y, ey.rows.transpose() * up});
      return 0.5 * m.dist_sq(x, yp);
    };
    for (int a = 0; a < 2; ++a)
      for (int b = a; b < 2; ++b)
        for (int c = b; c < 2; ++c)
          CHECK(fd3(half_d2_yy, a, b, c, eps) ==
                doctest::Approx(dd.third_yyy[c](a, b)).epsilon(5e-4).scale(1.0));
    // mixed tensor: one derivative in the x chart
    for (int c = 0; c < 2; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = a; b < 2; ++b) {
          Eigen::Vector2d ec = Eigen::Vector2d::Zero();
          ec[c] = eps;
          auto at_xshift = [&](double sign) {
            Point xs2 = m.exp_map(x, {x, ex.rows.transpose() * (sign * ec)});
            auto g = [&](const Eigen::Vector2d& up) {
              Point yp = m.exp_map(y, {y, ey.rows.transpose() * up});
              return 0.5 * m.dist_sq(xs2, yp);
            };
            // second derivative in the y chart by central differences
            Eigen::Vector2d ea = Eigen::Vector2d::Zero(), eb = Eigen::Vector2d::Zero();
            ea[a] = eps;
            eb[b] = eps;
            return (g(ea + eb) - g(ea - eb) - g(eb - ea) + g(-ea - eb)) /
                   (4 * eps * eps);
          };
          double fd = (at_xshift(1.0) - at_xshift(-1.0)) / (2 * eps);
          CHECK(fd == doctest::Approx(dd.third_yyx[c](a, b)).epsilon(5e-4).scale(1.0));
        }
  }
}

TEST_CASE("tcg values") {
  CHECK(tcg(0.0) == 1.0);
  CHECK(tcg(M_PI / 2) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(std::abs(tcg(0.24) - 0.981) <= 5e-4);
  CHECK(tcg(1e-9) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(tcg(-0.1), ContractError);
  CHECK_THROWS_AS(tcg(M_PI), ContractError);
}

TEST_CASE("tangent bases are orthonormal and tangent") {
  auto t = ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI));
  TangentBasis tb = t.tangent_basis(pt({1.0, 2.0}));
  CHECK((tb.rows - Eigen::MatrixXd::Identity(2, 2)).norm() == doctest::Approx(0.0));

  auto s = ManifoldKernel::sphere(2);
  TangentBasis sb = s.tangent_basis(pt({0, 0, 1}));
  CHECK((sb.rows * sb.rows.transpose() - Eigen::MatrixXd::Identity(2, 2)).norm() <=
        1e-12);
  for (const auto& x : s.sample_base(50, 19)) {
    TangentBasis b = s.tangent_basis(x);
    CHECK((b.rows * b.rows.transpose() - Eigen::MatrixXd::Identity(2, 2)).norm() <=
          1e-12);
    CHECK((b.rows * x.coords).norm() <= 1e-10);
  }
}

TEST_CASE("base sampling and densities") {
  auto t = ManifoldKernel::torus(Eigen::Vector2d(2 * M_PI, 2 * M_PI));
  CHECK(t.base_log_density(pt({0.1, 0.2})) ==
        doctest::Approx(-std::log(4 * M_PI * M_PI)).epsilon(1e-12));
  auto s = ManifoldKernel::sphere(2);
  CHECK(s.base_log_density(pt({0, 0, 1})) ==
        doctest::Approx(-std::log(4 * M_PI)).epsilon(1e-12));

  auto samples = s.sample_base(100000, 23);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : samples) mean += p.coords;
  mean /= static_cast<double>(samples.size());
  CHECK(mean.norm() <= 0.02);

  for (const auto& p : s.sample_base(100, 29))
    CHECK(std::abs(p.coords.norm() - 1.0) <= 1e-12);
  auto ts = t.sample_base(100, 31);
  for (const auto& p : ts) {
    CHECK(p.coords[0] >= 0.0);
    CHECK(p.coords[0] < 2 * M_PI);
  }
}

TEST_CASE("isometry invariance of the distance") {
  auto t = ManifoldKernel::torus(Eigen::Vector2d(2.0, 2.0));
  auto eng = make_engine(35);
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  auto xs = t.sample_base(50, 36);
  auto ys = t.sample_base(50, 37);
  const auto& torus = std::get<Torus>(t.impl());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double c = unit(eng);
    Point xg = torus.wrap(Point{xs[k].coords.array() + c});
    Point yg = torus.wrap(Point{ys[k].coords.array() + c});
    CHECK(t.dist_sq(xg, yg) == doctest::Approx(t.dist_sq(xs[k], ys[k])).epsilon(1e-12));
  }

  auto s = ManifoldKernel::sphere(2);
  auto sx = s.sample_base(50, 38);
  auto sy = s.sample_base(50, 39);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < sx.size(); ++k) {
    Eigen::Matrix3d Q = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
    Point xg{(Q * sx[k].coords).eval()};
    Point yg{(Q * sy[k].coords).eval()};
    CHECK(s.dist_sq(xg, yg) ==
          doctest::Approx(s.dist_sq(sx[k], sy[k])).epsilon(1e-11));
  }
}

TEST_CASE("dimension mismatches raise contract errors") {
  auto s = ManifoldKernel::sphere(2);
  Point x = pt({1, 0, 0});
  CHECK_THROWS_AS(s.exp_map(x, tv(x, {1.0, 0.0})), ContractError);
  auto t = ManifoldKernel::torus(Eigen::Vector2d(2.0, 2.0));
  CHECK_THROWS_AS(t.dist_sq(pt({0.0}), pt({0.0, 0.0})), ContractError);
}

TEST_SUITE_END();
