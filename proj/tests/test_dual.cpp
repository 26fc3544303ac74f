#include <doctest.h>

#include <cmath>
#include <initializer_list>

#include "rpf/dual.hpp"

using namespace rpf;

TEST_SUITE_BEGIN("dual");

TEST_CASE("first derivatives of elementary functions") {
  double x = 0.7;
  D1 v = d1_seed(x, 1.0);
  CHECK(d_slot(sin(v)) == doctest::Approx(std::cos(x)).epsilon(1e-14));
  CHECK(d_slot(cos(v)) == doctest::Approx(-std::sin(x)).epsilon(1e-14));
  CHECK(d_slot(exp(v)) == doctest::Approx(std::exp(x)).epsilon(1e-14));
  CHECK(d_slot(log(v)) == doctest::Approx(1.0 / x).epsilon(1e-14));
  CHECK(d_slot(sqrt(v)) == doctest::Approx(0.5 / std::sqrt(x)).epsilon(1e-14));
  CHECK(d_slot(asin(v)) ==
        doctest::Approx(1.0 / std::sqrt(1.0 - x * x)).epsilon(1e-14));
  CHECK(d_slot(log1p(v)) == doctest::Approx(1.0 / (1.0 + x)).epsilon(1e-14));
}

TEST_CASE("second and third derivatives via nesting") {
  // f(x) = exp(x^2): f' = 2x e^{x^2}, f'' = (2 + 4x^2) e^{x^2},
  // f''' = (12x + 8x^3) e^{x^2}
  double x = 0.9;
  double e = std::exp(x * x);
  D2 v2 = d2_seed(x, 1.0, 1.0);
  D2 f2 = exp(v2 * v2);
  CHECK(val(f2) == doctest::Approx(e).epsilon(1e-13));
  CHECK(d_slot0(f2) == doctest::Approx(2 * x * e).epsilon(1e-13));
  CHECK(d_slot01(f2) == doctest::Approx((2 + 4 * x * x) * e).epsilon(1e-13));

  D3 v3 = d3_seed(x, 1.0, 1.0, 1.0);
  D3 f3 = exp(v3 * v3);
  CHECK(d_slot012(f3) ==
        doctest::Approx((12 * x + 8 * x * x * x) * e).epsilon(1e-13));
}

TEST_CASE("mixed partials commute") {
  // g(a, b) = sin(a b) + a^2 b
  auto g = [](auto a, auto b) { return sin(a * b) + a * a * b; };
  double a = 0.4, b = 1.3;
  D2 with_ab = g(d2_seed(a, 1.0, 0.0), d2_seed(b, 0.0, 1.0));
  D2 with_ba = g(d2_seed(a, 0.0, 1.0), d2_seed(b, 1.0, 0.0));
  CHECK(d_slot01(with_ab) == doctest::Approx(d_slot01(with_ba)).epsilon(1e-14));
}

TEST_CASE("division and chained arithmetic") {
  // f(x) = (x + 2) / (x * x): f'(x) = (-x - 4) / x^3
  double x = 1.7;
  D1 v = d1_seed(x, 1.0);
  D1 f = (v + 2.0) / (v * v);
  CHECK(val(f) == doctest::Approx((x + 2) / (x * x)).epsilon(1e-14));
  CHECK(d_slot(f) ==
        doctest::Approx((-x - 4.0) / (x * x * x)).epsilon(1e-14));
}

TEST_CASE("softplus is stable and smooth at large inputs") {
  for (double x : {-50.0, -10.0, 0.0, 10.0, 50.0}) {
    D3 v = d3_seed(x, 1.0, 1.0, 1.0);
    D3 sp = softplus(v);
    CHECK(std::isfinite(val(sp)));
    CHECK(std::isfinite(d_slot012(sp)));
    double sig = 1.0 / (1.0 + std::exp(-x));
    CHECK(d_slot012(d3_seed(0, 0, 0, 0) + sp) ==
          doctest::Approx(sig * (1 - sig) * (1 - 2 * sig)).epsilon(1e-10));
  }
  CHECK(val(softplus(d1_seed(50.0, 1.0))) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("fourth-order nesting works") {
  // f(x) = x^4 has fourth derivative 24
  D4 v = d4_seed(2.0, 1.0, 1.0, 1.0, 1.0);
  D4 f = v * v * v * v;
  CHECK(d_slot0123(f) == doctest::Approx(24.0).epsilon(1e-13));
}

TEST_SUITE_END();
