#pragma once

// Forward-mode scalar types. Dual<T> carries a value and one tangent; nesting
// Dual<Dual<...>> yields exact mixed partial derivatives up to the nesting
// depth. All library math that needs derivatives is templated on the scalar,
// so the same code runs on double, Dual<double>, and deeper stacks.

#include <cmath>
#include <type_traits>

namespace rpf {

template <class T>
struct Dual {
  T a{};  // value
  T b{};  // tangent

  Dual() = default;
  Dual(double v) : a(v), b() {}  // NOLINT: implicit promotion is the point
  Dual(T value, T tangent) : a(std::move(value)), b(std::move(tangent)) {}
};

using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;
using D4 = Dual<D3>;

// value-part extraction, any depth
inline double val(double x) { return x; }
template <class T>
double val(const Dual<T>& x) {
  return val(x.a);
}

// double forwarders so generic code can call these unqualified
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double log1p(double x) { return std::log1p(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double asin(double x) { return std::asin(x); }

template <class T>
Dual<T> operator+(const Dual<T>& x, const Dual<T>& y) {
  return {x.a + y.a, x.b + y.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x, const Dual<T>& y) {
  return {x.a - y.a, x.b - y.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x) {
  return {-x.a, -x.b};
}
template <class T>
Dual<T> operator*(const Dual<T>& x, const Dual<T>& y) {
  return {x.a * y.a, x.a * y.b + x.b * y.a};
}
template <class T>
Dual<T> operator/(const Dual<T>& x, const Dual<T>& y) {
  T q = x.a / y.a;
  return {q, (x.b - q * y.b) / y.a};
}

// mixed double ops avoid promoting literals through the whole stack
template <class T>
Dual<T> operator+(const Dual<T>& x, double c) {
  return {x.a + c, x.b};
}
template <class T>
Dual<T> operator+(double c, const Dual<T>& x) {
  return {x.a + c, x.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x, double c) {
  return {x.a - c, x.b};
}
template <class T>
Dual<T> operator-(double c, const Dual<T>& x) {
  return {c - x.a, -x.b};
}
template <class T>
Dual<T> operator*(const Dual<T>& x, double c) {
  return {x.a * c, x.b * c};
}
template <class T>
Dual<T> operator*(double c, const Dual<T>& x) {
  return {x.a * c, x.b * c};
}
template <class T>
Dual<T> operator/(const Dual<T>& x, double c) {
  return {x.a / c, x.b / c};
}
template <class T>
Dual<T> operator/(double c, const Dual<T>& x) {
  return Dual<T>(c) / x;
}

template <class T>
Dual<T>& operator+=(Dual<T>& x, const Dual<T>& y) {
  x.a += y.a;
  x.b += y.b;
  return x;
}
template <class T>
Dual<T>& operator-=(Dual<T>& x, const Dual<T>& y) {
  x.a -= y.a;
  x.b -= y.b;
  return x;
}
template <class T, class U>
Dual<T>& operator*=(Dual<T>& x, const U& y) {
  x = x * y;
  return x;
}

template <class T>
Dual<T> sin(const Dual<T>& x) {
  return {sin(x.a), x.b * cos(x.a)};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  return {cos(x.a), -x.b * sin(x.a)};
}
template <class T>
Dual<T> exp(const Dual<T>& x) {
  T e = exp(x.a);
  return {e, x.b * e};
}
template <class T>
Dual<T> log(const Dual<T>& x) {
  return {log(x.a), x.b / x.a};
}
template <class T>
Dual<T> log1p(const Dual<T>& x) {
  return {log1p(x.a), x.b / (x.a + 1.0)};
}
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  T s = sqrt(x.a);
  return {s, x.b / (2.0 * s)};
}
template <class T>
Dual<T> asin(const Dual<T>& x) {
  return {asin(x.a), x.b / sqrt(1.0 - x.a * x.a)};
}

// numerically stable softplus / sigmoid, generic over the scalar
template <class S>
S softplus(const S& x) {
  if (val(x) > 0.0) return x + log1p(exp(-x));
  return log1p(exp(x));
}
template <class S>
S sigmoid(const S& x) {
  if (val(x) > 0.0) return 1.0 / (exp(-x) + 1.0);
  S e = exp(x);
  return e / (e + 1.0);
}

// seeding helpers: slot k of an n-deep dual carries one derivative direction
inline D1 d1_seed(double v, double s0) { return {v, s0}; }
inline D2 d2_seed(double v, double s0, double s1) {
  return {D1{v, s0}, D1{s1, 0.0}};
}
inline D3 d3_seed(double v, double s0, double s1, double s2) {
  return {d2_seed(v, s0, s1), D2{D1{s2, 0.0}, D1{0.0, 0.0}}};
}
inline D4 d4_seed(double v, double s0, double s1, double s2, double s3) {
  return {d3_seed(v, s0, s1, s2),
          D3{D2{D1{s3, 0.0}, D1{0.0, 0.0}}, D2{}}};
}

// mixed-partial extraction
inline double d_slot(const D1& x) { return x.b; }
inline double d_slot0(const D2& x) { return x.a.b; }
inline double d_slot1(const D2& x) { return x.b.a; }
inline double d_slot01(const D2& x) { return x.b.b; }
inline double d_slot012(const D3& x) { return x.b.b.b; }
inline double d_slot01(const D3& x) { return x.a.b.b; }
inline double d_slot02(const D3& x) { return x.b.a.b; }
inline double d_slot12(const D3& x) { return x.b.b.a; }
inline double d_slot0123(const D4& x) { return x.b.b.b.b; }

}  // namespace rpf
