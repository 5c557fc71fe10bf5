#pragma once

#include <array>
#include <cmath>
#include <type_traits>

#include "bilayer/tape.hpp"

namespace bilayer {

struct Vec2 {
  double x1 = 0.0;
  double x2 = 0.0;
};

/// Truncated second-order Taylor expansion in the two spatial coordinates:
/// value, gradient (d/dx1, d/dx2), and packed symmetric Hessian (11, 12, 22).
/// T is double for plain evaluation or Scalar when recording the tape.
template <class T>
struct Jet2 {
  T v{};
  std::array<T, 2> d1{};
  std::array<T, 3> d2{};
};

using DJet = Jet2<double>;
using SJet = Jet2<Scalar>;

namespace detail {
template <class A, class B>
using join_t = std::conditional_t<std::is_same_v<A, Scalar> || std::is_same_v<B, Scalar>,
                                  Scalar, double>;
}  // namespace detail

/// Jets of the coordinates themselves: value x_k, unit gradient, zero Hessian.
inline std::array<DJet, 2> seed_input(Vec2 x) {
  std::array<DJet, 2> out{};
  out[0].v = x.x1;
  out[0].d1 = {1.0, 0.0};
  out[1].v = x.x2;
  out[1].d1 = {0.0, 1.0};
  return out;
}

template <class A, class B>
Jet2<detail::join_t<A, B>> operator+(const Jet2<A>& a, const Jet2<B>& b) {
  Jet2<detail::join_t<A, B>> r;
  r.v = a.v + b.v;
  for (int k = 0; k < 2; ++k) r.d1[k] = a.d1[k] + b.d1[k];
  for (int k = 0; k < 3; ++k) r.d2[k] = a.d2[k] + b.d2[k];
  return r;
}

template <class A, class B>
Jet2<detail::join_t<A, B>> operator-(const Jet2<A>& a, const Jet2<B>& b) {
  Jet2<detail::join_t<A, B>> r;
  r.v = a.v - b.v;
  for (int k = 0; k < 2; ++k) r.d1[k] = a.d1[k] - b.d1[k];
  for (int k = 0; k < 3; ++k) r.d2[k] = a.d2[k] - b.d2[k];
  return r;
}

template <class A>
Jet2<A> operator-(const Jet2<A>& a) {
  Jet2<A> r;
  r.v = -a.v;
  for (int k = 0; k < 2; ++k) r.d1[k] = -a.d1[k];
  for (int k = 0; k < 3; ++k) r.d2[k] = -a.d2[k];
  return r;
}

/// Leibniz rule through second order. The mixed entry pairs d1 components as
/// (1,2): d2 packed order is (11, 12, 22).
template <class A, class B>
Jet2<detail::join_t<A, B>> operator*(const Jet2<A>& a, const Jet2<B>& b) {
  Jet2<detail::join_t<A, B>> r;
  r.v = a.v * b.v;
  r.d1[0] = a.d1[0] * b.v + a.v * b.d1[0];
  r.d1[1] = a.d1[1] * b.v + a.v * b.d1[1];
  r.d2[0] = a.d2[0] * b.v + 2.0 * (a.d1[0] * b.d1[0]) + a.v * b.d2[0];
  r.d2[1] = a.d2[1] * b.v + a.d1[0] * b.d1[1] + a.d1[1] * b.d1[0] + a.v * b.d2[1];
  r.d2[2] = a.d2[2] * b.v + 2.0 * (a.d1[1] * b.d1[1]) + a.v * b.d2[2];
  return r;
}

/// Scale by a spatially constant factor (a network weight or a number).
template <class W, class A>
Jet2<detail::join_t<W, A>> scale(const W& w, const Jet2<A>& a) {
  Jet2<detail::join_t<W, A>> r;
  r.v = w * a.v;
  for (int k = 0; k < 2; ++k) r.d1[k] = w * a.d1[k];
  for (int k = 0; k < 3; ++k) r.d2[k] = w * a.d2[k];
  return r;
}

/// acc += w * a, the inner-product workhorse of the dense layers.
template <class W, class A, class R>
void axpy(const W& w, const Jet2<A>& a, Jet2<R>& acc) {
  acc.v = acc.v + w * a.v;
  acc.d1[0] = acc.d1[0] + w * a.d1[0];
  acc.d1[1] = acc.d1[1] + w * a.d1[1];
  acc.d2[0] = acc.d2[0] + w * a.d2[0];
  acc.d2[1] = acc.d2[1] + w * a.d2[1];
  acc.d2[2] = acc.d2[2] + w * a.d2[2];
}

namespace detail {
/// Chain rule through a scalar map f with derivatives f' and f'':
/// (f∘u)_i = f'(u) u_i, (f∘u)_ij = f''(u) u_i u_j + f'(u) u_ij.
template <class T>
Jet2<T> chain(const Jet2<T>& a, T f, T fp, T fpp) {
  Jet2<T> r;
  r.v = f;
  r.d1[0] = fp * a.d1[0];
  r.d1[1] = fp * a.d1[1];
  const T p11 = a.d1[0] * a.d1[0];
  const T p12 = a.d1[0] * a.d1[1];
  const T p22 = a.d1[1] * a.d1[1];
  r.d2[0] = fpp * p11 + fp * a.d2[0];
  r.d2[1] = fpp * p12 + fp * a.d2[1];
  r.d2[2] = fpp * p22 + fp * a.d2[2];
  return r;
}
}  // namespace detail

template <class T>
Jet2<T> tanh(const Jet2<T>& a) {
  using std::tanh;
  const T t = tanh(a.v);
  const T g = 1.0 - t * t;
  return detail::chain(a, t, g, -2.0 * t * g);
}

inline DJet sin(const DJet& a) {
  const double s = std::sin(a.v);
  const double c = std::cos(a.v);
  return detail::chain(a, s, c, -s);
}

inline DJet cos(const DJet& a) {
  const double s = std::sin(a.v);
  const double c = std::cos(a.v);
  return detail::chain(a, c, -s, -c);
}

template <class T>
Jet2<T> sqrt(const Jet2<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  const T fp = 0.5 / s;
  return detail::chain(a, s, fp, -0.5 * fp / a.v);
}

template <class T>
Jet2<T> recip(const Jet2<T>& a) {
  const T r = 1.0 / a.v;
  const T r2 = r * r;
  return detail::chain(a, r, -r2, 2.0 * r2 * r);
}

/// Constant-in-space jet (all derivatives zero).
template <class T>
Jet2<T> constant_jet(double v) {
  Jet2<T> r;
  r.v = T(v);
  return r;
}

inline double value_of(double x) { return x; }
inline double value_of(Scalar x) { return x.v; }

}  // namespace bilayer
