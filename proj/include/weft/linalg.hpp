#pragma once

#include <array>
#include <cmath>
#include <cstddef>

// Small fixed-size vector/matrix templates. Everything is parameterized on
// the scalar type so the same physics code runs on plain doubles and on
// reverse-mode AD variables. Matrices are column-major.

namespace weft {

template <class T>
struct Vec3 {
  T v[3];

  Vec3() : v{T(0), T(0), T(0)} {}
  Vec3(T a, T b, T c) : v{a, b, c} {}

  T& operator[](int i) { return v[i]; }
  const T& operator[](int i) const { return v[i]; }

  Vec3 operator-() const { return {-v[0], -v[1], -v[2]}; }
  Vec3 operator+(const Vec3& o) const {
    return {v[0] + o.v[0], v[1] + o.v[1], v[2] + o.v[2]};
  }
  Vec3 operator-(const Vec3& o) const {
    return {v[0] - o.v[0], v[1] - o.v[1], v[2] - o.v[2]};
  }
  Vec3 operator*(const T& s) const { return {v[0] * s, v[1] * s, v[2] * s}; }
  Vec3 operator/(const T& s) const { return {v[0] / s, v[1] / s, v[2] / s}; }
  Vec3& operator+=(const Vec3& o) {
    v[0] = v[0] + o.v[0];
    v[1] = v[1] + o.v[1];
    v[2] = v[2] + o.v[2];
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    v[0] = v[0] - o.v[0];
    v[1] = v[1] - o.v[1];
    v[2] = v[2] - o.v[2];
    return *this;
  }
};

template <class T>
Vec3<T> operator*(const T& s, const Vec3<T>& a) {
  return a * s;
}

template <class T>
T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <class T>
Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

template <class T>
T norm2(const Vec3<T>& a) {
  return dot(a, a);
}

template <class T>
T norm(const Vec3<T>& a) {
  using std::sqrt;
  return sqrt(norm2(a));
}

template <class T>
Vec3<T> normalized(const Vec3<T>& a) {
  return a / norm(a);
}

/// 3x3 matrix, columns are Vec3.
template <class T>
struct Mat3 {
  Vec3<T> c[3];

  Mat3() = default;
  Mat3(const Vec3<T>& a, const Vec3<T>& b, const Vec3<T>& d) : c{a, b, d} {}

  static Mat3 identity() {
    Mat3 m;
    m.c[0] = {T(1), T(0), T(0)};
    m.c[1] = {T(0), T(1), T(0)};
    m.c[2] = {T(0), T(0), T(1)};
    return m;
  }
  static Mat3 zero() { return Mat3(); }

  Vec3<T>& col(int j) { return c[j]; }
  const Vec3<T>& col(int j) const { return c[j]; }
  T& operator()(int i, int j) { return c[j][i]; }
  const T& operator()(int i, int j) const { return c[j][i]; }

  Mat3 operator+(const Mat3& o) const {
    return {c[0] + o.c[0], c[1] + o.c[1], c[2] + o.c[2]};
  }
  Mat3 operator-(const Mat3& o) const {
    return {c[0] - o.c[0], c[1] - o.c[1], c[2] - o.c[2]};
  }
  Mat3 operator*(const T& s) const { return {c[0] * s, c[1] * s, c[2] * s}; }
  Mat3& operator+=(const Mat3& o) {
    c[0] += o.c[0];
    c[1] += o.c[1];
    c[2] += o.c[2];
    return *this;
  }

  Vec3<T> operator*(const Vec3<T>& x) const {
    return c[0] * x[0] + c[1] * x[1] + c[2] * x[2];
  }
  Mat3 operator*(const Mat3& o) const {
    return {(*this) * o.c[0], (*this) * o.c[1], (*this) * o.c[2]};
  }
};

template <class T>
Mat3<T> operator*(const T& s, const Mat3<T>& m) {
  return m * s;
}

template <class T>
Mat3<T> transpose(const Mat3<T>& m) {
  Mat3<T> t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t(i, j) = m(j, i);
  return t;
}

template <class T>
Mat3<T> outer(const Vec3<T>& a, const Vec3<T>& b) {
  return {a * b[0], a * b[1], a * b[2]};
}

template <class T>
T trace(const Mat3<T>& m) {
  return m(0, 0) + m(1, 1) + m(2, 2);
}

template <class T>
T det(const Mat3<T>& m) {
  return dot(m.c[0], cross(m.c[1], m.c[2]));
}

template <class T>
T frobenius2(const Mat3<T>& m) {
  return norm2(m.c[0]) + norm2(m.c[1]) + norm2(m.c[2]);
}

/// Inverse via adjugate; caller guarantees a nonsingular input.
template <class T>
Mat3<T> inverse(const Mat3<T>& m) {
  Vec3<T> r0 = cross(m.c[1], m.c[2]);
  Vec3<T> r1 = cross(m.c[2], m.c[0]);
  Vec3<T> r2 = cross(m.c[0], m.c[1]);
  T d = dot(m.c[0], r0);
  Mat3<T> inv;
  for (int j = 0; j < 3; ++j) {
    inv(0, j) = r0[j] / d;
    inv(1, j) = r1[j] / d;
    inv(2, j) = r2[j] / d;
  }
  return inv;
}

/// 3x2 matrix: two world-space columns.
template <class T>
struct Mat32 {
  Vec3<T> c[2];

  Mat32() = default;
  Mat32(const Vec3<T>& a, const Vec3<T>& b) : c{a, b} {}

  Vec3<T>& col(int j) { return c[j]; }
  const Vec3<T>& col(int j) const { return c[j]; }
  T& operator()(int i, int j) { return c[j][i]; }
  const T& operator()(int i, int j) const { return c[j][i]; }
};

template <class T>
T frobenius2(const Mat32<T>& m) {
  return norm2(m.c[0]) + norm2(m.c[1]);
}

template <class T>
struct Vec2 {
  T v[2];
  Vec2() : v{T(0), T(0)} {}
  Vec2(T a, T b) : v{a, b} {}
  T& operator[](int i) { return v[i]; }
  const T& operator[](int i) const { return v[i]; }
};

/// Numeric helpers that forward to std for arithmetic scalars; the AD type
/// provides its own overloads found by ADL.
using std::abs;
using std::max;
using std::min;
using std::sqrt;

template <class T>
T sq(const T& x) {
  return x * x;
}

template <class T>
T cube(const T& x) {
  return x * x * x;
}

/// Extract the plain double value; identity for double, overloaded for AD.
inline double value_of(double x) { return x; }

inline bool is_finite(double x) { return std::isfinite(x); }

template <class T>
bool all_finite(const Vec3<T>& a) {
  return is_finite(value_of(a[0])) && is_finite(value_of(a[1])) &&
         is_finite(value_of(a[2]));
}

template <class T>
bool all_finite(const Mat3<T>& m) {
  return all_finite(m.c[0]) && all_finite(m.c[1]) && all_finite(m.c[2]);
}

}  // namespace weft
