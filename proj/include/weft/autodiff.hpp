#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "weft/common.hpp"
#include "weft/linalg.hpp"

// Reverse-mode automatic differentiation on an explicit tape. One tape holds
// the recording of a single simulation step (or any other scalar program);
// the adjoint sweep runs the tape backwards. Branches are resolved on values,
// so non-smooth operations differentiate the active branch.

namespace weft::ad {

constexpr std::uint32_t kNoNode = 0xffffffffu;

class Tape {
 public:
  Tape() { offset_.push_back(0); }

  void reserve(std::size_t nodes, std::size_t parents) {
    offset_.reserve(nodes + 1);
    parent_.reserve(parents);
    weight_.reserve(parents);
  }

  void clear() {
    offset_.clear();
    offset_.push_back(0);
    parent_.clear();
    weight_.clear();
    adjoint_.clear();
  }

  std::size_t num_nodes() const { return offset_.size() - 1; }
  std::size_t num_edges() const { return parent_.size(); }

  std::uint32_t push0() { return seal(); }

  std::uint32_t push1(std::uint32_t p, double w) {
    parent_.push_back(p);
    weight_.push_back(w);
    return seal();
  }

  std::uint32_t push2(std::uint32_t p0, double w0, std::uint32_t p1,
                      double w1) {
    parent_.push_back(p0);
    weight_.push_back(w0);
    parent_.push_back(p1);
    weight_.push_back(w1);
    return seal();
  }

  std::uint32_t push(const std::uint32_t* ps, const double* ws, int k) {
    for (int i = 0; i < k; ++i) {
      parent_.push_back(ps[i]);
      weight_.push_back(ws[i]);
    }
    return seal();
  }

  void zero_adjoints() { adjoint_.assign(num_nodes(), 0.0); }

  void seed(std::uint32_t node, double value) { adjoint_[node] += value; }

  /// Reverse sweep: accumulates d(seeded outputs)/d(every node).
  void propagate() {
    for (std::uint32_t i = static_cast<std::uint32_t>(num_nodes()); i-- > 0;) {
      double a = adjoint_[i];
      if (a == 0.0) continue;
      std::uint32_t b = offset_[i], e = offset_[i + 1];
      for (std::uint32_t k = b; k < e; ++k)
        adjoint_[parent_[k]] += a * weight_[k];
    }
  }

  double adjoint(std::uint32_t node) const { return adjoint_[node]; }

  static Tape*& active() {
    static thread_local Tape* t = nullptr;
    return t;
  }

 private:
  std::uint32_t seal() {
    offset_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return static_cast<std::uint32_t>(offset_.size()) - 2;
  }

  std::vector<std::uint32_t> offset_;  // node i owns parents [off[i], off[i+1])
  std::vector<std::uint32_t> parent_;
  std::vector<double> weight_;
  std::vector<double> adjoint_;
};

/// Installs a tape as the active recording target for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(Tape::active()) { Tape::active() = &t; }
  ~TapeScope() { Tape::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Taped scalar. Default-constructed or double-constructed values are
/// constants (no node); inputs are created through make_input.
struct Var {
  double v = 0.0;
  std::uint32_t i = kNoNode;

  Var() = default;
  Var(double x) : v(x) {}  // NOLINT: implicit constants are the point
  Var(double x, std::uint32_t node) : v(x), i(node) {}

  bool is_const() const { return i == kNoNode; }
};

inline Var make_input(double value) {
  return Var(value, Tape::active()->push0());
}

inline double value_of(const Var& x) { return x.v; }

// -- arithmetic ---------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  double v = a.v + b.v;
  if (a.is_const() && b.is_const()) return Var(v);
  Tape* t = Tape::active();
  if (a.is_const()) return Var(v, t->push1(b.i, 1.0));
  if (b.is_const()) return Var(v, t->push1(a.i, 1.0));
  return Var(v, t->push2(a.i, 1.0, b.i, 1.0));
}

inline Var operator-(const Var& a, const Var& b) {
  double v = a.v - b.v;
  if (a.is_const() && b.is_const()) return Var(v);
  Tape* t = Tape::active();
  if (a.is_const()) return Var(v, t->push1(b.i, -1.0));
  if (b.is_const()) return Var(v, t->push1(a.i, 1.0));
  return Var(v, t->push2(a.i, 1.0, b.i, -1.0));
}

inline Var operator-(const Var& a) {
  if (a.is_const()) return Var(-a.v);
  return Var(-a.v, Tape::active()->push1(a.i, -1.0));
}

inline Var operator*(const Var& a, const Var& b) {
  double v = a.v * b.v;
  if (a.is_const() && b.is_const()) return Var(v);
  Tape* t = Tape::active();
  if (a.is_const()) return Var(v, t->push1(b.i, a.v));
  if (b.is_const()) return Var(v, t->push1(a.i, b.v));
  return Var(v, t->push2(a.i, b.v, b.i, a.v));
}

inline Var operator/(const Var& a, const Var& b) {
  double inv = 1.0 / b.v;
  double v = a.v * inv;
  if (a.is_const() && b.is_const()) return Var(v);
  Tape* t = Tape::active();
  if (a.is_const()) return Var(v, t->push1(b.i, -v * inv));
  if (b.is_const()) return Var(v, t->push1(a.i, inv));
  return Var(v, t->push2(a.i, inv, b.i, -v * inv));
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var sqrt(const Var& a) {
  double r = std::sqrt(a.v);
  if (a.is_const()) return Var(r);
  return Var(r, Tape::active()->push1(a.i, 0.5 / r));
}

inline Var abs(const Var& a) {
  if (a.is_const()) return Var(std::abs(a.v));
  double w = a.v >= 0.0 ? 1.0 : -1.0;
  return Var(std::abs(a.v), Tape::active()->push1(a.i, w));
}

inline Var log(const Var& a) {
  double r = std::log(a.v);
  if (a.is_const()) return Var(r);
  return Var(r, Tape::active()->push1(a.i, 1.0 / a.v));
}

/// Branch-on-value selections; the adjoint follows the chosen argument.
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

inline bool is_finite(const Var& a) { return std::isfinite(a.v); }

}  // namespace weft::ad

namespace weft {

// Fused multi-parent nodes for the hot vector kernels; one tape node instead
// of a chain of binary ops.
inline ad::Var dot(const Vec3<ad::Var>& a, const Vec3<ad::Var>& b) {
  double v = a[0].v * b[0].v + a[1].v * b[1].v + a[2].v * b[2].v;
  std::uint32_t ps[6];
  double ws[6];
  int n = 0;
  for (int k = 0; k < 3; ++k) {
    if (!a[k].is_const()) {
      ps[n] = a[k].i;
      ws[n++] = b[k].v;
    }
    if (!b[k].is_const()) {
      ps[n] = b[k].i;
      ws[n++] = a[k].v;
    }
  }
  if (n == 0) return ad::Var(v);
  return ad::Var(v, ad::Tape::active()->push(ps, ws, n));
}

inline bool all_finite(const Vec3<ad::Var>& a) {
  return ad::is_finite(a[0]) && ad::is_finite(a[1]) && ad::is_finite(a[2]);
}

}  // namespace weft
