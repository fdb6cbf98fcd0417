#pragma once

#include <cmath>
#include <utility>

#include "weft/common.hpp"
#include "weft/linalg.hpp"

// Anisotropic elasto-plastic thin-shell constitutive model. The elastic
// response splits into an in-plane fixed corotated membrane term and two
// orthogonal terms (normal-compression barrier and normal shear), evaluated
// in the QR frame of the elastic gradient times the rest material frame.
// Plasticity bounds the Frobenius distance of the elastic gradient from the
// identity and projects back onto that ball (return mapping).

namespace weft {

/// The identifiable physics vector (E, nu, k, gamma) plus fixed constants.
struct ConstitutiveParams {
  double young_modulus = 500.0;
  double poisson_ratio = 0.2;
  double contact_stiffness = 5000.0;   // k: normal compression barrier
  double shear_stiffness = 500.0;      // gamma: normal shear penalty
  double friction_coefficient = 0.1;   // c_F: yield surface radius
  double density = 300.0;              // mass / volume

  void validate() const {
    require(young_modulus > 0.0, ErrorCategory::domain,
            "young_modulus must be positive");
    require(poisson_ratio >= 0.0 && poisson_ratio < 0.5, ErrorCategory::domain,
            "poisson_ratio must lie in [0, 0.5)");
    require(contact_stiffness >= 0.0, ErrorCategory::domain,
            "contact_stiffness must be nonnegative");
    require(shear_stiffness >= 0.0, ErrorCategory::domain,
            "shear_stiffness must be nonnegative");
    require(friction_coefficient > 0.0, ErrorCategory::domain,
            "friction_coefficient must be positive");
    require(density > 0.0, ErrorCategory::domain, "density must be positive");
  }
};

/// Material coefficients actually consumed by the energy; templated so the
/// identification loop can differentiate through the Lame conversion.
template <class T>
struct ElasticCoeffs {
  T mu{};
  T lambda{};
  T contact_stiffness{};
  T shear_stiffness{};
};

/// Lame constants from Young's modulus and Poisson's ratio.
template <class T>
std::pair<T, T> lame_from_params(const T& young_modulus,
                                 const T& poisson_ratio) {
  double e = value_of(young_modulus);
  double nu = value_of(poisson_ratio);
  require(e > 0.0, ErrorCategory::domain, "young_modulus must be positive");
  require(nu >= 0.0 && nu < 0.5, ErrorCategory::domain,
          "poisson_ratio must lie in [0, 0.5)");
  T mu = young_modulus / (T(2) * (T(1) + poisson_ratio));
  T lambda = young_modulus * poisson_ratio /
             ((T(1) + poisson_ratio) * (T(1) - T(2) * poisson_ratio));
  return {mu, lambda};
}

template <class T>
ElasticCoeffs<T> elastic_coeffs(const T& young_modulus, const T& poisson_ratio,
                                const T& contact_stiffness,
                                const T& shear_stiffness) {
  auto [mu, lambda] = lame_from_params(young_modulus, poisson_ratio);
  return {mu, lambda, contact_stiffness, shear_stiffness};
}

inline ElasticCoeffs<double> elastic_coeffs(const ConstitutiveParams& p) {
  return elastic_coeffs(p.young_modulus, p.poisson_ratio, p.contact_stiffness,
                        p.shear_stiffness);
}

/// In-plane fixed corotated energy density in singular-value form.
template <class T>
T fixed_corotated_energy(const T& sigma1, const T& sigma2, const T& area_ratio,
                         const T& mu, const T& lambda) {
  return mu * (sq(sigma1 - T(1)) + sq(sigma2 - T(1))) +
         T(0.5) * lambda * sq(area_ratio - T(1));
}

/// Cubic barrier against normal compression; zero (and C^1) for r33 >= 1.
template <class T>
T contact_barrier_energy(const T& r33, const T& contact_stiffness) {
  if (value_of(r33) >= 1.0) return T(0);
  return contact_stiffness / T(3) * cube(T(1) - r33);
}

template <class T>
T shear_energy(const T& r13, const T& r23, const T& shear_stiffness) {
  return shear_stiffness * (sq(r13) + sq(r23));
}

namespace detail {

/// Corotated invariants of a 3x2 (or upper-triangular 2x2) in-plane block
/// without an SVD: sigma1^2 + sigma2^2 = |B|_F^2, sigma1*sigma2 = area, and
/// sigma1 + sigma2 = sqrt(|B|_F^2 + 2*area). Smooth at sigma1 == sigma2,
/// which an SVD-angle formulation is not.
template <class T>
T corotated_from_invariants(const T& frob2, const T& area, const T& mu,
                            const T& lambda) {
  T sum = sqrt(frob2 + T(2) * area);
  return mu * (frob2 - T(2) * sum + T(2)) + T(0.5) * lambda * sq(area - T(1));
}

template <class T>
void inplane_singular_values(const T& frob2, const T& area, T& sigma1,
                             T& sigma2) {
  T sum = sqrt(frob2 + T(2) * area);
  T diff2 = frob2 - T(2) * area;
  T diff = sqrt(max(diff2, T(0)));
  sigma1 = T(0.5) * (sum + diff);
  sigma2 = T(0.5) * (sum - diff);
}

}  // namespace detail

/// Gram-Schmidt QR of (elastic_gradient * material_directions). Q gets the
/// right-handed frame (q3 = q1 x q2), so r33 is signed and detects the
/// director crossing the surface. r11, r22 >= 0 by construction.
template <class T>
void qr_material_frame(const Mat3<T>& frame_input, Mat3<T>& q_out,
                       Mat3<T>& r_out) {
  const Vec3<T>& a1 = frame_input.col(0);
  const Vec3<T>& a2 = frame_input.col(1);
  const Vec3<T>& a3 = frame_input.col(2);

  T r11 = norm(a1);
  require(value_of(r11) > 1e-12, ErrorCategory::degenerate,
          "degenerate element: first in-plane direction has zero length");
  Vec3<T> q1 = a1 / r11;
  T r12 = dot(q1, a2);
  Vec3<T> u2 = a2 - q1 * r12;
  T r22 = norm(u2);
  require(value_of(r22) > 1e-12, ErrorCategory::degenerate,
          "degenerate element: in-plane directions are parallel");
  Vec3<T> q2 = u2 / r22;
  T r13 = dot(q1, a3);
  T r23 = dot(q2, a3);
  Vec3<T> q3 = cross(q1, q2);
  T r33 = dot(q3, a3);

  q_out = Mat3<T>(q1, q2, q3);
  r_out = Mat3<T>::zero();
  r_out(0, 0) = r11;
  r_out(0, 1) = r12;
  r_out(0, 2) = r13;
  r_out(1, 1) = r22;
  r_out(1, 2) = r23;
  r_out(2, 2) = r33;
}

template <class T>
void qr_material_frame(const Mat3<T>& elastic_gradient,
                       const Mat3<T>& material_directions, Mat3<T>& q_out,
                       Mat3<T>& r_out) {
  qr_material_frame(elastic_gradient * material_directions, q_out, r_out);
}

/// Total energy density evaluated on an upper-triangular R.
template <class T>
T orthogonal_energy(const Mat3<T>& r, const ElasticCoeffs<T>& coeffs) {
  T frob2 = sq(r(0, 0)) + sq(r(0, 1)) + sq(r(1, 1));
  T area = r(0, 0) * r(1, 1);
  T membrane =
      detail::corotated_from_invariants(frob2, area, coeffs.mu, coeffs.lambda);
  return membrane + shear_energy(r(0, 2), r(1, 2), coeffs.shear_stiffness) +
         contact_barrier_energy(r(2, 2), coeffs.contact_stiffness);
}

/// Additive pieces of the energy density, split the way the parameter
/// exclusions of the ablation analysis need them.
template <class T>
struct EnergyTerms {
  T membrane_mu{};      // mu * sum (sigma_i - 1)^2
  T membrane_lambda{};  // lambda/2 * (J - 1)^2
  T shear{};            // gamma * (r13^2 + r23^2)
  T contact{};          // k/3 * (1 - r33)^3 barrier

  T total() const { return membrane_mu + membrane_lambda + shear + contact; }
};

namespace detail {

/// Shared geometry of the energy/stress evaluation on A = F * D.
template <class T>
struct FrameGeometry {
  Vec3<T> a1, a2, a3;
  Vec3<T> area_vector;  // a1 x a2
  T area;               // |a1 x a2| = sigma1 * sigma2
  Vec3<T> unit_normal;
  T frob2;              // |[a1 a2]|_F^2 = sigma1^2 + sigma2^2
  Vec2<T> lsq;          // coefficients w with  P a3 = a1 w0 + a2 w1
  Vec3<T> tangential;   // P a3 (in-plane part of the director image)
  T shear2;             // r13^2 + r23^2 = a3 . P a3
  T r33;                // signed normal component of a3
};

template <class T>
FrameGeometry<T> frame_geometry(const Mat3<T>& a) {
  FrameGeometry<T> g;
  g.a1 = a.col(0);
  g.a2 = a.col(1);
  g.a3 = a.col(2);
  g.area_vector = cross(g.a1, g.a2);
  T area2 = norm2(g.area_vector);
  require(value_of(area2) > 1e-24, ErrorCategory::degenerate,
          "degenerate element: in-plane directions are parallel");
  g.area = sqrt(area2);
  g.unit_normal = g.area_vector / g.area;
  g.frob2 = norm2(g.a1) + norm2(g.a2);
  // Least-squares projection of a3 onto span(a1, a2); the Gram determinant
  // equals area^2 (Lagrange identity).
  T g11 = norm2(g.a1), g22 = norm2(g.a2), g12 = dot(g.a1, g.a2);
  T b1 = dot(g.a1, g.a3), b2 = dot(g.a2, g.a3);
  g.lsq[0] = (g22 * b1 - g12 * b2) / area2;
  g.lsq[1] = (g11 * b2 - g12 * b1) / area2;
  g.tangential = g.a1 * g.lsq[0] + g.a2 * g.lsq[1];
  g.shear2 = b1 * g.lsq[0] + b2 * g.lsq[1];
  g.r33 = dot(g.unit_normal, g.a3);
  return g;
}

}  // namespace detail

/// Energy density as a function of A = elastic_gradient * material frame.
template <class T>
EnergyTerms<T> energy_terms_on_frame(const Mat3<T>& a,
                                     const ElasticCoeffs<T>& coeffs) {
  auto g = detail::frame_geometry(a);
  EnergyTerms<T> terms;
  T sum = sqrt(g.frob2 + T(2) * g.area);
  terms.membrane_mu = coeffs.mu * (g.frob2 - T(2) * sum + T(2));
  terms.membrane_lambda = T(0.5) * coeffs.lambda * sq(g.area - T(1));
  terms.shear = coeffs.shear_stiffness * g.shear2;
  terms.contact = contact_barrier_energy(g.r33, coeffs.contact_stiffness);
  return terms;
}

template <class T>
T energy_density_on_frame(const Mat3<T>& a, const ElasticCoeffs<T>& coeffs) {
  return energy_terms_on_frame(a, coeffs).total();
}

template <class T>
T energy_density(const Mat3<T>& elastic_gradient,
                 const Mat3<T>& material_directions,
                 const ElasticCoeffs<T>& coeffs) {
  return energy_density_on_frame(elastic_gradient * material_directions,
                                 coeffs);
}

/// d(energy density)/dA, closed form. Assembled per term:
///  - membrane: through |B|_F^2 and the area |a1 x a2|;
///  - shear: least-squares residual formula d|P a3|^2/dB = 2 s w^T;
///  - contact: signed-normal derivative through the cross product.
template <class T>
Mat3<T> energy_gradient_on_frame(const Mat3<T>& a,
                                 const ElasticCoeffs<T>& coeffs) {
  auto g = detail::frame_geometry(a);
  T sum = sqrt(g.frob2 + T(2) * g.area);

  Vec3<T> darea_da1 = cross(g.a2, g.unit_normal);
  Vec3<T> darea_da2 = cross(g.unit_normal, g.a1);

  // membrane: mu * (frob2 - 2 sum + 2) + lambda/2 (area - 1)^2
  T dmem_dfrob2 = coeffs.mu * (T(1) - T(1) / sum);
  T dmem_darea = coeffs.mu * (T(-2) / sum) +
                 coeffs.lambda * (g.area - T(1));
  Vec3<T> grad1 = g.a1 * (T(2) * dmem_dfrob2) + darea_da1 * dmem_darea;
  Vec3<T> grad2 = g.a2 * (T(2) * dmem_dfrob2) + darea_da2 * dmem_darea;
  Vec3<T> grad3;

  // shear: gamma * |P a3|^2; residual s = a3 - P a3 = r33 * n.
  Vec3<T> residual = g.a3 - g.tangential;
  T two_gamma = T(2) * coeffs.shear_stiffness;
  grad1 += residual * (two_gamma * g.lsq[0]);
  grad2 += residual * (two_gamma * g.lsq[1]);
  grad3 = g.tangential * two_gamma;

  // contact barrier: f'(r33) with r33 = n . a3.
  if (value_of(g.r33) < 1.0) {
    T fprime = -coeffs.contact_stiffness * sq(T(1) - g.r33);
    Vec3<T> v = g.tangential / g.area;
    grad1 += cross(g.a2, v) * fprime;
    grad2 += cross(v, g.a1) * fprime;
    grad3 += g.unit_normal * fprime;
  }
  return Mat3<T>(grad1, grad2, grad3);
}

/// First Piola-Kirchhoff stress: derivative of the energy density with
/// respect to the full 3x3 elastic gradient.
template <class T>
Mat3<T> first_piola_stress(const Mat3<T>& elastic_gradient,
                           const Mat3<T>& material_directions,
                           const ElasticCoeffs<T>& coeffs) {
  Mat3<T> dpsi_da = energy_gradient_on_frame(
      elastic_gradient * material_directions, coeffs);
  return dpsi_da * transpose(material_directions);
}

/// Frobenius distance of the elastic gradient from identity, minus the
/// yield radius. Nonpositive inside the elastic region.
template <class T>
T yield_value(const Mat3<T>& elastic_gradient, const T& friction_coefficient) {
  Mat3<T> d = elastic_gradient - Mat3<T>::identity();
  return sqrt(frobenius2(d)) - friction_coefficient;
}

/// Projects the elastic gradient back onto the yield surface when the yield
/// criterion is violated; identity map otherwise. Idempotent.
template <class T>
Mat3<T> return_map(const Mat3<T>& elastic_gradient,
                   const T& friction_coefficient) {
  Mat3<T> d = elastic_gradient - Mat3<T>::identity();
  T dist = sqrt(frobenius2(d));
  if (value_of(dist) <= value_of(friction_coefficient)) return elastic_gradient;
  return Mat3<T>::identity() + d * (friction_coefficient / dist);
}

/// Per-element deformation record: the return-mapped elastic gradient plus
/// the cached QR frame and in-plane invariants.
template <class T>
struct DeformationStateT {
  Mat3<T> elastic_gradient = Mat3<T>::identity();
  Mat3<double> material_directions = Mat3<double>::identity();
  Mat3<T> frame_q = Mat3<T>::identity();          // orthogonal
  Mat3<T> frame_r = Mat3<T>::identity();          // upper triangular
  T sigma1 = T(1);
  T sigma2 = T(1);
  T area_ratio = T(1);

  Mat32<T> in_plane_gradient() const {
    Mat3<T> d = cast_frame();
    Mat3<T> a = elastic_gradient * d;
    return Mat32<T>(a.col(0), a.col(1));
  }
  Vec3<T> normal_component() const { return elastic_gradient.col(2); }

  Mat3<T> cast_frame() const {
    Mat3<T> d;
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i) d(i, j) = T(material_directions(i, j));
    return d;
  }

  /// Refresh Q, R and the in-plane invariants from the elastic gradient.
  void refresh() {
    Mat3<T> a = elastic_gradient * cast_frame();
    qr_material_frame(a, frame_q, frame_r);
    auto g = detail::frame_geometry(a);
    detail::inplane_singular_values(g.frob2, g.area, sigma1, sigma2);
    area_ratio = g.area;
  }
};

using DeformationState = DeformationStateT<double>;

}  // namespace weft
