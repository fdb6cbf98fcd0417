#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "weft/autodiff.hpp"
#include "weft/common.hpp"
#include "weft/constitutive.hpp"
#include "weft/linalg.hpp"
#include "weft/mesh.hpp"
#include "weft/trajectory.hpp"

// Explicit thin-shell MPM with APIC transfers on a dense background grid.
// Mesh vertices are the mass-carrying particles; triangles contribute
// membrane forces through their vertices and evolve a per-element director
// (the normal component of the elastic gradient) with the triangle-averaged
// APIC velocity gradient. The step is templated on the scalar type: the
// double instantiation runs the forward simulation, the AD instantiation
// replays single steps inside the adjoint sweep.

namespace weft {

struct GridConfig {
  double cell_size = 0.01;
  Vec3<double> domain_min{0.0, 0.0, 0.0};
  Vec3<double> domain_max{1.0, 1.0, 1.0};
  double dt = 1e-3;
  Vec3<double> gravity{0.0, -9.81, 0.0};
  double damping = 0.999;  // per-step grid velocity multiplier
  double cfl_factor = 0.3;

  // Derived by validate():
  int nodes[3] = {0, 0, 0};
  std::size_t total_nodes = 0;

  void validate() {
    require(cell_size > 0.0, ErrorCategory::validation,
            "grid cell_size must be positive");
    require(dt > 0.0, ErrorCategory::validation, "grid dt must be positive");
    require(damping > 0.0 && damping <= 1.0, ErrorCategory::validation,
            "grid damping must lie in (0, 1]");
    require(cfl_factor > 0.0 && cfl_factor <= 1.0, ErrorCategory::validation,
            "grid cfl_factor must lie in (0, 1]");
    total_nodes = 1;
    for (int a = 0; a < 3; ++a) {
      double extent = domain_max[a] - domain_min[a];
      require(extent > 4.0 * cell_size, ErrorCategory::validation,
              "grid domain must span at least a few cells per axis");
      nodes[a] = static_cast<int>(std::ceil(extent / cell_size - 1e-9)) + 1;
      total_nodes *= static_cast<std::size_t>(nodes[a]);
    }
    require(total_nodes <= (std::size_t{1} << 26), ErrorCategory::validation,
            "grid is too large");
  }

  std::size_t node_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * nodes[1] + j) * nodes[2] + k;
  }
  Vec3<double> node_position(int i, int j, int k) const {
    return {domain_min[0] + i * cell_size, domain_min[1] + j * cell_size,
            domain_min[2] + k * cell_size};
  }
};

/// Analytic collider acting on grid velocities: separate along the normal,
/// Coulomb friction on the tangent. Optionally scripted by offset waypoints.
struct Collider {
  enum class Shape { half_space, sphere, box };

  Shape shape = Shape::half_space;
  Vec3<double> point{};     // half-space point / sphere center / box min
  Vec3<double> normal{0.0, 1.0, 0.0};
  double radius = 0.0;
  Vec3<double> box_max{};
  double friction = 0.0;
  std::vector<double> motion_times;
  std::vector<Vec3<double>> motion_offsets;

  void validate() const {
    require(friction >= 0.0, ErrorCategory::validation,
            "collider friction must be nonnegative");
    require(motion_times.size() == motion_offsets.size(),
            ErrorCategory::validation, "collider motion arrays mismatch");
    for (std::size_t i = 0; i + 1 < motion_times.size(); ++i)
      require(motion_times[i + 1] > motion_times[i], ErrorCategory::validation,
              "collider motion times must be strictly increasing");
    if (shape == Shape::sphere)
      require(radius > 0.0, ErrorCategory::validation,
              "sphere collider needs a positive radius");
  }

  Vec3<double> offset_at(double t) const {
    if (motion_times.empty()) return {};
    return path_position(motion_times, motion_offsets, t);
  }
  Vec3<double> velocity_at(double t) const {
    if (motion_times.size() < 2) return {};
    std::size_t i = path_segment(motion_times, t);
    if (t <= motion_times.front() || t >= motion_times.back()) return {};
    return (motion_offsets[i + 1] - motion_offsets[i]) *
           (1.0 / (motion_times[i + 1] - motion_times[i]));
  }

  /// Signed distance at p (negative inside the solid) and outward normal.
  double signed_distance(const Vec3<double>& p, double t,
                         Vec3<double>& n_out) const {
    Vec3<double> off = offset_at(t);
    switch (shape) {
      case Shape::half_space: {
        n_out = normal;
        return dot(normal, p - (point + off));
      }
      case Shape::sphere: {
        Vec3<double> d = p - (point + off);
        double r = norm(d);
        n_out = r > 1e-12 ? d / r : Vec3<double>{0.0, 1.0, 0.0};
        return r - radius;
      }
      case Shape::box: {
        Vec3<double> lo = point + off, hi = box_max + off;
        bool inside = true;
        for (int a = 0; a < 3; ++a)
          inside = inside && p[a] >= lo[a] && p[a] <= hi[a];
        if (inside) {
          double best = std::numeric_limits<double>::max();
          for (int a = 0; a < 3; ++a) {
            double d_lo = p[a] - lo[a], d_hi = hi[a] - p[a];
            if (d_lo < best) {
              best = d_lo;
              n_out = {};
              n_out[a] = -1.0;
            }
            if (d_hi < best) {
              best = d_hi;
              n_out = {};
              n_out[a] = 1.0;
            }
          }
          return -best;
        }
        Vec3<double> q;
        for (int a = 0; a < 3; ++a)
          q[a] = std::min(std::max(p[a], lo[a]), hi[a]);
        Vec3<double> d = p - q;
        double dist = norm(d);
        n_out = dist > 1e-12 ? d / dist : Vec3<double>{0.0, 1.0, 0.0};
        return dist;
      }
    }
    n_out = {0.0, 1.0, 0.0};
    return std::numeric_limits<double>::max();
  }
};

/// Kinematic grasp: the grid nodes in the grasped vertices' stencils follow
/// the interpolated gripper path velocity.
struct GripperConstraint {
  std::vector<int> vertices;
  int path = 0;  // index into Trajectory::paths
};

template <class Real>
struct ClothStateT {
  int step = 0;
  std::vector<Vec3<Real>> positions;
  std::vector<Vec3<Real>> velocities;
  std::vector<Mat3<Real>> affine;            // APIC C per vertex
  std::vector<Vec3<Real>> directors;         // per triangle
  std::vector<Mat3<Real>> plastic_inverse;   // per triangle
  std::vector<DeformationStateT<Real>> deformation;  // cached per triangle
};

using ClothState = ClothStateT<double>;

/// Time-integrated energy split used by the ablation analysis.
struct EnergyIntegrals {
  double membrane_mu = 0.0;
  double membrane_lambda = 0.0;
  double shear = 0.0;
  double contact = 0.0;

  double total() const {
    return membrane_mu + membrane_lambda + shear + contact;
  }
};

/// Everything constant over one simulation run.
struct SimulationSetup {
  ClothMesh mesh;
  ConstitutiveParams params;
  GridConfig grid;
  std::vector<Collider> colliders;
  std::vector<GripperConstraint> grippers;
  Trajectory trajectory;

  // Derived by finalize():
  std::vector<double> vertex_mass;
  std::vector<double> element_volume;

  void finalize() {
    mesh.finalize();
    params.validate();
    grid.validate();
    for (const auto& c : colliders) c.validate();
    if (!grippers.empty()) {
      trajectory.validate();
      for (const auto& g : grippers) {
        require(g.path >= 0 &&
                    g.path < static_cast<int>(trajectory.paths.size()),
                ErrorCategory::validation, "gripper path index out of range");
        require(!g.vertices.empty(), ErrorCategory::validation,
                "gripper has no grasped vertices");
        for (int v : g.vertices)
          require(v >= 0 && v < static_cast<int>(mesh.vertex_count()),
                  ErrorCategory::validation,
                  "grasped vertex index out of range");
      }
    }
    vertex_mass.assign(mesh.vertex_count(), 0.0);
    element_volume.resize(mesh.triangle_count());
    for (std::size_t e = 0; e < mesh.triangle_count(); ++e) {
      double volume = mesh.rest_area[e] * mesh.thickness;
      element_volume[e] = volume;
      double share = params.density * volume / 3.0;
      for (int k = 0; k < 3; ++k) vertex_mass[mesh.triangles[e][k]] += share;
    }
  }

  double total_mass() const {
    double m = 0.0;
    for (double v : vertex_mass) m += v;
    return m;
  }
};

namespace detail {

template <class Real>
Mat3<Real> cast_mat(const Mat3<double>& m) {
  if constexpr (std::is_same_v<Real, double>) {
    return m;
  } else {
    Mat3<Real> out;
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i) out(i, j) = Real(m(i, j));
    return out;
  }
}

/// Quadratic B-spline weights over the 3x3x3 stencil around a point.
template <class Real>
struct SplineStencil {
  int base[3];
  Real w[3][3];  // [axis][offset]
};

template <class Real>
SplineStencil<Real> spline_stencil(const Vec3<Real>& p, const GridConfig& g) {
  SplineStencil<Real> s;
  const double inv_dx = 1.0 / g.cell_size;
  for (int a = 0; a < 3; ++a) {
    double cell = (value_of(p[a]) - g.domain_min[a]) * inv_dx;
    int base = static_cast<int>(std::floor(cell - 0.5));
    s.base[a] = base;
    Real fx = (p[a] - Real(g.domain_min[a])) * Real(inv_dx) - Real(base);
    s.w[a][0] = Real(0.5) * sq(Real(1.5) - fx);
    s.w[a][1] = Real(0.75) - sq(fx - Real(1.0));
    s.w[a][2] = Real(0.5) * sq(fx - Real(0.5));
  }
  return s;
}

}  // namespace detail

/// Scratch buffers reused across steps of one simulation instance.
template <class Real>
struct SimWorkspace {
  // Grid fields (dense, cleared lazily through the touch list).
  std::vector<Real> grid_mass;
  std::vector<Vec3<Real>> grid_velocity;  // momentum during scatter
  std::vector<Vec3<Real>> grid_force;
  std::vector<std::uint32_t> stamp;
  std::vector<std::uint32_t> touched;
  std::uint32_t current_stamp = 0;

  // Per-vertex / per-element scratch.
  std::vector<Vec3<Real>> vertex_force;
  std::vector<Mat3<Real>> vertex_director_force;  // M_v = c * sum Gq q^T
  std::vector<Mat3<Real>> element_k;              // Dm^-1 * plastic_inverse
  std::vector<std::pair<std::uint32_t, int>> pinned;  // (node, gripper)

  void ensure(const GridConfig& grid, std::size_t nv, std::size_t ne) {
    if (grid_mass.size() != grid.total_nodes) {
      grid_mass.assign(grid.total_nodes, Real(0));
      grid_velocity.assign(grid.total_nodes, Vec3<Real>());
      grid_force.assign(grid.total_nodes, Vec3<Real>());
      stamp.assign(grid.total_nodes, 0);
      current_stamp = 0;
    }
    vertex_force.resize(nv);
    vertex_director_force.resize(ne ? nv : nv);
    element_k.resize(ne);
  }

  void begin_step() {
    ++current_stamp;
    touched.clear();
    pinned.clear();
    if (current_stamp == 0) {  // stamp counter wrapped
      std::fill(stamp.begin(), stamp.end(), 0u);
      current_stamp = 1;
    }
  }

  void touch(std::uint32_t idx) {
    if (stamp[idx] != current_stamp) {
      stamp[idx] = current_stamp;
      grid_mass[idx] = Real(0);
      grid_velocity[idx] = Vec3<Real>();
      grid_force[idx] = Vec3<Real>();
      touched.push_back(idx);
    }
  }
};

/// Builds the state for a posed mesh at rest: zero velocities, identity
/// plastic state, directors along the posed rest normals.
inline ClothState init_state(const SimulationSetup& setup,
                             const RigidPose& pose = {}) {
  const ClothMesh& mesh = setup.mesh;
  ClothState st;
  st.positions.reserve(mesh.vertex_count());
  for (const auto& p : mesh.rest_vertices) st.positions.push_back(pose.apply(p));
  st.velocities.assign(mesh.vertex_count(), Vec3<double>());
  st.affine.assign(mesh.vertex_count(), Mat3<double>::zero());
  st.directors.reserve(mesh.triangle_count());
  st.plastic_inverse.assign(mesh.triangle_count(), Mat3<double>::identity());
  st.deformation.resize(mesh.triangle_count());
  for (std::size_t e = 0; e < mesh.triangle_count(); ++e) {
    st.directors.push_back(pose.rotation * mesh.material_frames[e].col(2));
    const auto& tri = mesh.triangles[e];
    Mat3<double> ds(st.positions[tri[1]] - st.positions[tri[0]],
                    st.positions[tri[2]] - st.positions[tri[0]],
                    st.directors[e]);
    auto& def = st.deformation[e];
    def.elastic_gradient = ds * mesh.rest_shape_inv[e];
    def.material_directions = mesh.material_frames[e];
    def.refresh();
  }
  return st;
}

/// One explicit time step. Throws ErrorCategory::instability with the step
/// index on NaN/Inf, CFL violation or domain escape.
template <class Real>
void advance_step(const SimulationSetup& setup,
                  const ElasticCoeffs<Real>& coeffs,
                  const std::vector<std::vector<Vec3<Real>>>& waypoints,
                  ClothStateT<Real>& state, SimWorkspace<Real>& ws,
                  EnergyIntegrals* energy_accum = nullptr) {
  const ClothMesh& mesh = setup.mesh;
  const GridConfig& grid = setup.grid;
  const double dt = grid.dt;
  const double t_now = state.step * dt;
  const std::size_t nv = mesh.vertex_count();
  const std::size_t ne = mesh.triangle_count();
  const double apic_coeff = 4.0 / (grid.cell_size * grid.cell_size);

  ws.ensure(grid, nv, ne);
  ws.begin_step();

  auto step_error = [&](const std::string& what) {
    fail(ErrorCategory::instability,
         what + " at step " + std::to_string(state.step));
  };

  // CFL and domain containment on the incoming state.
  {
    double vmax2 = 0.0;
    for (const auto& v : state.velocities)
      vmax2 = std::max(vmax2, value_of(norm2(v)));
    for (const auto& g : setup.grippers) {
      Vec3<Real> gv = path_step_velocity(
          setup.trajectory.paths[g.path].times, waypoints[g.path], t_now, dt);
      vmax2 = std::max(vmax2, value_of(norm2(gv)));
    }
    double vmax = std::sqrt(vmax2);
    if (dt * vmax > grid.cfl_factor * grid.cell_size)
      step_error("CFL violation (v_max " + std::to_string(vmax) + ")");
    const double margin = 1.6 * grid.cell_size;
    for (std::size_t i = 0; i < nv; ++i)
      for (int a = 0; a < 3; ++a) {
        double x = value_of(state.positions[i][a]);
        if (!(x >= grid.domain_min[a] + margin &&
              x <= grid.domain_max[a] - margin))
          step_error("vertex " + std::to_string(i) + " left the grid domain");
      }
  }

  // Phase 1: constitutive forces from the current elastic state.
  std::fill(ws.vertex_force.begin(), ws.vertex_force.end(), Vec3<Real>());
  std::fill(ws.vertex_director_force.begin(), ws.vertex_director_force.end(),
            Mat3<Real>::zero());
  const double director_coeff = apic_coeff / 3.0;
  for (std::size_t e = 0; e < ne; ++e) {
    const auto& tri = mesh.triangles[e];
    Mat3<Real> k_mat =
        detail::cast_mat<Real>(mesh.rest_shape_inv[e]) * state.plastic_inverse[e];
    ws.element_k[e] = k_mat;
    Mat3<Real> ds(state.positions[tri[1]] - state.positions[tri[0]],
                  state.positions[tri[2]] - state.positions[tri[0]],
                  state.directors[e]);
    Mat3<Real> frame = detail::cast_mat<Real>(mesh.material_frames[e]);
    Mat3<Real> a = (ds * k_mat) * frame;
    Mat3<Real> grad = energy_gradient_on_frame(a, coeffs);
    // dPsi/d(ds) = grad * (k_mat * frame)^T, scaled by element volume.
    Mat3<Real> h = (grad * transpose(frame)) * transpose(k_mat);
    const Real volume = Real(setup.element_volume[e]);
    Vec3<Real> h0 = h.col(0) * volume;
    Vec3<Real> h1 = h.col(1) * volume;
    Vec3<Real> director_conjugate = h.col(2) * volume;
    ws.vertex_force[tri[0]] += h0 + h1;
    ws.vertex_force[tri[1]] -= h0;
    ws.vertex_force[tri[2]] -= h1;
    Mat3<Real> m = outer(director_conjugate, state.directors[e]) *
                   Real(director_coeff);
    ws.vertex_director_force[tri[0]] += m;
    ws.vertex_director_force[tri[1]] += m;
    ws.vertex_director_force[tri[2]] += m;
    if constexpr (std::is_same_v<Real, double>) {
      if (energy_accum) {
        EnergyTerms<double> terms = energy_terms_on_frame(a, coeffs);
        double scale = setup.element_volume[e] * dt;
        energy_accum->membrane_mu += terms.membrane_mu * scale;
        energy_accum->membrane_lambda += terms.membrane_lambda * scale;
        energy_accum->shear += terms.shear * scale;
        energy_accum->contact += terms.contact * scale;
      }
    }
  }

  // Phase 2: particle-to-grid scatter (mass, APIC momentum, forces).
  for (std::size_t i = 0; i < nv; ++i) {
    auto st = detail::spline_stencil(state.positions[i], grid);
    const Real m = Real(setup.vertex_mass[i]);
    const Vec3<Real>& vel = state.velocities[i];
    const Mat3<Real>& c = state.affine[i];
    const Vec3<Real>& f = ws.vertex_force[i];
    const Mat3<Real>& md = ws.vertex_director_force[i];
    for (int ii = 0; ii < 3; ++ii)
      for (int jj = 0; jj < 3; ++jj)
        for (int kk = 0; kk < 3; ++kk) {
          std::uint32_t idx = static_cast<std::uint32_t>(grid.node_index(
              st.base[0] + ii, st.base[1] + jj, st.base[2] + kk));
          ws.touch(idx);
          Real w = st.w[0][ii] * st.w[1][jj] * st.w[2][kk];
          Vec3<double> xn = grid.node_position(
              st.base[0] + ii, st.base[1] + jj, st.base[2] + kk);
          Vec3<Real> r(Real(xn[0]) - state.positions[i][0],
                       Real(xn[1]) - state.positions[i][1],
                       Real(xn[2]) - state.positions[i][2]);
          Real wm = w * m;
          ws.grid_mass[idx] += wm;
          ws.grid_velocity[idx] += (vel + c * r) * wm;
          ws.grid_force[idx] += (f - md * r) * w;
        }
  }

  // Phase 2.5: collect pinned grid nodes per gripper.
  for (std::size_t g = 0; g < setup.grippers.size(); ++g) {
    for (int vi : setup.grippers[g].vertices) {
      auto st = detail::spline_stencil(state.positions[vi], grid);
      for (int ii = 0; ii < 3; ++ii)
        for (int jj = 0; jj < 3; ++jj)
          for (int kk = 0; kk < 3; ++kk) {
            std::uint32_t idx = static_cast<std::uint32_t>(grid.node_index(
                st.base[0] + ii, st.base[1] + jj, st.base[2] + kk));
            ws.pinned.emplace_back(idx, static_cast<int>(g));
          }
    }
  }

  // Phase 3: grid momentum update, damping, colliders, gripper pinning.
  const Vec3<Real> gravity_dt(Real(grid.gravity[0] * dt),
                              Real(grid.gravity[1] * dt),
                              Real(grid.gravity[2] * dt));
  for (std::uint32_t idx : ws.touched) {
    if (value_of(ws.grid_mass[idx]) <= 0.0) {
      ws.grid_velocity[idx] = Vec3<Real>();
      continue;
    }
    Vec3<Real> v =
        (ws.grid_velocity[idx] + ws.grid_force[idx] * Real(dt)) /
        ws.grid_mass[idx];
    v += gravity_dt;
    v = v * Real(grid.damping);
    ws.grid_velocity[idx] = v;
  }
  if (!setup.colliders.empty()) {
    for (std::uint32_t idx : ws.touched) {
      if (value_of(ws.grid_mass[idx]) <= 0.0) continue;
      std::size_t rem = idx;
      int k = static_cast<int>(rem % grid.nodes[2]);
      rem /= grid.nodes[2];
      int j = static_cast<int>(rem % grid.nodes[1]);
      int i = static_cast<int>(rem / grid.nodes[1]);
      Vec3<double> xn = grid.node_position(i, j, k);
      for (const auto& col : setup.colliders) {
        Vec3<double> n;
        if (col.signed_distance(xn, t_now, n) >= 0.0) continue;
        Vec3<double> vcol = col.velocity_at(t_now);
        Vec3<Real> u = ws.grid_velocity[idx] -
                       Vec3<Real>(Real(vcol[0]), Real(vcol[1]), Real(vcol[2]));
        Vec3<Real> nr(Real(n[0]), Real(n[1]), Real(n[2]));
        Real un = dot(nr, u);
        if (value_of(un) >= 0.0) continue;
        Vec3<Real> ut = u - nr * un;
        Real ut_norm2 = norm2(ut);
        if (value_of(ut_norm2) <= 1e-24 * (1.0 + value_of(un) * value_of(un))) {
          u = Vec3<Real>();
        } else {
          Real ut_norm = sqrt(ut_norm2);
          Real scale = Real(1) + Real(col.friction) * un / ut_norm;
          u = value_of(scale) > 0.0 ? ut * scale : Vec3<Real>();
        }
        ws.grid_velocity[idx] =
            u + Vec3<Real>(Real(vcol[0]), Real(vcol[1]), Real(vcol[2]));
      }
    }
  }
  if (!ws.pinned.empty()) {
    std::vector<Vec3<Real>> gripper_velocity(setup.grippers.size());
    for (std::size_t g = 0; g < setup.grippers.size(); ++g)
      gripper_velocity[g] = path_step_velocity(
          setup.trajectory.paths[setup.grippers[g].path].times,
          waypoints[setup.grippers[g].path], t_now, dt);
    for (const auto& [idx, g] : ws.pinned)
      ws.grid_velocity[idx] = gripper_velocity[g];
  }

  // Phase 4: grid-to-particle gather and position update.
  for (std::size_t i = 0; i < nv; ++i) {
    auto st = detail::spline_stencil(state.positions[i], grid);
    Vec3<Real> v_new;
    Mat3<Real> b;
    for (int ii = 0; ii < 3; ++ii)
      for (int jj = 0; jj < 3; ++jj)
        for (int kk = 0; kk < 3; ++kk) {
          std::uint32_t idx = static_cast<std::uint32_t>(grid.node_index(
              st.base[0] + ii, st.base[1] + jj, st.base[2] + kk));
          Real w = st.w[0][ii] * st.w[1][jj] * st.w[2][kk];
          Vec3<double> xn = grid.node_position(
              st.base[0] + ii, st.base[1] + jj, st.base[2] + kk);
          Vec3<Real> r(Real(xn[0]) - state.positions[i][0],
                       Real(xn[1]) - state.positions[i][1],
                       Real(xn[2]) - state.positions[i][2]);
          Vec3<Real> wv = ws.grid_velocity[idx] * w;
          v_new += wv;
          b += outer(wv, r);
        }
    state.velocities[i] = v_new;
    state.affine[i] = b * Real(apic_coeff);
  }
  for (std::size_t i = 0; i < nv; ++i)
    state.positions[i] += state.velocities[i] * Real(dt);

  // Phase 5: director transport, elastic update, plastic return mapping.
  const Real friction_radius = Real(setup.params.friction_coefficient);
  for (std::size_t e = 0; e < ne; ++e) {
    const auto& tri = mesh.triangles[e];
    Mat3<Real> velocity_gradient =
        (state.affine[tri[0]] + state.affine[tri[1]] + state.affine[tri[2]]) *
        Real(1.0 / 3.0);
    Vec3<Real> q = state.directors[e];
    q += velocity_gradient * q * Real(dt);
    state.directors[e] = q;
    Mat3<Real> ds(state.positions[tri[1]] - state.positions[tri[0]],
                  state.positions[tri[2]] - state.positions[tri[0]], q);
    Mat3<Real> trial = ds * ws.element_k[e];
    Real yield = yield_value(trial, friction_radius);
    if (value_of(yield) > 0.0) {
      Mat3<Real> mapped = return_map(trial, friction_radius);
      state.plastic_inverse[e] =
          (detail::cast_mat<Real>(mesh.rest_shape[e]) * inverse(ds)) * mapped;
      if constexpr (std::is_same_v<Real, double>) {
        state.deformation[e].elastic_gradient = mapped;
      }
    } else if constexpr (std::is_same_v<Real, double>) {
      state.deformation[e].elastic_gradient = trial;
    }
    if constexpr (std::is_same_v<Real, double>) {
      state.deformation[e].material_directions = mesh.material_frames[e];
      state.deformation[e].refresh();
    }
  }

  // Phase 6: sanity.
  for (std::size_t i = 0; i < nv; ++i)
    if (!all_finite(state.positions[i]) || !all_finite(state.velocities[i]))
      step_error("non-finite vertex state");
  for (std::size_t e = 0; e < ne; ++e)
    if (!all_finite(state.directors[e]))
      step_error("non-finite director state");

  ++state.step;
}

/// Forward recording for the reverse sweep: state snapshots at a fixed
/// stride plus enough metadata to validate the replay.
struct AdjointTape {
  int start_step = 0;
  int horizon = 0;
  int checkpoint_stride = 10;
  std::vector<ClothState> checkpoints;
  std::vector<int> frame_steps;
  std::size_t vertex_count = 0;
  std::size_t element_count = 0;
};

struct SimOptions {
  int horizon = 0;
  int frame_stride = 1;
  bool record_tape = false;
  int checkpoint_stride = 10;
  EnergyIntegrals* energy = nullptr;
};

struct SimResult {
  std::vector<ClothState> frames;
  AdjointTape tape;
};

namespace detail {

inline std::vector<std::vector<Vec3<double>>> waypoint_positions(
    const Trajectory& trajectory) {
  std::vector<std::vector<Vec3<double>>> out;
  out.reserve(trajectory.paths.size());
  for (const auto& p : trajectory.paths) out.push_back(p.points);
  return out;
}

}  // namespace detail

/// Runs `horizon` steps from `initial`, returning frames at `frame_stride`
/// (plus the final state) and, when requested, the checkpoint tape.
/// Deterministic: identical inputs produce bit-identical outputs.
inline SimResult simulate(const SimulationSetup& setup,
                          const ClothState& initial, const SimOptions& opts) {
  require(opts.horizon >= 0, ErrorCategory::validation,
          "simulation horizon must be nonnegative");
  require(opts.frame_stride >= 1, ErrorCategory::validation,
          "frame stride must be at least 1");
  require(opts.checkpoint_stride >= 1, ErrorCategory::validation,
          "checkpoint stride must be at least 1");

  SimResult result;
  result.tape.start_step = initial.step;
  result.tape.horizon = opts.horizon;
  result.tape.checkpoint_stride = opts.checkpoint_stride;
  result.tape.vertex_count = setup.mesh.vertex_count();
  result.tape.element_count = setup.mesh.triangle_count();

  ElasticCoeffs<double> coeffs = elastic_coeffs(setup.params);
  auto waypoints = detail::waypoint_positions(setup.trajectory);
  SimWorkspace<double> ws;
  ClothState state = initial;

  auto record = [&](int local_step) {
    if (local_step % opts.frame_stride == 0 || local_step == opts.horizon) {
      result.frames.push_back(state);
      result.tape.frame_steps.push_back(state.step);
    }
    if (opts.record_tape &&
        (local_step % opts.checkpoint_stride == 0 ||
         local_step == opts.horizon))
      result.tape.checkpoints.push_back(state);
  };

  record(0);
  for (int s = 0; s < opts.horizon; ++s) {
    advance_step(setup, coeffs, waypoints, state, ws, opts.energy);
    record(s + 1);
  }
  return result;
}

/// Adjoint seed: d(loss)/d(vertex positions) for one recorded frame.
struct FrameSeed {
  int step = 0;
  std::vector<Vec3<double>> d_positions;
};

struct ParameterGradients {
  double young_modulus = 0.0;
  double poisson_ratio = 0.0;
  double contact_stiffness = 0.0;
  double shear_stiffness = 0.0;
  std::vector<std::vector<Vec3<double>>> waypoints;  // per gripper path
};

namespace detail {

struct StateAdjoint {
  std::vector<Vec3<double>> positions, velocities, directors;
  std::vector<Mat3<double>> affine, plastic_inverse;

  void resize(std::size_t nv, std::size_t ne) {
    positions.assign(nv, {});
    velocities.assign(nv, {});
    affine.assign(nv, Mat3<double>::zero());
    directors.assign(ne, {});
    plastic_inverse.assign(ne, Mat3<double>::zero());
  }
};

inline Vec3<ad::Var> lift(const Vec3<double>& v) {
  return {ad::make_input(v[0]), ad::make_input(v[1]), ad::make_input(v[2])};
}

inline Mat3<ad::Var> lift(const Mat3<double>& m) {
  Mat3<ad::Var> out;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) out(i, j) = ad::make_input(m(i, j));
  return out;
}

inline ClothStateT<ad::Var> lift_state(const ClothState& s) {
  ClothStateT<ad::Var> out;
  out.step = s.step;
  out.positions.reserve(s.positions.size());
  out.velocities.reserve(s.velocities.size());
  out.affine.reserve(s.affine.size());
  for (const auto& p : s.positions) out.positions.push_back(lift(p));
  for (const auto& v : s.velocities) out.velocities.push_back(lift(v));
  for (const auto& c : s.affine) out.affine.push_back(lift(c));
  out.directors.reserve(s.directors.size());
  out.plastic_inverse.reserve(s.plastic_inverse.size());
  for (const auto& q : s.directors) out.directors.push_back(lift(q));
  for (const auto& f : s.plastic_inverse) out.plastic_inverse.push_back(lift(f));
  return out;
}

inline void seed_vec(ad::Tape& tape, const Vec3<ad::Var>& var,
                     const Vec3<double>& adj) {
  for (int k = 0; k < 3; ++k)
    if (!var[k].is_const()) tape.seed(var[k].i, adj[k]);
}

inline void seed_mat(ad::Tape& tape, const Mat3<ad::Var>& var,
                     const Mat3<double>& adj) {
  for (int j = 0; j < 3; ++j) seed_vec(tape, var.c[j], adj.c[j]);
}

inline Vec3<double> read_vec(const ad::Tape& tape, const Vec3<ad::Var>& var) {
  Vec3<double> out;
  for (int k = 0; k < 3; ++k)
    out[k] = var[k].is_const() ? 0.0 : tape.adjoint(var[k].i);
  return out;
}

inline Mat3<double> read_mat(const ad::Tape& tape, const Mat3<ad::Var>& var) {
  Mat3<double> out;
  for (int j = 0; j < 3; ++j) out.c[j] = read_vec(tape, var.c[j]);
  return out;
}

}  // namespace detail

/// Reverse sweep over the recorded horizon: recomputes each checkpoint
/// segment forward (bit-identical replay), then replays every step on the AD
/// tape to accumulate d(loss)/d(E, nu, k, gamma) and d(loss)/d(waypoints).
inline ParameterGradients backward(const SimulationSetup& setup,
                                   const AdjointTape& tape,
                                   const std::vector<FrameSeed>& seeds) {
  require(tape.vertex_count == setup.mesh.vertex_count() &&
              tape.element_count == setup.mesh.triangle_count(),
          ErrorCategory::validation, "tape does not match this setup");
  require(!tape.checkpoints.empty(), ErrorCategory::validation,
          "tape has no checkpoints; simulate with record_tape");
  int expected = (tape.horizon + tape.checkpoint_stride - 1) /
                     tape.checkpoint_stride +
                 1;
  require(static_cast<int>(tape.checkpoints.size()) == expected,
          ErrorCategory::validation, "tape/horizon mismatch");

  // Seeds keyed by absolute step index; all must refer to recorded frames.
  std::vector<const FrameSeed*> seed_at(tape.horizon + 1, nullptr);
  for (const auto& s : seeds) {
    int local = s.step - tape.start_step;
    require(local >= 0 && local <= tape.horizon, ErrorCategory::validation,
            "seed step " + std::to_string(s.step) + " outside the tape");
    require(s.d_positions.size() == setup.mesh.vertex_count(),
            ErrorCategory::validation, "seed size mismatch");
    seed_at[local] = &s;
  }

  ParameterGradients grads;
  grads.waypoints.resize(setup.trajectory.paths.size());
  for (std::size_t g = 0; g < setup.trajectory.paths.size(); ++g)
    grads.waypoints[g].assign(setup.trajectory.paths[g].points.size(),
                              Vec3<double>());

  detail::StateAdjoint adj;
  adj.resize(setup.mesh.vertex_count(), setup.mesh.triangle_count());
  if (seed_at[tape.horizon])
    for (std::size_t i = 0; i < adj.positions.size(); ++i)
      adj.positions[i] += seed_at[tape.horizon]->d_positions[i];

  ElasticCoeffs<double> coeffs = elastic_coeffs(setup.params);
  auto waypoints = detail::waypoint_positions(setup.trajectory);
  SimWorkspace<double> fwd_ws;
  SimWorkspace<ad::Var> ad_ws;
  ad::Tape ad_tape;
  ad_tape.reserve(1 << 20, 1 << 22);

  const int segments = static_cast<int>(tape.checkpoints.size()) - 1;
  for (int seg = segments - 1; seg >= -1; --seg) {
    // Segment seg covers local steps [lo, hi).
    int lo = (seg + 1) * tape.checkpoint_stride;
    int hi = std::min(lo + tape.checkpoint_stride, tape.horizon);
    if (seg == segments - 1) hi = tape.horizon;
    if (seg >= 0) {
      lo = seg * tape.checkpoint_stride;
      hi = std::min(lo + tape.checkpoint_stride, tape.horizon);
    } else {
      break;
    }

    // Forward replay of the segment from its checkpoint.
    std::vector<ClothState> local;
    local.reserve(hi - lo + 1);
    local.push_back(tape.checkpoints[seg]);
    for (int s = lo; s < hi; ++s) {
      ClothState next = local.back();
      advance_step(setup, coeffs, waypoints, next, fwd_ws);
      local.push_back(next);
    }

    // Reverse across the segment.
    for (int s = hi - 1; s >= lo; --s) {
      ad_tape.clear();
      ad::TapeScope scope(ad_tape);
      ClothStateT<ad::Var> in_state = detail::lift_state(local[s - lo]);
      ad::Var e_var = ad::make_input(setup.params.young_modulus);
      ad::Var nu_var = ad::make_input(setup.params.poisson_ratio);
      ad::Var k_var = ad::make_input(setup.params.contact_stiffness);
      ad::Var gamma_var = ad::make_input(setup.params.shear_stiffness);
      std::vector<std::vector<Vec3<ad::Var>>> wp_vars(waypoints.size());
      for (std::size_t g = 0; g < waypoints.size(); ++g) {
        wp_vars[g].reserve(waypoints[g].size());
        for (const auto& p : waypoints[g])
          wp_vars[g].push_back(detail::lift(p));
      }
      ElasticCoeffs<ad::Var> ad_coeffs =
          elastic_coeffs(e_var, nu_var, k_var, gamma_var);

      ClothStateT<ad::Var> out_state = in_state;
      advance_step<ad::Var>(setup, ad_coeffs, wp_vars, out_state, ad_ws);

      ad_tape.zero_adjoints();
      for (std::size_t i = 0; i < adj.positions.size(); ++i) {
        detail::seed_vec(ad_tape, out_state.positions[i], adj.positions[i]);
        detail::seed_vec(ad_tape, out_state.velocities[i], adj.velocities[i]);
        detail::seed_mat(ad_tape, out_state.affine[i], adj.affine[i]);
      }
      for (std::size_t e = 0; e < adj.directors.size(); ++e) {
        detail::seed_vec(ad_tape, out_state.directors[e], adj.directors[e]);
        detail::seed_mat(ad_tape, out_state.plastic_inverse[e],
                         adj.plastic_inverse[e]);
      }
      ad_tape.propagate();

      for (std::size_t i = 0; i < adj.positions.size(); ++i) {
        adj.positions[i] = detail::read_vec(ad_tape, in_state.positions[i]);
        adj.velocities[i] = detail::read_vec(ad_tape, in_state.velocities[i]);
        adj.affine[i] = detail::read_mat(ad_tape, in_state.affine[i]);
      }
      for (std::size_t e = 0; e < adj.directors.size(); ++e) {
        adj.directors[e] = detail::read_vec(ad_tape, in_state.directors[e]);
        adj.plastic_inverse[e] =
            detail::read_mat(ad_tape, in_state.plastic_inverse[e]);
      }
      grads.young_modulus += ad_tape.adjoint(e_var.i);
      grads.poisson_ratio += ad_tape.adjoint(nu_var.i);
      grads.contact_stiffness += ad_tape.adjoint(k_var.i);
      grads.shear_stiffness += ad_tape.adjoint(gamma_var.i);
      for (std::size_t g = 0; g < wp_vars.size(); ++g)
        for (std::size_t w = 0; w < wp_vars[g].size(); ++w)
          grads.waypoints[g][w] += detail::read_vec(ad_tape, wp_vars[g][w]);

      if (seed_at[s])
        for (std::size_t i = 0; i < adj.positions.size(); ++i)
          adj.positions[i] += seed_at[s]->d_positions[i];
    }
  }
  return grads;
}

inline double kinetic_energy(const SimulationSetup& setup,
                             const ClothState& state) {
  double ke = 0.0;
  for (std::size_t i = 0; i < state.velocities.size(); ++i)
    ke += 0.5 * setup.vertex_mass[i] * norm2(state.velocities[i]);
  return ke;
}

inline Vec3<double> linear_momentum(const SimulationSetup& setup,
                                    const ClothState& state) {
  Vec3<double> p;
  for (std::size_t i = 0; i < state.velocities.size(); ++i)
    p += state.velocities[i] * setup.vertex_mass[i];
  return p;
}

/// Total elastic energy of a state (energy density times rest volume).
inline double total_elastic_energy(const SimulationSetup& setup,
                                   const ClothState& state) {
  ElasticCoeffs<double> coeffs = elastic_coeffs(setup.params);
  double total = 0.0;
  for (std::size_t e = 0; e < setup.mesh.triangle_count(); ++e) {
    const auto& def = state.deformation[e];
    total += energy_density(def.elastic_gradient,
                            detail::cast_mat<double>(def.material_directions),
                            coeffs) *
             setup.element_volume[e];
  }
  return total;
}

}  // namespace weft
