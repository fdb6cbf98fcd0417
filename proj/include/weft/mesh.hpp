#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "weft/common.hpp"
#include "weft/linalg.hpp"

namespace weft {

/// Lagrangian triangle mesh in rest configuration, with the per-triangle
/// material frames and rest-shape matrices the constitutive model needs.
struct ClothMesh {
  std::vector<Vec3<double>> rest_vertices;
  std::vector<std::array<int, 3>> triangles;
  double thickness = 0.002;

  // Derived by finalize():
  std::vector<Mat3<double>> material_frames;  // [t1 t2 n], orthonormal
  std::vector<Mat3<double>> rest_shape;       // [e1 e2 n] edge matrix
  std::vector<Mat3<double>> rest_shape_inv;
  std::vector<double> rest_area;

  std::size_t vertex_count() const { return rest_vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }

  double total_area() const {
    double a = 0.0;
    for (double t : rest_area) a += t;
    return a;
  }

  /// Validates connectivity and computes frames, areas and rest shapes.
  void finalize() {
    require(thickness > 0.0, ErrorCategory::validation,
            "mesh thickness must be positive");
    require(!rest_vertices.empty(), ErrorCategory::validation,
            "mesh has no vertices");
    require(!triangles.empty(), ErrorCategory::validation,
            "mesh has no triangles");
    const int n = static_cast<int>(rest_vertices.size());
    material_frames.clear();
    rest_shape.clear();
    rest_shape_inv.clear();
    rest_area.clear();
    material_frames.reserve(triangles.size());
    rest_shape.reserve(triangles.size());
    rest_shape_inv.reserve(triangles.size());
    rest_area.reserve(triangles.size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      const auto& tri = triangles[t];
      for (int k = 0; k < 3; ++k)
        require(tri[k] >= 0 && tri[k] < n, ErrorCategory::validation,
                "triangle " + std::to_string(t) + " references vertex " +
                    std::to_string(tri[k]) + " out of range");
      Vec3<double> e1 = rest_vertices[tri[1]] - rest_vertices[tri[0]];
      Vec3<double> e2 = rest_vertices[tri[2]] - rest_vertices[tri[0]];
      Vec3<double> nvec = cross(e1, e2);
      double area = 0.5 * norm(nvec);
      require(area > 1e-12, ErrorCategory::degenerate,
              "triangle " + std::to_string(t) + " is degenerate");
      rest_area.push_back(area);
      Vec3<double> normal = nvec / (2.0 * area);
      Vec3<double> t1 = normalized(e1);
      Vec3<double> t2 = normalized(e2 - t1 * dot(e2, t1));
      material_frames.emplace_back(t1, t2, normal);
      Mat3<double> dm(e1, e2, normal);
      rest_shape.push_back(dm);
      rest_shape_inv.push_back(inverse(dm));
    }
  }
};

/// Regular nx-by-ny quad grid in the z=0 plane, split into triangles.
/// Vertex (i, j) sits at (i*size_x/nx, j*size_y/ny, 0); index = j*(nx+1)+i.
inline ClothMesh make_grid_mesh(int nx, int ny, double size_x, double size_y,
                                double thickness = 0.002) {
  require(nx >= 1 && ny >= 1, ErrorCategory::validation,
          "grid mesh needs at least one cell per axis");
  require(size_x > 0.0 && size_y > 0.0, ErrorCategory::validation,
          "grid mesh size must be positive");
  ClothMesh mesh;
  mesh.thickness = thickness;
  const double dx = size_x / nx, dy = size_y / ny;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      mesh.rest_vertices.push_back({i * dx, j * dy, 0.0});
  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int v00 = vid(i, j), v10 = vid(i + 1, j);
      int v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
      mesh.triangles.push_back({v00, v10, v11});
      mesh.triangles.push_back({v00, v11, v01});
    }
  mesh.finalize();
  return mesh;
}

struct RigidPose {
  Mat3<double> rotation = Mat3<double>::identity();
  Vec3<double> translation{};

  Vec3<double> apply(const Vec3<double>& p) const {
    return rotation * p + translation;
  }
};

/// Rotation from XYZ Euler angles (radians), applied in x, then y, then z.
inline Mat3<double> rotation_euler_xyz(double ax, double ay, double az) {
  double cx = std::cos(ax), sx = std::sin(ax);
  double cy = std::cos(ay), sy = std::sin(ay);
  double cz = std::cos(az), sz = std::sin(az);
  Mat3<double> rx({1, 0, 0}, {0, cx, sx}, {0, -sx, cx});
  Mat3<double> ry({cy, 0, -sy}, {0, 1, 0}, {sy, 0, cy});
  Mat3<double> rz({cz, sz, 0}, {-sz, cz, 0}, {0, 0, 1});
  return rz * (ry * rx);
}

}  // namespace weft
