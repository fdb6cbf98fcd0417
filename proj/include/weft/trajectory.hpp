#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "weft/common.hpp"
#include "weft/linalg.hpp"

namespace weft {

/// Timestamped waypoints for one gripper, interpolated piecewise linearly.
struct GripperPath {
  std::vector<double> times;
  std::vector<Vec3<double>> points;

  std::size_t size() const { return times.size(); }
};

/// Gripper waypoint sequences: the decision variable of trajectory
/// optimization and the control input of the simulator.
struct Trajectory {
  std::vector<GripperPath> paths;
  double max_speed = std::numeric_limits<double>::infinity();

  void validate() const {
    require(!paths.empty(), ErrorCategory::validation,
            "trajectory has no gripper paths");
    require(max_speed > 0.0, ErrorCategory::validation,
            "trajectory max_speed must be positive");
    for (std::size_t g = 0; g < paths.size(); ++g) {
      const auto& p = paths[g];
      require(p.size() >= 2, ErrorCategory::validation,
              "gripper path " + std::to_string(g) +
                  " needs at least two waypoints");
      require(p.times.size() == p.points.size(), ErrorCategory::validation,
              "gripper path " + std::to_string(g) +
                  " times/points length mismatch");
      for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        require(p.times[i + 1] > p.times[i], ErrorCategory::validation,
                "gripper path " + std::to_string(g) +
                    " time stamps must be strictly increasing");
        double speed = norm(p.points[i + 1] - p.points[i]) /
                       (p.times[i + 1] - p.times[i]);
        require(speed <= max_speed * (1.0 + 1e-9), ErrorCategory::validation,
                "gripper path " + std::to_string(g) + " segment " +
                    std::to_string(i) + " exceeds the speed limit");
      }
    }
  }

  double end_time() const {
    double t = 0.0;
    for (const auto& p : paths)
      if (!p.times.empty()) t = std::max(t, p.times.back());
    return t;
  }
};

/// Segment lookup: the index i with times[i] <= t < times[i+1], clamped.
inline std::size_t path_segment(const std::vector<double>& times, double t) {
  if (t <= times.front()) return 0;
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    if (t < times[i + 1]) return i;
  return times.size() - 2;
}

/// Position at time t for waypoint positions of scalar type T (the AD replay
/// differentiates with respect to the waypoints; times stay plain).
template <class T>
Vec3<T> path_position(const std::vector<double>& times,
                      const std::vector<Vec3<T>>& points, double t) {
  std::size_t i = path_segment(times, t);
  double t0 = times[i], t1 = times[i + 1];
  double a = std::min(std::max((t - t0) / (t1 - t0), 0.0), 1.0);
  return points[i] * T(1.0 - a) + points[i + 1] * T(a);
}

/// Average velocity over [t, t + dt] from the interpolated positions; this
/// is what the grid pinning uses so grasped nodes move by exactly the
/// waypoint displacement each step.
template <class T>
Vec3<T> path_step_velocity(const std::vector<double>& times,
                           const std::vector<Vec3<T>>& points, double t,
                           double dt) {
  Vec3<T> p0 = path_position(times, points, t);
  Vec3<T> p1 = path_position(times, points, t + dt);
  return (p1 - p0) * T(1.0 / dt);
}

/// Shrinks every over-speed segment toward its midpoint until the whole
/// trajectory satisfies the speed limit. Fixed-point iteration; idempotent.
inline Trajectory project_trajectory(const Trajectory& trajectory) {
  Trajectory out = trajectory;
  if (!std::isfinite(out.max_speed)) return out;
  for (auto& path : out.paths) {
    for (int pass = 0; pass < 1000; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        double dt = path.times[i + 1] - path.times[i];
        Vec3<double> seg = path.points[i + 1] - path.points[i];
        double len = norm(seg);
        double cap = out.max_speed * dt;
        if (len > cap * (1.0 + 1e-12)) {
          Vec3<double> mid = (path.points[i] + path.points[i + 1]) * 0.5;
          Vec3<double> half = seg * (0.5 * cap / len);
          path.points[i] = mid - half;
          path.points[i + 1] = mid + half;
          changed = true;
        }
      }
      if (!changed) break;
    }
  }
  return out;
}

}  // namespace weft
