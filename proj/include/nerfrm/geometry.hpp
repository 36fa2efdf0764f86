#pragma once

#include <Eigen/Dense>
#include <optional>

#include "nerfrm/common.hpp"

namespace nerfrm {

struct Aabb {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();

  void expand(const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Aabb inflated(double fraction) const {
    Eigen::Vector3d c = 0.5 * (lo + hi);
    Eigen::Vector3d h = 0.5 * (hi - lo) * (1.0 + fraction);
    return {c - h, c + h};
  }
  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

// Oriented 3D box. `rotation` maps box-local axes to world.
struct BBox3 {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  void validate() const {
    NERFRM_CHECK((half_extents.array() > 0).all(), "box half-extents must be positive");
    NERFRM_CHECK((rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9,
                 "box rotation must be orthonormal");
  }

  bool contains(const Eigen::Vector3d& p) const {
    // tiny slack so points constructed exactly on a rotated face stay inside
    Eigen::Vector3d local = rotation.transpose() * (p - center);
    return (local.cwiseAbs().array() <= half_extents.array() + 1e-12).all();
  }
};

struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  Eigen::Vector3d center() const { return cam_to_world.block<3, 1>(0, 3); }
  Eigen::Matrix3d rotation() const { return cam_to_world.block<3, 3>(0, 0); }

  // Unit camera-space direction through (row+0.5, col+0.5); z = 1 before
  // normalization. Also returns the norm of the unnormalized vector, which
  // converts z-depth to distance along the unit ray.
  Eigen::Vector3d pixel_dir_cam(double row, double col, double* z_to_ray = nullptr) const {
    const double fx = intrinsics(0, 0), fy = intrinsics(1, 1);
    const double cx = intrinsics(0, 2), cy = intrinsics(1, 2);
    NERFRM_CHECK(fx != 0.0 && fy != 0.0, "singular intrinsics");
    Eigen::Vector3d d((col + 0.5 - cx) / fx, (row + 0.5 - cy) / fy, 1.0);
    double n = d.norm();
    if (z_to_ray) *z_to_ray = n;
    return d / n;
  }

  // Project a world point; returns (col,row) pixel coordinates and z-depth.
  bool project(const Eigen::Vector3d& p, double& col, double& row, double& z) const {
    Eigen::Matrix3d r = rotation();
    Eigen::Vector3d cam = r.transpose() * (p - center());
    z = cam.z();
    if (z <= 0.0) return false;
    col = intrinsics(0, 0) * cam.x() / z + intrinsics(0, 2) - 0.5;
    row = intrinsics(1, 1) * cam.y() / z + intrinsics(1, 2) - 0.5;
    return true;
  }
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

// Slab test; returns [t_enter, t_exit] or nullopt on miss.
inline std::optional<std::pair<double, double>> ray_aabb(const Eigen::Vector3d& o,
                                                         const Eigen::Vector3d& d, const Aabb& box) {
  double t0 = -1e300, t1 = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / d[a];
    double ta = (box.lo[a] - o[a]) * inv;
    double tb = (box.hi[a] - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

// Ray vs oriented box; same slab test in box-local coordinates.
inline std::optional<std::pair<double, double>> ray_obb(const Eigen::Vector3d& o,
                                                        const Eigen::Vector3d& d, const BBox3& box) {
  Eigen::Vector3d lo_local = box.rotation.transpose() * (o - box.center);
  Eigen::Vector3d ld = box.rotation.transpose() * d;
  Aabb local{-box.half_extents, box.half_extents};
  return ray_aabb(lo_local, ld, local);
}

// Camera-to-world pose looking from `eye` toward `target`; computer-vision
// convention (x right, y down, z forward).
inline Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& world_up = Eigen::Vector3d(0, 0, 1)) {
  Eigen::Vector3d fwd = (target - eye).normalized();
  Eigen::Vector3d right = fwd.cross(world_up);
  NERFRM_CHECK(right.norm() > 1e-9, "degenerate look_at (view parallel to up)");
  right.normalize();
  // y axis points down in image space
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = fwd.cross(right).normalized();
  m.block<3, 1>(0, 2) = fwd;
  m.block<3, 1>(0, 3) = eye;
  return m;
}

inline bool is_rigid_pose(const Eigen::Matrix4d& m, double tol = 1e-6) {
  Eigen::Matrix3d r = m.block<3, 3>(0, 0);
  if ((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(r.determinant() - 1.0) > tol) return false;
  if (std::abs(m(3, 0)) > tol || std::abs(m(3, 1)) > tol || std::abs(m(3, 2)) > tol ||
      std::abs(m(3, 3) - 1.0) > tol)
    return false;
  return true;
}

}  // namespace nerfrm
