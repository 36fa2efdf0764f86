#include "nerfrm/maskgen.hpp"

#include <cmath>
#include <iostream>

namespace nerfrm {

std::vector<Eigen::Vector3d> backproject_cloud(const SceneDataset& scene, int stride) {
  NERFRM_CHECK(stride >= 1, "stride must be positive");
  std::vector<Eigen::Vector3d> cloud;
  for (int n = 0; n < scene.frame_count(); ++n) {
    Camera cam = scene.camera(n);
    Eigen::Matrix3d rot = cam.rotation();
    Eigen::Vector3d center = cam.center();
    const DepthMap& depth = scene.frames[n].depth;
    for (int r = 0; r < scene.height; r += stride)
      for (int c = 0; c < scene.width; c += stride) {
        double z = depth.at(r, c);
        if (z <= 0.0) continue;
        double z_to_ray = 1.0;
        Eigen::Vector3d dir = cam.pixel_dir_cam(r, c, &z_to_ray);
        cloud.push_back(center + rot * dir * (z * z_to_ray));
      }
  }
  return cloud;
}

std::vector<Eigen::Vector3d> box_filter(const std::vector<Eigen::Vector3d>& cloud,
                                        const BBox3& box) {
  std::vector<Eigen::Vector3d> kept;
  for (const auto& p : cloud)
    if (box.contains(p)) kept.push_back(p);
  return kept;
}

Mask project_mask(const SceneDataset& scene, int frame,
                  const std::vector<Eigen::Vector3d>& points, double depth_tolerance) {
  NERFRM_CHECK(depth_tolerance > 0.0, "depth tolerance must be positive");
  Camera cam = scene.camera(frame);
  const DepthMap& depth = scene.frames[frame].depth;
  Mask mask(scene.height, scene.width);
  for (const auto& p : points) {
    double col, row, z;
    if (!cam.project(p, col, row, z)) continue;
    int c = static_cast<int>(std::lround(col));
    int r = static_cast<int>(std::lround(row));
    if (r < 0 || r >= scene.height || c < 0 || c >= scene.width) continue;
    double recorded = depth.at(r, c);
    if (recorded > 0.0 && z > recorded + depth_tolerance) continue;  // occluded
    mask.at(r, c) = 1;
  }
  return mask;
}

namespace {

// separable square-window max/min
Mask morph(const Mask& in, int radius, bool dilate) {
  if (radius <= 0) return in;
  Mask tmp(in.height, in.width), out(in.height, in.width);
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      uint8_t v = dilate ? 0 : 1;
      for (int dc = -radius; dc <= radius; ++dc) {
        int cc = c + dc;
        uint8_t s;
        if (cc < 0 || cc >= in.width)
          s = dilate ? 0 : 1;  // outside the image counts as background
        else
          s = in.at(r, cc);
        v = dilate ? std::max(v, s) : std::min(v, s);
      }
      tmp.at(r, c) = v;
    }
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      uint8_t v = dilate ? 0 : 1;
      for (int dr = -radius; dr <= radius; ++dr) {
        int rr = r + dr;
        uint8_t s;
        if (rr < 0 || rr >= in.height)
          s = dilate ? 0 : 1;
        else
          s = tmp.at(rr, c);
        v = dilate ? std::max(v, s) : std::min(v, s);
      }
      out.at(r, c) = v;
    }
  return out;
}

}  // namespace

Mask refine_mask(const Mask& raw, int dilate_radius, int erode_radius) {
  NERFRM_CHECK(dilate_radius >= 0 && erode_radius >= 0, "radii must be non-negative");
  return morph(morph(raw, dilate_radius, true), erode_radius, false);
}

std::vector<Mask> masks_from_box(const SceneDataset& scene, const BBox3& box,
                                 const MaskGenOptions& opts) {
  box.validate();
  std::vector<Eigen::Vector3d> cloud = backproject_cloud(scene, opts.stride);
  std::vector<Eigen::Vector3d> object_points = box_filter(cloud, box);

  std::vector<Mask> masks(scene.frame_count());
  if (object_points.empty()) {
    std::cerr << "warning: no reconstructed points inside the box; emitting raw box silhouettes\n";
    for (int n = 0; n < scene.frame_count(); ++n) {
      Camera cam = scene.camera(n);
      Eigen::Matrix3d rot = cam.rotation();
      Eigen::Vector3d center = cam.center();
      Mask m(scene.height, scene.width);
      for (int r = 0; r < scene.height; ++r)
        for (int c = 0; c < scene.width; ++c) {
          double z_to_ray = 1.0;
          Eigen::Vector3d dir = rot * cam.pixel_dir_cam(r, c, &z_to_ray);
          auto hit = ray_obb(center, dir, box);
          if (!hit || hit->second <= 0.0) continue;
          double t_enter = std::max(0.0, hit->first);
          double z = t_enter / z_to_ray;
          double recorded = scene.frames[n].depth.at(r, c);
          if (recorded > 0.0 && z > recorded + opts.depth_tolerance) continue;
          m.at(r, c) = 1;
        }
      masks[n] = std::move(m);
    }
    return masks;
  }

  parallel_for(scene.frame_count(), 1, [&](int64_t lo, int64_t hi) {
    for (int64_t n = lo; n < hi; ++n) {
      Mask raw = project_mask(scene, static_cast<int>(n), object_points, opts.depth_tolerance);
      masks[n] = refine_mask(raw, opts.dilate_radius, opts.erode_radius);
    }
  });
  return masks;
}

}  // namespace nerfrm
