#pragma once

#include <vector>

#include "nerfrm/scene.hpp"

namespace nerfrm {

struct MaskGenOptions {
  int stride = 2;                // depth-pixel subsampling for the point cloud
  double depth_tolerance = 0.05; // meters; visibility slack for the occlusion test
  int dilate_radius = 2;         // morphological closing radii (pixels)
  int erode_radius = 2;
};

// World-space points from every valid depth pixel (subsampled by stride).
std::vector<Eigen::Vector3d> backproject_cloud(const SceneDataset& scene, int stride);

// Points inside the oriented box.
std::vector<Eigen::Vector3d> box_filter(const std::vector<Eigen::Vector3d>& cloud,
                                        const BBox3& box);

// Splat visible points into the frame: a pixel is set iff a point projects
// there in bounds and its camera depth is at most the recorded depth plus the
// tolerance. Pixels with invalid recorded depth count as unoccluded.
Mask project_mask(const SceneDataset& scene, int frame,
                  const std::vector<Eigen::Vector3d>& points, double depth_tolerance);

// Morphological closing (dilate then erode) with square structuring elements.
Mask refine_mask(const Mask& raw, int dilate_radius, int erode_radius);

// Full pipeline: backproject, keep in-box points, project per frame with the
// occlusion check, close. Falls back to the raw box silhouette (with a
// warning) when no cloud point lands inside the box.
std::vector<Mask> masks_from_box(const SceneDataset& scene, const BBox3& box,
                                 const MaskGenOptions& opts = {});

}  // namespace nerfrm
