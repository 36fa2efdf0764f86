#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nerfrm/geometry.hpp"
#include "nerfrm/image.hpp"

namespace nerfrm {

// One posed RGB-D observation with its object mask and, once the 2D
// inpainting step has run, the inpainted counterparts.
struct Frame {
  Image rgb;                              // [0,1]
  DepthMap depth;                         // z-depth meters, 0 = invalid
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();  // camera-to-world
  Mask mask;                              // true = pixel to inpaint
  std::optional<Image> inpaint_rgb;
  std::optional<DepthMap> inpaint_depth;
};

struct SceneDataset {
  int width = 0, height = 0;
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  std::vector<Frame> frames;
  std::optional<BBox3> box;              // annotated 3D box around the object
  std::vector<int> train_idx, test_idx;
  Aabb bounds;                           // scene AABB inflated by 10%

  int frame_count() const { return static_cast<int>(frames.size()); }
  Camera camera(int frame) const;
  std::vector<Camera> cameras() const;

  // AABB of camera centers and back-projected depth, inflated by 10%.
  void compute_bounds(int stride = 4);

  // Returns every inconsistency found (empty when valid).
  std::vector<std::string> validate(bool require_inpaint = false) const;
};

struct SceneLoadOptions {
  bool require_inpaint = false;
  bool load_inpaint = true;
  bool allow_missing_masks = false;  // refine-masks runs before masks exist
};

// Directory layout: rgb/%05d.png, depth/%05d.pfm (or 16-bit .png in mm),
// mask/%05d.png, optional inpaint_rgb/ + inpaint_depth/, poses.txt (one
// row-major 4x4 per line), intrinsics.txt (row-major 3x3), box.json,
// split.json.
SceneDataset load_scene(const std::string& dir, const SceneLoadOptions& opts = {});
void save_scene(const SceneDataset& scene, const std::string& dir,
                const std::string& depth_format = "pfm");

// Fixed view subsets for the selection-baseline runs: every frame, every
// 10th, every 50th (phase 0), or the single middle frame.
std::vector<int> ablation_subset(int frame_count, const std::string& mode);

BBox3 load_box_json(const std::string& path);
void save_box_json(const BBox3& box, const std::string& path);

}  // namespace nerfrm
