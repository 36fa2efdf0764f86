#pragma once

#include "nerfrm/scene.hpp"

namespace nerfrm {

// Procedural room-with-object scene rendered analytically (ray/plane and
// ray/box intersections), giving exact images, depths and masks.
struct SyntheticSpec {
  int width = 64;
  int height = 48;
  int frame_count = 30;
  uint64_t seed = 1;

  Eigen::Vector3d room_size = Eigen::Vector3d(4.0, 3.0, 2.5);
  Eigen::Vector3d object_center = Eigen::Vector3d(2.0, 1.5, 0.25);
  Eigen::Vector3d object_half = Eigen::Vector3d(0.28, 0.22, 0.25);
  double object_yaw_deg = 30.0;

  double orbit_radius = 1.3;
  double orbit_height = 1.15;

  // none: leave inpaint dirs empty. builtin: run the built-in diffusion
  // inpainter. perfect: copy the object-free ground truth into the masked
  // region (an oracle inpainter).
  std::string inpaint_mode = "none";

  // fraction (of the full frame count) of train frames whose inpainted masked
  // regions are replaced by a constant wrong color and biased depth
  double corrupt_fraction = 0.0;
  Eigen::Vector3d corrupt_color = Eigen::Vector3d(0.85, 0.1, 0.8);
  double corrupt_depth_bias = 1.0;
};

struct SyntheticWorld {
  Aabb room;
  BBox3 object;

  struct Hit {
    double t = 0.0;       // distance along the unit ray
    bool on_object = false;
    int face = 0;         // 0..5: -x,+x,-y,+y,-z,+z of the surface's box
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
  };

  // nearest surface seen from inside the room; with_object toggles the box
  std::optional<Hit> trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                           bool with_object) const;
  Eigen::Vector3d shade(const Hit& hit) const;
};

SyntheticWorld make_world(const SyntheticSpec& spec);

struct SyntheticScenes {
  SceneDataset with_object;     // masks + (optionally) inpainted frames
  SceneDataset without_object;  // object-free ground truth, empty masks
  std::vector<int> corrupted_frames;
};

SyntheticScenes make_synthetic(const SyntheticSpec& spec);

}  // namespace nerfrm
