#include "nerfrm/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "nerfrm/inpaint.hpp"

namespace nerfrm {

namespace {

// smooth two-tone sinusoidal albedo for a surface point
Eigen::Vector3d face_texture(const Eigen::Vector3d& base, const Eigen::Vector3d& tint_a,
                             const Eigen::Vector3d& tint_b, double fa, double fb, double a,
                             double b) {
  Eigen::Vector3d c = base + tint_a * (0.5 * std::sin(2.0 * M_PI * fa * a)) +
                      tint_b * (0.5 * std::sin(2.0 * M_PI * fb * b + 1.3));
  return c.cwiseMax(0.03).cwiseMin(0.97);
}

// face index: axis*2 + (hit on the max side ? 1 : 0)
int face_of_local(const Eigen::Vector3d& local, const Eigen::Vector3d& half) {
  int best_axis = 0;
  double best_gap = 1e300;
  for (int a = 0; a < 3; ++a) {
    double gap = half[a] - std::abs(local[a]);
    if (gap < best_gap) {
      best_gap = gap;
      best_axis = a;
    }
  }
  return best_axis * 2 + (local[best_axis] > 0 ? 1 : 0);
}

}  // namespace

SyntheticWorld make_world(const SyntheticSpec& spec) {
  SyntheticWorld world;
  world.room = Aabb{Eigen::Vector3d::Zero(), spec.room_size};
  world.object.center = spec.object_center;
  world.object.half_extents = spec.object_half;
  double yaw = spec.object_yaw_deg * M_PI / 180.0;
  world.object.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  world.object.validate();
  return world;
}

std::optional<SyntheticWorld::Hit> SyntheticWorld::trace(const Eigen::Vector3d& origin,
                                                         const Eigen::Vector3d& dir,
                                                         bool with_object) const {
  auto room_hit = ray_aabb(origin, dir, room);
  if (!room_hit || room_hit->second <= 0.0) return std::nullopt;
  Hit hit;
  hit.t = room_hit->second;  // camera sits inside the room; exit face is the surface
  hit.on_object = false;

  if (with_object) {
    auto obj_hit = ray_obb(origin, dir, object);
    if (obj_hit && obj_hit->first > 0.0 && obj_hit->first < hit.t) {
      hit.t = obj_hit->first;
      hit.on_object = true;
    }
  }

  hit.point = origin + hit.t * dir;
  if (hit.on_object) {
    Eigen::Vector3d local = object.rotation.transpose() * (hit.point - object.center);
    hit.face = face_of_local(local, object.half_extents);
  } else {
    Eigen::Vector3d centered = hit.point - 0.5 * (room.lo + room.hi);
    hit.face = face_of_local(centered, 0.5 * (room.hi - room.lo));
  }
  return hit;
}

Eigen::Vector3d SyntheticWorld::shade(const Hit& hit) const {
  if (hit.on_object) {
    Eigen::Vector3d local = object.rotation.transpose() * (hit.point - object.center);
    int axis = hit.face / 2;
    double a = local[(axis + 1) % 3], b = local[(axis + 2) % 3];
    static const Eigen::Vector3d bases[6] = {
        {0.78, 0.22, 0.16}, {0.80, 0.26, 0.14}, {0.76, 0.20, 0.20},
        {0.82, 0.24, 0.12}, {0.74, 0.22, 0.18}, {0.80, 0.20, 0.16},
    };
    return face_texture(bases[hit.face], Eigen::Vector3d(0.10, 0.05, 0.02),
                        Eigen::Vector3d(0.05, 0.08, 0.04), 1.5, 1.8, a, b);
  }
  int axis = hit.face / 2;
  double a = hit.point[(axis + 1) % 3], b = hit.point[(axis + 2) % 3];
  static const Eigen::Vector3d bases[6] = {
      {0.30, 0.42, 0.55},  // -x wall
      {0.52, 0.46, 0.30},  // +x wall
      {0.34, 0.52, 0.38},  // -y wall
      {0.50, 0.36, 0.44},  // +y wall
      {0.55, 0.46, 0.34},  // floor
      {0.68, 0.68, 0.72},  // ceiling
  };
  static const double freq_a[6] = {0.55, 0.70, 0.60, 0.65, 0.75, 0.40};
  static const double freq_b[6] = {0.80, 0.50, 0.85, 0.55, 0.60, 0.45};
  return face_texture(bases[hit.face], Eigen::Vector3d(0.16, 0.10, 0.06),
                      Eigen::Vector3d(0.06, 0.12, 0.10), freq_a[hit.face], freq_b[hit.face], a, b);
}

SyntheticScenes make_synthetic(const SyntheticSpec& spec) {
  NERFRM_CHECK(spec.width > 0 && spec.height > 0 && spec.frame_count > 0, "degenerate spec");
  NERFRM_CHECK(spec.inpaint_mode == "none" || spec.inpaint_mode == "builtin" ||
                   spec.inpaint_mode == "perfect",
               "inpaint_mode must be none|builtin|perfect");
  NERFRM_CHECK(spec.corrupt_fraction >= 0.0 && spec.corrupt_fraction <= 1.0,
               "corrupt fraction out of range");
  NERFRM_CHECK(spec.corrupt_fraction == 0.0 || spec.inpaint_mode != "none",
               "corruption requires inpainted frames");

  SyntheticWorld world = make_world(spec);

  SyntheticScenes scenes;
  for (SceneDataset* scene : {&scenes.with_object, &scenes.without_object}) {
    scene->width = spec.width;
    scene->height = spec.height;
    double f = 0.85 * spec.width;
    scene->intrinsics << f, 0, spec.width / 2.0, 0, f, spec.height / 2.0, 0, 0, 1;
  }
  scenes.with_object.box = world.object;

  const Eigen::Vector3d orbit_center(spec.object_center.x(), spec.object_center.y(),
                                     spec.orbit_height);
  const Eigen::Vector3d target(spec.object_center.x(), spec.object_center.y(),
                               spec.object_center.z() + 0.05);

  for (int n = 0; n < spec.frame_count; ++n) {
    double angle = 2.0 * M_PI * n / spec.frame_count;
    Eigen::Vector3d eye = orbit_center + Eigen::Vector3d(spec.orbit_radius * std::cos(angle),
                                                         spec.orbit_radius * std::sin(angle), 0.0);
    NERFRM_CHECK(world.room.contains(eye), "camera " << n << " escapes the room");
    NERFRM_CHECK(!world.object.contains(eye), "camera " << n << " is inside the object");
    Eigen::Matrix4d pose = look_at(eye, target);

    Frame with, without;
    with.pose = without.pose = pose;
    with.rgb = Image(spec.height, spec.width, 3);
    without.rgb = Image(spec.height, spec.width, 3);
    with.depth = DepthMap(spec.height, spec.width);
    without.depth = DepthMap(spec.height, spec.width);
    with.mask = Mask(spec.height, spec.width);
    without.mask = Mask(spec.height, spec.width);

    Camera cam;
    cam.intrinsics = scenes.with_object.intrinsics;
    cam.cam_to_world = pose;
    cam.width = spec.width;
    cam.height = spec.height;
    Eigen::Matrix3d rot = cam.rotation();

    for (int r = 0; r < spec.height; ++r)
      for (int c = 0; c < spec.width; ++c) {
        double z_to_ray = 1.0;
        Eigen::Vector3d dir = rot * cam.pixel_dir_cam(r, c, &z_to_ray);
        auto hit_with = world.trace(eye, dir, true);
        auto hit_without = world.trace(eye, dir, false);
        NERFRM_CHECK(hit_with && hit_without, "ray escaped the room at frame " << n);
        Eigen::Vector3d cw = world.shade(*hit_with);
        Eigen::Vector3d co = world.shade(*hit_without);
        for (int ch = 0; ch < 3; ++ch) {
          with.rgb.at(r, c, ch) = cw[ch];
          without.rgb.at(r, c, ch) = co[ch];
        }
        with.depth.at(r, c) = hit_with->t / z_to_ray;  // ray distance -> z-depth
        without.depth.at(r, c) = hit_without->t / z_to_ray;
        with.mask.at(r, c) = hit_with->on_object ? 1 : 0;
      }

    scenes.with_object.frames.push_back(std::move(with));
    scenes.without_object.frames.push_back(std::move(without));
  }

  for (SceneDataset* scene : {&scenes.with_object, &scenes.without_object}) {
    for (int n = 0; n < spec.frame_count; ++n) {
      if (n % 8 == 0)
        scene->test_idx.push_back(n);
      else
        scene->train_idx.push_back(n);
    }
    scene->compute_bounds();
  }

  if (spec.inpaint_mode == "perfect") {
    for (int n = 0; n < spec.frame_count; ++n) {
      Frame& f = scenes.with_object.frames[n];
      const Frame& gt = scenes.without_object.frames[n];
      f.inpaint_rgb = f.rgb;
      f.inpaint_depth = f.depth;
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
          if (f.mask.at(r, c)) {
            for (int ch = 0; ch < 3; ++ch) f.inpaint_rgb->at(r, c, ch) = gt.rgb.at(r, c, ch);
            f.inpaint_depth->at(r, c) = gt.depth.at(r, c);
          }
    }
  } else if (spec.inpaint_mode == "builtin") {
    for (int n = 0; n < spec.frame_count; ++n) {
      Frame& f = scenes.with_object.frames[n];
      InpaintRequest rgb_req{u8_from_image(f.rgb), f.mask};
      InpaintRequest depth_req{encode_depth(f.depth), f.mask};
      ImageU8 rgb_fill = inpaint_builtin(rgb_req);
      DepthMap depth_fill = decode_depth(inpaint_builtin(depth_req));
      // composite in native precision: exact inputs outside the mask
      f.inpaint_rgb = f.rgb;
      f.inpaint_depth = f.depth;
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
          if (f.mask.at(r, c)) {
            for (int ch = 0; ch < 3; ++ch)
              f.inpaint_rgb->at(r, c, ch) = rgb_fill.at(r, c, ch) / 255.0;
            f.inpaint_depth->at(r, c) = depth_fill.at(r, c);
          }
    }
  }

  if (spec.corrupt_fraction > 0.0) {
    int count = static_cast<int>(std::lround(spec.corrupt_fraction * spec.frame_count));
    std::vector<int> candidates = scenes.with_object.train_idx;
    NERFRM_CHECK(count <= static_cast<int>(candidates.size()),
                 "corruption count exceeds available train frames");
    Rng rng = Rng::keyed(spec.seed, kRngSynthetic, 0xC0);
    for (size_t i = candidates.size(); i > 1; --i)
      std::swap(candidates[i - 1], candidates[rng.uniform_int(i)]);
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());
    scenes.corrupted_frames = candidates;

    for (int n : candidates) {
      Frame& f = scenes.with_object.frames[n];
      NERFRM_CHECK(f.inpaint_rgb && f.inpaint_depth, "corruption requires inpainted frame " << n);
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c)
          if (f.mask.at(r, c)) {
            for (int ch = 0; ch < 3; ++ch) f.inpaint_rgb->at(r, c, ch) = spec.corrupt_color[ch];
            f.inpaint_depth->at(r, c) += spec.corrupt_depth_bias;
          }
    }
  }

  return scenes;
}

}  // namespace nerfrm
