#include "nerfrm/scene.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace nerfrm {

namespace {

std::string frame_name(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", n);
  return buf;
}

void write_matrix_line(std::ostream& os, const double* data, int count) {
  char buf[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", data[i]);
    os << buf << (i + 1 < count ? " " : "\n");
  }
}

ordered_json box_to_json(const BBox3& box) {
  ordered_json j;
  j["center"] = {box.center.x(), box.center.y(), box.center.z()};
  j["half_extents"] = {box.half_extents.x(), box.half_extents.y(), box.half_extents.z()};
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = box.rotation(r, c);
  j["rotation"] = rot;
  return j;
}

BBox3 box_from_json(const ordered_json& j) {
  BBox3 box;
  for (int a = 0; a < 3; ++a) {
    box.center[a] = j.at("center").at(a).get<double>();
    box.half_extents[a] = j.at("half_extents").at(a).get<double>();
  }
  auto rot = j.at("rotation");
  NERFRM_CHECK(rot.size() == 9, "box rotation must have 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) box.rotation(r, c) = rot.at(r * 3 + c).get<double>();
  return box;
}

}  // namespace

Camera SceneDataset::camera(int frame) const {
  NERFRM_CHECK(frame >= 0 && frame < frame_count(), "camera index out of range");
  Camera cam;
  cam.intrinsics = intrinsics;
  cam.cam_to_world = frames[frame].pose;
  cam.width = width;
  cam.height = height;
  return cam;
}

std::vector<Camera> SceneDataset::cameras() const {
  std::vector<Camera> cams;
  cams.reserve(frames.size());
  for (int i = 0; i < frame_count(); ++i) cams.push_back(camera(i));
  return cams;
}

void SceneDataset::compute_bounds(int stride) {
  NERFRM_CHECK(!frames.empty(), "cannot compute bounds of an empty scene");
  Aabb raw;
  bool first = true;
  auto add = [&](const Eigen::Vector3d& p) {
    if (first) {
      raw.lo = raw.hi = p;
      first = false;
    } else {
      raw.expand(p);
    }
  };
  for (int n = 0; n < frame_count(); ++n) {
    const Frame& f = frames[n];
    Camera cam = camera(n);
    add(cam.center());
    Eigen::Matrix3d rot = cam.rotation();
    for (int r = 0; r < height; r += stride)
      for (int c = 0; c < width; c += stride) {
        double z = f.depth.at(r, c);
        if (z <= 0.0) continue;
        double z_to_ray = 1.0;
        Eigen::Vector3d dir = cam.pixel_dir_cam(r, c, &z_to_ray);
        add(cam.center() + rot * dir * (z * z_to_ray));
      }
  }
  // keep a usable volume even for degenerate inputs
  for (int a = 0; a < 3; ++a)
    if (raw.hi[a] - raw.lo[a] < 0.5) {
      raw.lo[a] -= 0.25;
      raw.hi[a] += 0.25;
    }
  bounds = raw.inflated(0.10);
}

std::vector<std::string> SceneDataset::validate(bool require_inpaint) const {
  std::vector<std::string> errors;
  auto err = [&](const std::string& m) { errors.push_back(m); };

  if (frames.empty()) err("scene has no frames");
  if (width <= 0 || height <= 0) err("invalid resolution");
  if (std::abs(intrinsics(0, 0) * intrinsics(1, 1)) < 1e-12) err("singular intrinsics");

  for (int n = 0; n < frame_count(); ++n) {
    const Frame& f = frames[n];
    std::string tag = "frame " + std::to_string(n) + ": ";
    if (f.rgb.height != height || f.rgb.width != width || f.rgb.channels != 3)
      err(tag + "rgb resolution mismatch");
    if (f.depth.height != height || f.depth.width != width) err(tag + "depth resolution mismatch");
    if (f.mask.height != height || f.mask.width != width) err(tag + "mask resolution mismatch");
    if (!is_rigid_pose(f.pose)) err(tag + "pose is not a rigid transform");
    if (f.inpaint_rgb &&
        (f.inpaint_rgb->height != height || f.inpaint_rgb->width != width))
      err(tag + "inpainted rgb resolution mismatch");
    if (f.inpaint_depth &&
        (f.inpaint_depth->height != height || f.inpaint_depth->width != width))
      err(tag + "inpainted depth resolution mismatch");
    if (require_inpaint && !f.mask.empty() && (!f.inpaint_rgb || !f.inpaint_depth))
      err(tag + "masked frame lacks inpainted rgb/depth");
  }
  if (box) {
    if ((box->half_extents.array() <= 0).any()) err("box half-extents must be positive");
    if ((box->rotation * box->rotation.transpose() - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff() > 1e-9)
      err("box rotation is not orthonormal");
  }
  for (int i : train_idx)
    if (i < 0 || i >= frame_count()) err("train split index out of range: " + std::to_string(i));
  for (int i : test_idx)
    if (i < 0 || i >= frame_count()) err("test split index out of range: " + std::to_string(i));
  return errors;
}

SceneDataset load_scene(const std::string& dir, const SceneLoadOptions& opts) {
  SceneDataset scene;
  fs::path root(dir);
  NERFRM_CHECK(fs::is_directory(root), "scene directory not found: " << dir);

  // frames are contiguous 00000..N-1 under rgb/
  int count = 0;
  while (fs::exists(root / "rgb" / (frame_name(count) + ".png"))) ++count;
  NERFRM_CHECK(count > 0, "no frames under " << dir << "/rgb");

  {
    std::ifstream is(root / "intrinsics.txt");
    NERFRM_CHECK(is.good(), "missing intrinsics.txt in " << dir);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) NERFRM_CHECK(static_cast<bool>(is >> scene.intrinsics(r, c)),
                                               "malformed intrinsics.txt");
  }

  std::vector<Eigen::Matrix4d> poses;
  {
    std::ifstream is(root / "poses.txt");
    NERFRM_CHECK(is.good(), "missing poses.txt in " << dir);
    for (int n = 0; n < count; ++n) {
      Eigen::Matrix4d m;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
          NERFRM_CHECK(static_cast<bool>(is >> m(r, c)), "poses.txt truncated at frame " << n);
      poses.push_back(m);
    }
  }

  std::vector<std::string> missing;
  for (int n = 0; n < count; ++n) {
    Frame f;
    f.rgb = load_png((root / "rgb" / (frame_name(n) + ".png")).string());
    if (n == 0) {
      scene.width = f.rgb.width;
      scene.height = f.rgb.height;
    }
    fs::path depth_pfm = root / "depth" / (frame_name(n) + ".pfm");
    fs::path depth_png = root / "depth" / (frame_name(n) + ".png");
    if (fs::exists(depth_pfm))
      f.depth = load_depth_pfm(depth_pfm.string());
    else if (fs::exists(depth_png))
      f.depth = load_depth_png16(depth_png.string());
    else
      missing.push_back("frame " + std::to_string(n) + ": missing depth map");

    fs::path mask_path = root / "mask" / (frame_name(n) + ".png");
    if (fs::exists(mask_path))
      f.mask = load_mask_png(mask_path.string());
    else if (opts.allow_missing_masks)
      f.mask = Mask(f.rgb.height, f.rgb.width);
    else
      missing.push_back("frame " + std::to_string(n) + ": missing mask");

    if (opts.load_inpaint) {
      fs::path irgb = root / "inpaint_rgb" / (frame_name(n) + ".png");
      if (fs::exists(irgb)) f.inpaint_rgb = load_png(irgb.string());
      fs::path idepth_pfm = root / "inpaint_depth" / (frame_name(n) + ".pfm");
      fs::path idepth_png = root / "inpaint_depth" / (frame_name(n) + ".png");
      if (fs::exists(idepth_pfm))
        f.inpaint_depth = load_depth_pfm(idepth_pfm.string());
      else if (fs::exists(idepth_png))
        f.inpaint_depth = load_depth_png16(idepth_png.string());
    }
    f.pose = poses[n];
    scene.frames.push_back(std::move(f));
  }

  if (fs::exists(root / "box.json")) {
    std::ifstream is(root / "box.json");
    ordered_json j;
    is >> j;
    scene.box = box_from_json(j);
  }
  {
    fs::path split = root / "split.json";
    NERFRM_CHECK(fs::exists(split), "missing split.json in " << dir);
    std::ifstream is(split);
    ordered_json j;
    is >> j;
    scene.train_idx = j.at("train").get<std::vector<int>>();
    scene.test_idx = j.at("test").get<std::vector<int>>();
  }

  std::vector<std::string> errors = scene.validate(opts.require_inpaint);
  errors.insert(errors.begin(), missing.begin(), missing.end());
  if (!errors.empty()) {
    std::ostringstream os;
    os << "scene validation failed for " << dir << ":";
    for (const auto& e : errors) os << "\n  - " << e;
    throw std::runtime_error(os.str());
  }
  scene.compute_bounds();
  return scene;
}

void save_scene(const SceneDataset& scene, const std::string& dir,
                const std::string& depth_format) {
  NERFRM_CHECK(depth_format == "pfm" || depth_format == "png16",
               "depth format must be pfm or png16");
  fs::path root(dir);
  fs::create_directories(root / "rgb");
  fs::create_directories(root / "depth");
  fs::create_directories(root / "mask");
  bool any_inpaint = false;
  for (const Frame& f : scene.frames)
    if (f.inpaint_rgb || f.inpaint_depth) any_inpaint = true;
  if (any_inpaint) {
    fs::create_directories(root / "inpaint_rgb");
    fs::create_directories(root / "inpaint_depth");
  }

  auto write_depth = [&](const DepthMap& d, const fs::path& base) {
    if (depth_format == "pfm")
      save_depth_pfm(d, (base.string() + ".pfm"));
    else
      save_depth_png16(d, (base.string() + ".png"));
  };

  for (int n = 0; n < scene.frame_count(); ++n) {
    const Frame& f = scene.frames[n];
    save_png(f.rgb, (root / "rgb" / (frame_name(n) + ".png")).string());
    write_depth(f.depth, root / "depth" / frame_name(n));
    save_mask_png(f.mask, (root / "mask" / (frame_name(n) + ".png")).string());
    if (f.inpaint_rgb)
      save_png(*f.inpaint_rgb, (root / "inpaint_rgb" / (frame_name(n) + ".png")).string());
    if (f.inpaint_depth) write_depth(*f.inpaint_depth, root / "inpaint_depth" / frame_name(n));
  }

  {
    std::ofstream os(root / "poses.txt");
    for (const Frame& f : scene.frames) {
      double data[16];
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) data[r * 4 + c] = f.pose(r, c);
      write_matrix_line(os, data, 16);
    }
  }
  {
    std::ofstream os(root / "intrinsics.txt");
    double data[9];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) data[r * 3 + c] = scene.intrinsics(r, c);
    write_matrix_line(os, data, 9);
  }
  if (scene.box) {
    std::ofstream os(root / "box.json");
    os << box_to_json(*scene.box).dump(2) << "\n";
  }
  {
    ordered_json j;
    j["train"] = scene.train_idx;
    j["test"] = scene.test_idx;
    std::ofstream os(root / "split.json");
    os << j.dump(2) << "\n";
  }
}

BBox3 load_box_json(const std::string& path) {
  std::ifstream is(path);
  NERFRM_CHECK(is.good(), "cannot read box annotation: " << path);
  ordered_json j;
  is >> j;
  BBox3 box = box_from_json(j);
  box.validate();
  return box;
}

void save_box_json(const BBox3& box, const std::string& path) {
  std::ofstream os(path);
  NERFRM_CHECK(os.good(), "cannot write box annotation: " << path);
  os << box_to_json(box).dump(2) << "\n";
}

std::vector<int> ablation_subset(int frame_count, const std::string& mode) {
  NERFRM_CHECK(frame_count > 0, "empty dataset");
  std::vector<int> out;
  if (mode == "all") {
    for (int i = 0; i < frame_count; ++i) out.push_back(i);
  } else if (mode == "tenth") {
    for (int i = 0; i < frame_count; i += 10) out.push_back(i);
  } else if (mode == "fiftieth") {
    for (int i = 0; i < frame_count; i += 50) out.push_back(i);
  } else if (mode == "single") {
    out.push_back(frame_count / 2);
  } else {
    NERFRM_CHECK(false, "unknown view subset mode: " << mode);
  }
  return out;
}

}  // namespace nerfrm
