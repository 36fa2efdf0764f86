#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nerfrm/inpaint.hpp"
#include "nerfrm/maskgen.hpp"
#include "nerfrm/metrics.hpp"
#include "nerfrm/render.hpp"
#include "nerfrm/synthetic.hpp"
#include "nerfrm/trainer.hpp"

namespace fs = std::filesystem;
using namespace nerfrm;

namespace {

std::string frame_name(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", n);
  return buf;
}

std::vector<int> select_frames(const SceneDataset& scene, const std::string& which) {
  if (which == "test") return scene.test_idx;
  if (which == "train") return scene.train_idx;
  if (which == "all") {
    std::vector<int> all(scene.frame_count());
    for (int i = 0; i < scene.frame_count(); ++i) all[i] = i;
    return all;
  }
  NERFRM_CHECK(false, "--frames must be test, train or all");
}

int cmd_make_synthetic(const SyntheticSpec& spec, const std::string& out,
                       const std::string& depth_format) {
  SyntheticScenes scenes = make_synthetic(spec);
  save_scene(scenes.with_object, (fs::path(out) / "with_object").string(), depth_format);
  save_scene(scenes.without_object, (fs::path(out) / "without_object").string(), depth_format);
  if (!scenes.corrupted_frames.empty()) {
    nlohmann::ordered_json j;
    j["corrupted_frames"] = scenes.corrupted_frames;
    j["corrupt_color"] = {spec.corrupt_color.x(), spec.corrupt_color.y(), spec.corrupt_color.z()};
    j["corrupt_depth_bias"] = spec.corrupt_depth_bias;
    std::ofstream os(fs::path(out) / "with_object" / "corruption.json");
    os << j.dump(2) << "\n";
  }
  std::cout << "wrote " << out << "/with_object and " << out << "/without_object ("
            << spec.frame_count << " frames, " << spec.width << "x" << spec.height << ")\n";
  if (!scenes.corrupted_frames.empty()) {
    std::cout << "corrupted inpaintings of frames:";
    for (int n : scenes.corrupted_frames) std::cout << ' ' << n;
    std::cout << "\n";
  }
  return 0;
}

int cmd_refine_masks(const std::string& scene_dir, const std::string& box_path,
                     const std::string& out, const MaskGenOptions& opts) {
  SceneDataset scene =
      load_scene(scene_dir, {.load_inpaint = false, .allow_missing_masks = true});
  BBox3 box = box_path.empty() ? *scene.box : load_box_json(box_path);
  std::vector<Mask> masks = masks_from_box(scene, box, opts);
  fs::create_directories(out);
  for (int n = 0; n < scene.frame_count(); ++n)
    save_mask_png(masks[n], (fs::path(out) / (frame_name(n) + ".png")).string());
  std::cout << "wrote " << masks.size() << " masks to " << out << "\n";
  return 0;
}

int cmd_inpaint(const std::string& scene_dir, bool builtin, const std::string& cmd_template,
                double timeout, int parallel) {
  NERFRM_CHECK(builtin || !cmd_template.empty(), "choose --builtin or provide --cmd");
  SceneDataset scene = load_scene(scene_dir, {.load_inpaint = false});
  InpaintSceneOptions opts;
  opts.use_builtin = builtin;
  opts.external.command_template = cmd_template;
  opts.external.timeout_sec = timeout;
  opts.parallelism = parallel;
  inpaint_scene(scene, opts);

  fs::path root(scene_dir);
  fs::create_directories(root / "inpaint_rgb");
  fs::create_directories(root / "inpaint_depth");
  for (int n = 0; n < scene.frame_count(); ++n) {
    const Frame& f = scene.frames[n];
    save_png(*f.inpaint_rgb, (root / "inpaint_rgb" / (frame_name(n) + ".png")).string());
    save_depth_pfm(*f.inpaint_depth, (root / "inpaint_depth" / (frame_name(n) + ".pfm")).string());
  }
  std::cout << "inpainted " << scene.frame_count() << " frames in " << scene_dir << "\n";
  return 0;
}

int cmd_inpaint_one(const std::string& image, const std::string& mask, const std::string& out) {
  InpaintRequest req{load_png_u8(image), load_mask_png(mask)};
  save_png_u8(inpaint_builtin(req), out);
  return 0;
}

int cmd_train(const std::string& scene_dir, const std::string& config_path,
              const std::string& out, const std::vector<std::string>& overrides) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  for (const std::string& kv : overrides) {
    size_t eq = kv.find('=');
    NERFRM_CHECK(eq != std::string::npos, "--set expects key=value, got: " << kv);
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  SceneDataset scene = load_scene(scene_dir);
  TrainResult result = run_training(cfg, scene, out);
  std::cout << "trained; final active set has " << result.final_active.size()
            << " frames; checkpoints in " << out << "\n";
  return 0;
}

int cmd_render(const std::string& scene_dir, const std::string& checkpoint,
               const std::string& out, const std::string& which, const std::string& head,
               int samples, uint64_t seed, const std::string& depth_format) {
  SceneDataset scene = load_scene(scene_dir, {.load_inpaint = false});
  FieldParams params = load_checkpoint(checkpoint);
  const Aabb bounds{params.scene_lo, params.scene_hi};
  ColorHead color_head = head == "view" ? ColorHead::kViewDep : ColorHead::kMv;
  fs::create_directories(out);
  for (int n : select_frames(scene, which)) {
    RenderedFrame frame =
        render_frame(params, scene.camera(n), samples, seed, n, color_head, bounds);
    Image rgb(scene.height, scene.width, 3);
    rgb.v = frame.rgb;
    DepthMap depth(scene.height, scene.width);
    depth.v = frame.depth;
    save_png(rgb, (fs::path(out) / ("rgb_" + frame_name(n) + ".png")).string());
    if (depth_format == "pfm")
      save_depth_pfm(depth, (fs::path(out) / ("depth_" + frame_name(n) + ".pfm")).string());
    else
      save_depth_png16(depth, (fs::path(out) / ("depth_" + frame_name(n) + ".png")).string());
  }
  std::cout << "rendered frames to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& scene_dir, const std::string& gt_dir,
             const std::string& checkpoint, const std::string& out, const std::string& which,
             int samples, uint64_t seed) {
  SceneDataset scene = load_scene(scene_dir, {.load_inpaint = false});
  SceneDataset gt = load_scene(gt_dir, {.load_inpaint = false});
  FieldParams params = load_checkpoint(checkpoint);
  EvalReport report =
      evaluate(params, scene, gt, select_frames(scene, which), samples, seed);
  fs::create_directories(out);
  write_eval_report(report, (fs::path(out) / "report.json").string(),
                    (fs::path(out) / "report.csv").string());
  std::printf("masked metrics over %zu frames: PSNR %.3f dB  SSIM %.4f  depth L1 %.4f m  L2 %.4f m^2\n",
              report.frames.size(), report.psnr, report.ssim, report.depth_l1, report.depth_l2);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiance-field object removal: train on posed RGB-D frames with per-frame object "
               "masks, supervise masked regions with 2D-inpainted targets, and prune inconsistent "
               "inpainted views by learned per-image confidence."};
  app.require_subcommand(1);

  // make-synthetic
  SyntheticSpec spec;
  std::string out_dir, depth_format = "pfm";
  auto* mk = app.add_subcommand("make-synthetic",
                                "Generate a paired synthetic RGB-D scene (with/without object)");
  mk->add_option("--out", out_dir, "output directory")->required();
  mk->add_option("--width", spec.width);
  mk->add_option("--height", spec.height);
  mk->add_option("--frames", spec.frame_count);
  mk->add_option("--seed", spec.seed);
  mk->add_option("--inpaint", spec.inpaint_mode, "none | builtin | perfect");
  mk->add_option("--corrupt-fraction", spec.corrupt_fraction,
                 "fraction of frames whose inpainted regions get corrupted");
  mk->add_option("--corrupt-depth-bias", spec.corrupt_depth_bias);
  mk->add_option("--depth-format", depth_format, "pfm | png16");

  // refine-masks
  std::string scene_dir, box_path, mask_out;
  MaskGenOptions mopts;
  auto* rm = app.add_subcommand("refine-masks",
                                "Project an annotated 3D box into every frame with occlusion "
                                "checks and morphological cleanup");
  rm->add_option("--scene", scene_dir, "scene directory")->required();
  rm->add_option("--box", box_path, "box annotation JSON (defaults to the scene's box.json)");
  rm->add_option("--out", mask_out, "output mask directory")->required();
  rm->add_option("--stride", mopts.stride);
  rm->add_option("--depth-tolerance", mopts.depth_tolerance);
  rm->add_option("--dilate", mopts.dilate_radius);
  rm->add_option("--erode", mopts.erode_radius);

  // inpaint
  bool builtin = false;
  std::string cmd_template;
  double timeout = 120.0;
  int parallel = 2;
  auto* ip = app.add_subcommand("inpaint", "Fill masked regions of RGB and depth per frame");
  ip->add_option("--scene", scene_dir, "scene directory")->required();
  ip->add_flag("--builtin", builtin, "use the built-in diffusion inpainter");
  ip->add_option("--cmd", cmd_template, "external command template with {image} {mask} {out}");
  ip->add_option("--timeout", timeout, "seconds per external invocation");
  ip->add_option("--parallel", parallel, "worker count");

  // inpaint-one
  std::string one_image, one_mask, one_out;
  auto* io = app.add_subcommand("inpaint-one", "Built-in inpainter on a single image");
  io->add_option("--image", one_image)->required();
  io->add_option("--mask", one_mask)->required();
  io->add_option("--out", one_out)->required();

  // train
  std::string config_path, train_out;
  std::vector<std::string> overrides;
  auto* tr = app.add_subcommand("train", "Iterative confidence-based training");
  tr->add_option("--scene", scene_dir, "scene directory")->required();
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--out", train_out, "output directory")->required();
  tr->add_option("--set", overrides, "config override key=value (repeatable)");

  // render
  std::string checkpoint, which = "test", head = "mv";
  int samples = 64;
  uint64_t seed = 1;
  auto* rd = app.add_subcommand("render", "Render novel views from a checkpoint");
  rd->add_option("--scene", scene_dir)->required();
  rd->add_option("--checkpoint", checkpoint)->required();
  rd->add_option("--out", out_dir)->required();
  rd->add_option("--frames", which, "test | train | all");
  rd->add_option("--head", head, "mv (consistent head) | view (view-dependent)");
  rd->add_option("--samples", samples, "samples per ray");
  rd->add_option("--seed", seed);
  rd->add_option("--depth-format", depth_format, "pfm | png16");

  // eval
  std::string gt_dir, eval_out;
  auto* ev = app.add_subcommand("eval", "Masked metrics of rendered views against ground truth");
  ev->add_option("--scene", scene_dir, "scene with masks/poses")->required();
  ev->add_option("--gt", gt_dir, "object-free ground-truth scene")->required();
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--out", eval_out)->required();
  ev->add_option("--frames", which, "test | train | all");
  ev->add_option("--samples", samples, "samples per ray");
  ev->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (mk->parsed()) return cmd_make_synthetic(spec, out_dir, depth_format);
    if (rm->parsed()) return cmd_refine_masks(scene_dir, box_path, mask_out, mopts);
    if (ip->parsed()) return cmd_inpaint(scene_dir, builtin, cmd_template, timeout, parallel);
    if (io->parsed()) return cmd_inpaint_one(one_image, one_mask, one_out);
    if (tr->parsed()) return cmd_train(scene_dir, config_path, train_out, overrides);
    if (rd->parsed())
      return cmd_render(scene_dir, checkpoint, out_dir, which, head, samples, seed, depth_format);
    if (ev->parsed()) return cmd_eval(scene_dir, gt_dir, checkpoint, eval_out, which, samples, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
