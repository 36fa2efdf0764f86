#pragma once

#include <string>

#include "nerfrm/image.hpp"
#include "nerfrm/scene.hpp"

namespace nerfrm {

struct InpaintRequest {
  ImageU8 image;  // H*W*3
  Mask mask;      // true = fill
};

// Depth maps travel through the 2D inpainter as images: clip to 5 m, map
// [0,5] linearly to [0,255] (round half up) and replicate to three channels.
constexpr double kDepthClipMeters = 5.0;
ImageU8 encode_depth(const DepthMap& depth);
DepthMap decode_depth(const ImageU8& img);  // channel mean back to meters

// Deterministic diffusion fill: masked values are repeatedly replaced by the
// mean of their available 4-neighbors (Jacobi sweeps, so the result does not
// depend on traversal order) until the largest per-channel change drops below
// 1e-4. Unmasked pixels pass through bit-exactly.
ImageU8 inpaint_builtin(const InpaintRequest& request);

// Subprocess protocol for an external 2D inpainter. The command template is
// expanded with {image} {mask} {out} (PNG paths in a scratch directory); the
// result is composited so that output = mask ? external : input.
struct ExternalInpainter {
  std::string command_template;
  double timeout_sec = 120.0;
};
ImageU8 inpaint_external(const InpaintRequest& request, const ExternalInpainter& tool);

// Fill inpaint_rgb / inpaint_depth of every masked frame, RGB and depth as
// two independent requests. Frames with empty masks receive verbatim copies.
struct InpaintSceneOptions {
  bool use_builtin = true;
  ExternalInpainter external;
  int parallelism = 2;
};
void inpaint_scene(SceneDataset& scene, const InpaintSceneOptions& opts);

}  // namespace nerfrm
