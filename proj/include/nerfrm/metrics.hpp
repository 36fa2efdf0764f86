#pragma once

#include <string>
#include <vector>

#include "nerfrm/field.hpp"
#include "nerfrm/image.hpp"
#include "nerfrm/scene.hpp"

namespace nerfrm {

// Peak-1 PSNR over masked pixels and channels; identical content is capped at
// 99 dB. Throws on an empty mask (callers skip those frames).
double masked_psnr(const Image& pred, const Image& gt, const Mask& mask);

// SSIM with the reference 11x11 Gaussian window (sigma 1.5, C1=0.01^2,
// C2=0.03^2), luminance taken as the RGB mean, averaged over window centers
// inside the mask. Window statistics are renormalized over in-mask pixels so
// the metric never reads anything outside the masked region.
double masked_ssim(const Image& pred, const Image& gt, const Mask& mask);

// Mean |error| and mean squared error in meters over masked pixels with valid
// ground truth.
std::pair<double, double> masked_depth_error(const DepthMap& pred, const DepthMap& gt,
                                             const Mask& mask);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0, ssim = 0, depth_l1 = 0, depth_l2 = 0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double psnr = 0, ssim = 0, depth_l1 = 0, depth_l2 = 0;  // frame means
  std::vector<int> skipped;  // frames with empty masks
};

// Render the selected frames of `scene` through the MV head and score them
// against the object-free ground truth inside the scene's masks.
EvalReport evaluate(FieldParams& params, const SceneDataset& scene, const SceneDataset& gt,
                    const std::vector<int>& frame_sel, int samples_per_ray, uint64_t seed);

void write_eval_report(const EvalReport& report, const std::string& json_path,
                       const std::string& csv_path);

}  // namespace nerfrm
