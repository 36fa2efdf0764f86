#pragma once

#include <vector>

#include "nerfrm/render.hpp"

namespace nerfrm {

struct LossWeights {
  double rgb = 1.0;
  double depth = 1.0;
  double reg = 0.005;
  double dist = 1.0;
};

// One training batch of supervised pixels. Masked pixels carry inpainted
// targets and must belong to a frame of the active set; unmasked pixels carry
// the original sensor targets.
struct PixelBatch {
  std::vector<PixelCoord> pixels;
  std::vector<uint8_t> masked;     // 1 = supervised by the inpainted frame
  Array target_rgb;                // [B,3]
  Array target_t;                  // [B,1] target depth as distance along the unit ray
  Array depth_valid;               // [B,1] 0/1; invalid sensor depth is skipped
  double pixel_scale = 1.0;        // admissible pixel count / B

  int size() const { return static_cast<int>(pixels.size()); }
};

// Composited quantities feeding the loss. The compositing weights of color
// terms follow the stop-gradient policy: the MV head never propagates into
// density, and inpainted (masked) pixels do not propagate color gradient into
// density through the view-dependent head either. Depth and distortion always
// train density.
struct RenderedBatch {
  ad::Var rgb;     // [B,3] view-dependent head
  ad::Var rgb_mv;  // [B,3] direction-free head
  ad::Var depth;   // [B,1] ray-distance expectation
  ad::Var ldist;   // [B,1] per-ray distortion
};

RenderedBatch composite_for_loss(ad::Tape& tape, const RayBatch& rays, const FieldOutputs& field,
                                 const PixelBatch& batch, bool stop_grads = true);

struct LossTerms {
  ad::Var total;   // lambda-weighted, batch-scaled objective
  ad::Var rgb;     // raw sums of the individual components
  ad::Var rgb_mv;
  ad::Var depth;
  ad::Var reg;
  ad::Var dist;
};

// Assembles the confidence-weighted training loss over one pixel batch.
// Unmasked pixels: ||I - I_hat||^2 and |D - D_hat|. Masked pixels of active
// frames: e^{-u_n} ||I_tilde - I_hat||^2 and e^{-u_n} |D_tilde - D_hat|, the
// RGB form evaluated once per color head. Distortion sums over all batch
// rays, and the regularizer adds sum_{n in active} u_n (never batch-scaled).
// A masked pixel outside the active set is a contract violation.
LossTerms assemble_loss(ad::Tape& tape, const PixelBatch& batch, const RenderedBatch& rendered,
                        ad::Var u_raw, const std::vector<int>& active_frames,
                        const LossWeights& weights);

}  // namespace nerfrm
