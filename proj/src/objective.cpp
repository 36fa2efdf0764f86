#include "nerfrm/objective.hpp"

#include <algorithm>

namespace nerfrm {

RenderedBatch composite_for_loss(ad::Tape& tape, const RayBatch& rays, const FieldOutputs& field,
                                 const PixelBatch& batch, bool stop_grads) {
  const int B = rays.count;
  const int K = rays.samples_per_ray;
  NERFRM_CHECK(batch.size() == B, "pixel batch and ray batch disagree");

  ad::Var w = composite_weights_op(tape, field.sigma, rays.deltas, K);

  ad::Var w_color = w;
  ad::Var w_mv = w;
  if (stop_grads) {
    ad::Var w_frozen = tape.stop_gradient(w);
    Array masked_col(B, 1), unmasked_col(B, 1);
    for (int b = 0; b < B; ++b) {
      masked_col.v[b] = batch.masked[b] ? 1.0 : 0.0;
      unmasked_col.v[b] = batch.masked[b] ? 0.0 : 1.0;
    }
    w_color = tape.add(tape.mul(w, tape.constant(unmasked_col)),
                       tape.mul(w_frozen, tape.constant(masked_col)));
    w_mv = w_frozen;
  }

  RenderedBatch out;
  out.rgb = composite_color_op(tape, w_color, field.rgb, K);
  out.rgb_mv = composite_color_op(tape, w_mv, field.rgb_mv, K);
  out.depth = render_depth_op(tape, w, rays.ts, K);
  out.ldist = tape.distortion_rows(w, rays.edges);
  return out;
}

LossTerms assemble_loss(ad::Tape& tape, const PixelBatch& batch, const RenderedBatch& rendered,
                        ad::Var u_raw, const std::vector<int>& active_frames,
                        const LossWeights& weights) {
  const int B = batch.size();
  const int64_t N = tape.value(u_raw).rows;

  std::vector<uint8_t> active_lut(static_cast<size_t>(N), 0);
  for (int n : active_frames) {
    NERFRM_CHECK(n >= 0 && n < N, "active frame " << n << " out of range");
    active_lut[n] = 1;
  }

  Array masked_col(B, 1), unmasked_col(B, 1);
  std::vector<int32_t> frame_idx(B);
  for (int b = 0; b < B; ++b) {
    frame_idx[b] = batch.pixels[b].frame;
    if (batch.masked[b]) {
      NERFRM_CHECK(active_lut[batch.pixels[b].frame],
                   "masked pixel of frame " << batch.pixels[b].frame
                                            << " outside the active set");
      masked_col.v[b] = 1.0;
    } else {
      unmasked_col.v[b] = 1.0;
    }
  }

  // per-pixel weight: 1 outside the mask, e^{-u_n} inside
  ad::Var u = tape.relu(u_raw);
  ad::Var conf = tape.exp(tape.neg(tape.gather_rows(u, frame_idx)));
  ad::Var pixw = tape.add(tape.constant(unmasked_col), tape.mul(conf, tape.constant(masked_col)));

  auto rgb_term = [&](ad::Var pred) {
    ad::Var resid = tape.row_sum(tape.square(tape.sub(pred, tape.constant(batch.target_rgb))));
    return tape.sum(tape.mul(resid, pixw));
  };

  LossTerms terms;
  terms.rgb = rgb_term(rendered.rgb);
  terms.rgb_mv = rgb_term(rendered.rgb_mv);

  ad::Var depth_resid = tape.abs(tape.sub(rendered.depth, tape.constant(batch.target_t)));
  depth_resid = tape.mul(depth_resid, tape.constant(batch.depth_valid));
  terms.depth = tape.sum(tape.mul(depth_resid, pixw));

  terms.dist = tape.sum(rendered.ldist);

  if (active_frames.empty()) {
    terms.reg = tape.constant(0.0);
  } else {
    std::vector<int32_t> active_idx(active_frames.begin(), active_frames.end());
    terms.reg = tape.sum(tape.gather_rows(u, active_idx));
  }

  const double s = batch.pixel_scale;
  ad::Var total = tape.scale(tape.add(terms.rgb, terms.rgb_mv), weights.rgb * s);
  total = tape.add(total, tape.scale(terms.depth, weights.depth * s));
  total = tape.add(total, tape.scale(terms.dist, weights.dist * s));
  total = tape.add(total, tape.scale(terms.reg, weights.reg));
  terms.total = total;
  return terms;
}

}  // namespace nerfrm
