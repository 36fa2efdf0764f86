#pragma once

#include <functional>
#include <vector>

#include "nerfrm/field.hpp"
#include "nerfrm/geometry.hpp"

namespace nerfrm {

// Back-project the center of pixel (row,col) into a world ray; t bounds come
// from the scene AABB (already inflated by the caller), clamped to a small
// positive near distance. `z_to_ray` converts z-depth to distance along the
// unit direction for this pixel.
Ray generate_ray(const Camera& cam, double row, double col, const Aabb& bounds,
                 double* z_to_ray = nullptr);

// One uniform sample per equal-width bin of [t_near, t_far]; strictly
// ascending; deterministic given the rng state. The callable overload takes
// the per-bin u in [0,1) directly (tests pin it to bin midpoints).
std::vector<double> stratified_samples(double t_near, double t_far, int count,
                                       const std::function<double()>& next_u01);
inline std::vector<double> stratified_samples(double t_near, double t_far, int count, Rng& rng) {
  return stratified_samples(t_near, t_far, count, [&rng] { return rng.uniform01(); });
}

// Plain (non-tape) compositing of one ray. sigma/deltas/ts have K entries,
// rgb is K*3 row-major. delta_K uses t_far as the closing edge.
struct RayShade {
  double color[3] = {0, 0, 0};
  double depth = 0.0;       // sum_i w_i t_i, distance along the unit ray
  double weight_sum = 0.0;  // <= 1 by construction
};
RayShade shade_ray(const double* sigma, const double* rgb, const double* ts, const double* deltas,
                   int count);
void compositing_weights(const double* sigma, const double* deltas, int count, double* weights,
                         double* transmittance);

// Per-ray distortion of compositing weights over bin edges [t_1..t_K, t_far].
double distortion_ray(const double* weights, const double* edges, int count);

// Geometry of a batch of rays sampled for training or rendering. Sample rows
// are grouped per ray: row r*K+i is sample i of ray r.
struct RayBatch {
  int count = 0;              // rays
  int samples_per_ray = 0;    // K
  std::vector<Ray> rays;
  Array positions;            // [B*K,3]
  Array dirs;                 // [B*K,3]
  Array ts;                   // [B*K,1]
  Array deltas;               // [B*K,1]
  Array edges;                // [B,K+1]
  std::vector<double> z_to_ray;  // per ray
};

struct PixelCoord {
  int frame = 0;
  int row = 0;
  int col = 0;
};

// Stratified samples for a set of pixels. Each ray gets an independent rng
// stream keyed by (seed, salt, frame, row, col), so results do not depend on
// batch composition or parallel schedule.
RayBatch build_ray_batch(const std::vector<Camera>& cameras, const std::vector<PixelCoord>& pixels,
                         const Aabb& bounds, int samples_per_ray, uint64_t seed, uint64_t salt);

// Tape compositing used by the training loss: w_i = T_i (1 - e^{-sigma_i delta_i}).
ad::Var composite_weights_op(ad::Tape& tape, ad::Var sigma, const Array& deltas, int samples_per_ray);
// color[b] = sum_i w[b,i] rgb[b*K+i]; weights may be a blend of live and
// detached weights.
ad::Var composite_color_op(ad::Tape& tape, ad::Var weights_bk, ad::Var rgb, int samples_per_ray);
// depth[b] = sum_i w[b,i] t[b*K+i]
ad::Var render_depth_op(ad::Tape& tape, ad::Var weights_bk, const Array& ts, int samples_per_ray);

enum class ColorHead { kViewDep, kMv };

struct RenderedFrame {
  int width = 0, height = 0;
  std::vector<double> rgb;    // H*W*3 in [0,1]
  std::vector<double> depth;  // H*W z-depth in meters
};

// Render a full frame by querying the field MLP. Final novel-view output uses
// the MV head.
RenderedFrame render_frame(FieldParams& params, const Camera& cam, int samples_per_ray,
                           uint64_t seed, int frame_index, ColorHead head, const Aabb& bounds);

// Same ray marching against an arbitrary field; used by oracle tests.
using AnalyticField = std::function<void(const Eigen::Vector3d& x, const Eigen::Vector3d& d,
                                         double& sigma, Eigen::Vector3d& rgb)>;
RenderedFrame render_frame_fn(const AnalyticField& field, const Camera& cam, int samples_per_ray,
                              uint64_t seed, int frame_index, const Aabb& bounds);

}  // namespace nerfrm
