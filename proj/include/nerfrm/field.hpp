#pragma once

#include <array>
#include <string>
#include <vector>

#include "nerfrm/autodiff.hpp"
#include "nerfrm/geometry.hpp"

namespace nerfrm {

struct MlpConfig {
  int trunk_depth = 8;
  int trunk_width = 256;
  int head_depth = 4;
  int head_width = 128;
  int enc_levels_pos = 10;  // frequency bands for positions
  int enc_levels_dir = 4;   // frequency bands for view directions
  int skip_layer = 4;       // trunk layer (0-based) whose input re-concats the encoding;
                            // disabled when >= trunk_depth
  int frames = 0;           // per-image uncertainty slots

  int pos_dim() const { return 3 + 6 * enc_levels_pos; }
  int dir_dim() const { return 3 + 6 * enc_levels_dir; }
  bool has_skip() const { return skip_layer > 0 && skip_layer < trunk_depth; }
};

// Scene MLP parameters: shared trunk (density), view-dependent color head,
// view-direction-free color head, and free per-image uncertainty variables.
struct FieldParams {
  MlpConfig cfg;

  std::vector<Array> trunk_w, trunk_b;
  Array density_w, density_b;              // trunk feature -> raw density
  std::vector<Array> color_w, color_b;     // [feature, dir enc] -> rgb logits
  std::vector<Array> mv_w, mv_b;           // feature -> rgb logits (no direction)
  Array u_raw;                             // [frames,1]; uncertainty u_n = relu(u_raw[n])

  // scene AABB used to normalize positions into [-1,1] before encoding
  Eigen::Vector3d scene_lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d scene_hi = Eigen::Vector3d::Constant(1.0);

  // Iterate all trainable tensors in a fixed order (u_raw last).
  void for_each_param(const std::function<void(const std::string&, Array&)>& fn);

  double uncertainty(int n) const;  // relu(u_raw[n])
  double confidence(int n) const;   // e^{-u_n}
};

// Fresh parameters with uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights.
// u_raw is zero-initialized (confidence 1).
FieldParams init_field(const MlpConfig& cfg, const Aabb& scene_bounds, uint64_t seed);

// Re-draw the MLP weights in place, keeping u_raw and scene bounds.
void reinit_mlp(FieldParams& params, uint64_t seed);

// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p)]
// applied per column of pts [P,3]; output [P, 3+6L].
Array positional_encode(const Array& pts, int levels);

// Normalize world positions into [-1,1]^3 using the scene bounds.
Array normalize_positions(const FieldParams& params, const Array& pts_world);

struct FieldVars {
  std::vector<ad::Var> trunk_w, trunk_b;
  ad::Var density_w, density_b;
  std::vector<ad::Var> color_w, color_b;
  std::vector<ad::Var> mv_w, mv_b;
  ad::Var u_raw;
};

// Leaf-bind all parameters on a tape; `trainable` controls requires_grad.
FieldVars bind_field(ad::Tape& tape, FieldParams& params, bool trainable);

struct FieldOutputs {
  ad::Var sigma;    // [P,1] softplus-activated density
  ad::Var feature;  // [P,W] trunk feature
  ad::Var rgb;      // [P,3] view-dependent head, sigmoid-activated
  ad::Var rgb_mv;   // [P,3] direction-free head, sigmoid-activated
};

// Batched forward pass. `positions` are world coordinates [P,3]; `dirs` are
// unit view directions [P,3] consumed only by the view-dependent head.
// The trunk feature fed to the MV head passes through stop_gradient unless
// `stop_grads` is false (finite-difference checks need the bypass).
FieldOutputs field_forward(ad::Tape& tape, const FieldVars& vars, const FieldParams& params,
                           const Array& positions, const Array& dirs, bool stop_grads = true);

// Single-point convenience query.
struct PointSample {
  double sigma;
  std::array<double, 3> rgb;
  std::array<double, 3> rgb_mv;
};
PointSample query_field(FieldParams& params, const Eigen::Vector3d& x, const Eigen::Vector3d& d);

// Lossless binary checkpoint (doubles, little-endian) including config,
// scene bounds and the raw uncertainty vector.
void save_checkpoint(FieldParams& params, const std::string& path);
FieldParams load_checkpoint(const std::string& path);

}  // namespace nerfrm
