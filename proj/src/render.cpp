#include "nerfrm/render.hpp"

#include <cmath>

namespace nerfrm {

Ray generate_ray(const Camera& cam, double row, double col, const Aabb& bounds, double* z_to_ray) {
  NERFRM_CHECK(std::abs(cam.intrinsics(0, 0) * cam.intrinsics(1, 1)) > 1e-12,
               "singular intrinsics");
  Ray ray;
  ray.origin = cam.center();
  ray.dir = cam.rotation() * cam.pixel_dir_cam(row, col, z_to_ray);
  ray.dir.normalize();

  constexpr double kMinNear = 0.05;
  auto hit = ray_aabb(ray.origin, ray.dir, bounds);
  if (hit && hit->second > kMinNear) {
    ray.t_near = std::max(kMinNear, hit->first);
    ray.t_far = hit->second;
  } else {
    // ray leaves the scene immediately; keep a degenerate but valid interval
    ray.t_near = kMinNear;
    ray.t_far = kMinNear + 1e-3;
  }
  return ray;
}

std::vector<double> stratified_samples(double t_near, double t_far, int count,
                                       const std::function<double()>& next_u01) {
  NERFRM_CHECK(count >= 1, "need at least one sample per ray");
  NERFRM_CHECK(t_near >= 0.0 && t_near < t_far, "invalid ray interval");
  std::vector<double> ts(static_cast<size_t>(count));
  const double bin = (t_far - t_near) / count;
  for (int i = 0; i < count; ++i) ts[i] = t_near + (i + next_u01()) * bin;
  return ts;
}

void compositing_weights(const double* sigma, const double* deltas, int count, double* weights,
                         double* transmittance) {
  double acc = 0.0;
  for (int i = 0; i < count; ++i) {
    double trans = std::exp(-acc);
    double alpha = 1.0 - std::exp(-sigma[i] * deltas[i]);
    if (transmittance) transmittance[i] = trans;
    weights[i] = trans * alpha;
    acc += sigma[i] * deltas[i];
  }
}

RayShade shade_ray(const double* sigma, const double* rgb, const double* ts, const double* deltas,
                   int count) {
  RayShade out;
  double acc = 0.0;
  for (int i = 0; i < count; ++i) {
    double w = std::exp(-acc) * (1.0 - std::exp(-sigma[i] * deltas[i]));
    out.color[0] += w * rgb[3 * i];
    out.color[1] += w * rgb[3 * i + 1];
    out.color[2] += w * rgb[3 * i + 2];
    out.depth += w * ts[i];
    out.weight_sum += w;
    acc += sigma[i] * deltas[i];
  }
  return out;
}

double distortion_ray(const double* weights, const double* edges, int count) {
  double pair_term = 0.0, self_term = 0.0;
  for (int i = 0; i < count; ++i) {
    double mi = 0.5 * (edges[i] + edges[i + 1]);
    for (int j = 0; j < count; ++j) {
      double mj = 0.5 * (edges[j] + edges[j + 1]);
      pair_term += weights[i] * weights[j] * std::fabs(mi - mj);
    }
    self_term += weights[i] * weights[i] * (edges[i + 1] - edges[i]);
  }
  return pair_term + self_term / 3.0;
}

RayBatch build_ray_batch(const std::vector<Camera>& cameras, const std::vector<PixelCoord>& pixels,
                         const Aabb& bounds, int samples_per_ray, uint64_t seed, uint64_t salt) {
  const int B = static_cast<int>(pixels.size());
  const int K = samples_per_ray;
  RayBatch batch;
  batch.count = B;
  batch.samples_per_ray = K;
  batch.rays.resize(B);
  batch.positions = Array(static_cast<int64_t>(B) * K, 3);
  batch.dirs = Array(static_cast<int64_t>(B) * K, 3);
  batch.ts = Array(static_cast<int64_t>(B) * K, 1);
  batch.deltas = Array(static_cast<int64_t>(B) * K, 1);
  batch.edges = Array(B, K + 1);
  batch.z_to_ray.resize(B);

  parallel_for(B, 64, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      const PixelCoord& px = pixels[b];
      NERFRM_CHECK(px.frame >= 0 && px.frame < static_cast<int>(cameras.size()),
                   "pixel frame index out of range");
      Ray ray = generate_ray(cameras[px.frame], px.row, px.col, bounds, &batch.z_to_ray[b]);
      batch.rays[b] = ray;
      Rng rng = Rng::keyed(seed, kRngStratified, static_cast<uint64_t>(px.frame),
                           static_cast<uint64_t>(px.row), static_cast<uint64_t>(px.col), salt);
      std::vector<double> ts = stratified_samples(ray.t_near, ray.t_far, K, rng);
      for (int i = 0; i < K; ++i) {
        int64_t r = b * K + i;
        Eigen::Vector3d p = ray.origin + ts[i] * ray.dir;
        batch.positions.at(r, 0) = p.x();
        batch.positions.at(r, 1) = p.y();
        batch.positions.at(r, 2) = p.z();
        batch.dirs.at(r, 0) = ray.dir.x();
        batch.dirs.at(r, 1) = ray.dir.y();
        batch.dirs.at(r, 2) = ray.dir.z();
        batch.ts.v[r] = ts[i];
        double next = (i + 1 < K) ? ts[i + 1] : ray.t_far;
        batch.deltas.v[r] = next - ts[i];
        batch.edges.at(b, i) = ts[i];
      }
      batch.edges.at(b, K) = ray.t_far;
    }
  });
  return batch;
}

ad::Var composite_weights_op(ad::Tape& tape, ad::Var sigma, const Array& deltas,
                             int samples_per_ray) {
  const Array& sv = tape.value(sigma);
  NERFRM_CHECK(sv.cols == 1 && sv.rows % samples_per_ray == 0,
               "composite expects [B*K,1] densities");
  NERFRM_CHECK(sv.same_shape(deltas), "sigma/delta shape mismatch");
  const int64_t B = sv.rows / samples_per_ray;
  ad::Var s = tape.mul(sigma, tape.constant(deltas));          // sigma_i * delta_i
  ad::Var s_bk = tape.reshape(s, B, samples_per_ray);
  ad::Var trans = tape.exp(tape.neg(tape.cumsum_exclusive_rows(s_bk)));  // T_i
  ad::Var alpha = tape.sub(tape.constant(Array::full(B, samples_per_ray, 1.0)),
                           tape.exp(tape.neg(s_bk)));
  return tape.mul(trans, alpha);
}

ad::Var composite_color_op(ad::Tape& tape, ad::Var weights_bk, ad::Var rgb, int samples_per_ray) {
  const Array& wv = tape.value(weights_bk);
  ad::Var w_col = tape.reshape(weights_bk, wv.rows * wv.cols, 1);
  ad::Var weighted = tape.mul(rgb, w_col);
  return tape.segment_sum_rows(weighted, samples_per_ray);
}

ad::Var render_depth_op(ad::Tape& tape, ad::Var weights_bk, const Array& ts, int samples_per_ray) {
  const Array& wv = tape.value(weights_bk);
  ad::Var w_col = tape.reshape(weights_bk, wv.rows * wv.cols, 1);
  ad::Var weighted = tape.mul(w_col, tape.constant(ts));
  return tape.segment_sum_rows(weighted, samples_per_ray);
}

namespace {

RenderedFrame render_common(const Camera& cam, int samples_per_ray, uint64_t seed, int frame_index,
                            const Aabb& bounds,
                            const std::function<void(const RayBatch&, Array&, Array&)>& query) {
  RenderedFrame out;
  out.width = cam.width;
  out.height = cam.height;
  out.rgb.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.0);
  out.depth.assign(static_cast<size_t>(cam.width) * cam.height, 0.0);

  const int K = samples_per_ray;
  const int64_t total = static_cast<int64_t>(cam.width) * cam.height;
  const int64_t chunk = std::max<int64_t>(1, 16384 / K);
  std::vector<Camera> cams{cam};

  for (int64_t start = 0; start < total; start += chunk) {
    int64_t end = std::min(total, start + chunk);
    std::vector<PixelCoord> pixels;
    pixels.reserve(static_cast<size_t>(end - start));
    for (int64_t i = start; i < end; ++i)
      pixels.push_back({0, static_cast<int>(i / cam.width), static_cast<int>(i % cam.width)});
    // rng streams are keyed by the true frame index, not the local camera slot
    RayBatch batch = build_ray_batch(cams, pixels, bounds, K, seed,
                                     (static_cast<uint64_t>(frame_index) << 32));
    Array sigma, rgb;
    query(batch, sigma, rgb);
    parallel_for(batch.count, 256, [&](int64_t lo, int64_t hi) {
      for (int64_t b = lo; b < hi; ++b) {
        RayShade shade = shade_ray(sigma.data() + b * K, rgb.data() + b * K * 3,
                                   batch.ts.data() + b * K, batch.deltas.data() + b * K, K);
        int64_t px = start + b;
        for (int c = 0; c < 3; ++c) out.rgb[px * 3 + c] = shade.color[c];
        out.depth[px] = shade.depth / batch.z_to_ray[b];  // ray distance -> z-depth
      }
    });
  }
  return out;
}

}  // namespace

RenderedFrame render_frame(FieldParams& params, const Camera& cam, int samples_per_ray,
                           uint64_t seed, int frame_index, ColorHead head, const Aabb& bounds) {
  return render_common(cam, samples_per_ray, seed, frame_index, bounds,
                       [&](const RayBatch& batch, Array& sigma, Array& rgb) {
                         ad::Tape tape;
                         FieldVars vars = bind_field(tape, params, false);
                         FieldOutputs f =
                             field_forward(tape, vars, params, batch.positions, batch.dirs);
                         sigma = tape.value(f.sigma);
                         rgb = tape.value(head == ColorHead::kMv ? f.rgb_mv : f.rgb);
                       });
}

RenderedFrame render_frame_fn(const AnalyticField& field, const Camera& cam, int samples_per_ray,
                              uint64_t seed, int frame_index, const Aabb& bounds) {
  return render_common(cam, samples_per_ray, seed, frame_index, bounds,
                       [&](const RayBatch& batch, Array& sigma, Array& rgb) {
                         const int64_t P = batch.positions.rows;
                         sigma = Array(P, 1);
                         rgb = Array(P, 3);
                         for (int64_t r = 0; r < P; ++r) {
                           Eigen::Vector3d x(batch.positions.at(r, 0), batch.positions.at(r, 1),
                                             batch.positions.at(r, 2));
                           Eigen::Vector3d d(batch.dirs.at(r, 0), batch.dirs.at(r, 1),
                                             batch.dirs.at(r, 2));
                           Eigen::Vector3d c;
                           field(x, d, sigma.v[r], c);
                           rgb.at(r, 0) = c.x();
                           rgb.at(r, 1) = c.y();
                           rgb.at(r, 2) = c.z();
                         }
                       });
}

}  // namespace nerfrm
