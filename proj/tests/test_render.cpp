#include <doctest.h>

#include <cmath>

#include "nerfrm/objective.hpp"
#include "nerfrm/render.hpp"

using namespace nerfrm;

namespace {

// Independent reference compositing: explicit loop, running optical depth.
// Shares no code with the library implementation.
struct BruteRay {
  std::vector<double> weights, trans;
  double color[3] = {0, 0, 0};
  double depth = 0;
};

BruteRay brute_composite(const std::vector<double>& sigma, const std::vector<double>& rgb,
                         const std::vector<double>& ts, double t_far) {
  const int K = static_cast<int>(sigma.size());
  BruteRay out;
  out.weights.resize(K);
  out.trans.resize(K);
  double optical = 0.0;
  for (int i = 0; i < K; ++i) {
    double t_next = (i + 1 < K) ? ts[i + 1] : t_far;
    double delta = t_next - ts[i];
    out.trans[i] = std::exp(-optical);
    out.weights[i] = out.trans[i] * (1.0 - std::exp(-sigma[i] * delta));
    for (int c = 0; c < 3; ++c) out.color[c] += out.weights[i] * rgb[3 * i + c];
    out.depth += out.weights[i] * ts[i];
    optical += sigma[i] * delta;
  }
  return out;
}

double brute_distortion(const std::vector<double>& w, const std::vector<double>& edges) {
  const int K = static_cast<int>(w.size());
  double total = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      double mi = 0.5 * (edges[i] + edges[i + 1]);
      double mj = 0.5 * (edges[j] + edges[j + 1]);
      total += w[i] * w[j] * std::fabs(mi - mj);
    }
  for (int i = 0; i < K; ++i) total += w[i] * w[i] * (edges[i + 1] - edges[i]) / 3.0;
  return total;
}

Camera simple_camera(double fx, double fy, double cx, double cy, int w, int h,
                     const Eigen::Matrix4d& pose = Eigen::Matrix4d::Identity()) {
  Camera cam;
  cam.intrinsics << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  cam.cam_to_world = pose;
  cam.width = w;
  cam.height = h;
  return cam;
}

struct MidpointRng : Rng {
  MidpointRng() { state = 0; }
};

}  // namespace

TEST_CASE("generate_ray anchors") {
  Aabb bounds{Eigen::Vector3d(-10, -10, -10), Eigen::Vector3d(10, 10, 10)};
  {
    // principal point, identity pose -> camera forward (0,0,1)
    Camera cam = simple_camera(100, 100, 50, 50, 100, 100);
    Ray r = generate_ray(cam, 49.5, 49.5, bounds);
    CHECK(r.dir.x() == doctest::Approx(0.0));
    CHECK(r.dir.y() == doctest::Approx(0.0));
    CHECK(r.dir.z() == doctest::Approx(1.0));
    CHECK(r.origin.norm() == 0.0);
    CHECK(std::abs(r.dir.norm() - 1.0) < 1e-9);
  }
  {
    // translated pose moves the origin
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    pose(0, 3) = 1;
    pose(1, 3) = 2;
    pose(2, 3) = 3;
    Camera cam = simple_camera(100, 100, 50, 50, 100, 100, pose);
    Ray r = generate_ray(cam, 49.5, 49.5, bounds);
    CHECK(r.origin == Eigen::Vector3d(1, 2, 3));
  }
  {
    // fx=fy=100, cx=cy=50, pixel (49.5, 149.5) -> direction (1,0,1)/sqrt(2)
    Camera cam = simple_camera(100, 100, 50, 50, 200, 100);
    Ray r = generate_ray(cam, 49.5, 149.5, bounds);
    CHECK(r.dir.x() == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(r.dir.y() == doctest::Approx(0.0));
    CHECK(r.dir.z() == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
  {
    Camera cam = simple_camera(0, 0, 50, 50, 100, 100);
    CHECK_THROWS(generate_ray(cam, 0, 0, bounds));
  }
}

TEST_CASE("stratified sampling anchors") {
  {
    MidpointRng rng;  // any state: one bin means one sample inside the interval
    auto ts = stratified_samples(1.0, 3.0, 1, rng);
    REQUIRE(ts.size() == 1);
    CHECK(ts[0] >= 1.0);
    CHECK(ts[0] < 3.0);
  }
  {
    // rng pinned to bin midpoints, K=4 over [0,1] -> (0.125, 0.375, 0.625, 0.875)
    auto ts = stratified_samples(0.0, 1.0, 4, [] { return 0.5; });
    REQUIRE(ts.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(ts[i] == doctest::Approx(0.125 + 0.25 * i).epsilon(1e-12));

    // and one sample per bin regardless of seed
    Rng rng(123);
    auto random_ts = stratified_samples(0.0, 1.0, 4, rng);
    for (int i = 0; i < 4; ++i) {
      CHECK(random_ts[i] >= 0.25 * i);
      CHECK(random_ts[i] < 0.25 * (i + 1));
    }
  }
  {
    // strictly ascending under any seed
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      auto ts = stratified_samples(0.3, 5.0, 32, rng);
      for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
    }
  }
}

TEST_CASE("composite numeric anchors") {
  {
    // empty space: all weights zero, transmittance one
    std::vector<double> sigma(4, 0.0), rgb(12, 0.5), ts{0.2, 0.4, 0.6, 0.8};
    std::vector<double> w(4), trans(4), deltas{0.2, 0.2, 0.2, 0.2};
    compositing_weights(sigma.data(), deltas.data(), 4, w.data(), trans.data());
    for (int i = 0; i < 4; ++i) {
      CHECK(w[i] == 0.0);
      CHECK(trans[i] == 1.0);
    }
    RayShade s = shade_ray(sigma.data(), rgb.data(), ts.data(), deltas.data(), 4);
    CHECK(s.color[0] == 0.0);
    CHECK(s.depth == 0.0);
  }
  {
    // K=2, sigma=(1,1), delta=(0.5,0.5), c1=red, c2=green
    std::vector<double> sigma{1.0, 1.0}, deltas{0.5, 0.5};
    std::vector<double> rgb{1, 0, 0, 0, 1, 0}, ts{1.0, 1.5};
    std::vector<double> w(2), trans(2);
    compositing_weights(sigma.data(), deltas.data(), 2, w.data(), trans.data());
    CHECK(w[0] == doctest::Approx(0.393469).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.238651).epsilon(1e-6));
    RayShade s = shade_ray(sigma.data(), rgb.data(), ts.data(), deltas.data(), 2);
    CHECK(s.color[0] == doctest::Approx(0.393469).epsilon(1e-6));
    CHECK(s.color[1] == doctest::Approx(0.238651).epsilon(1e-6));
    CHECK(s.color[2] == 0.0);
    CHECK(s.depth == doctest::Approx(0.751446).epsilon(1e-6));  // 0.393469*1 + 0.238651*1.5
  }
  {
    // opaque first sample
    std::vector<double> sigma{1e6, 1.0}, deltas{0.1, 0.1};
    std::vector<double> rgb{0.9, 0.1, 0.2, 0, 0, 0}, ts{2.0, 2.1};
    RayShade s = shade_ray(sigma.data(), rgb.data(), ts.data(), deltas.data(), 2);
    CHECK(s.color[0] == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(s.depth == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(s.weight_sum <= 1.0 + 1e-9);
  }
}

TEST_CASE("distortion numeric anchors") {
  {
    std::vector<double> w{0, 0, 0}, edges{0, 0.1, 0.2, 0.3};
    CHECK(distortion_ray(w.data(), edges.data(), 3) == 0.0);
  }
  {
    // single full weight in a 0.1-wide bin
    std::vector<double> w{1.0}, edges{1.0, 1.1};
    CHECK(distortion_ray(w.data(), edges.data(), 1) == doctest::Approx(0.033333).epsilon(1e-4));
  }
  {
    std::vector<double> w{0.5, 0.5}, edges{0.0, 0.5, 1.0};
    CHECK(distortion_ray(w.data(), edges.data(), 2) == doctest::Approx(0.333333).epsilon(1e-5));
  }
  {
    // splitting a fixed mass across distant midpoints increases distortion
    std::vector<double> concentrated{1.0, 0.0}, split{0.5, 0.5};
    std::vector<double> edges{0.0, 0.1, 2.0};
    CHECK(distortion_ray(split.data(), edges.data(), 2) >
          distortion_ray(concentrated.data(), edges.data(), 2));
  }
}

TEST_CASE("composite matches brute force on 1000 random rays") {
  Rng rng(2024);
  const int K = 32;
  double max_err = 0.0, max_dist_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    double t_near = rng.uniform(0.05, 0.5);
    double t_far = t_near + rng.uniform(0.5, 5.0);
    Rng ray_rng(rng.next_u64());
    std::vector<double> ts = stratified_samples(t_near, t_far, K, ray_rng);
    std::vector<double> sigma(K), rgb(K * 3), deltas(K), edges(K + 1);
    for (int i = 0; i < K; ++i) {
      sigma[i] = rng.uniform01() < 0.2 ? 0.0 : rng.uniform(0.0, 8.0);
      for (int c = 0; c < 3; ++c) rgb[3 * i + c] = rng.uniform01();
      deltas[i] = ((i + 1 < K) ? ts[i + 1] : t_far) - ts[i];
      edges[i] = ts[i];
    }
    edges[K] = t_far;

    BruteRay ref = brute_composite(sigma, rgb, ts, t_far);
    std::vector<double> w(K), trans(K);
    compositing_weights(sigma.data(), deltas.data(), K, w.data(), trans.data());
    RayShade s = shade_ray(sigma.data(), rgb.data(), ts.data(), deltas.data(), K);

    double wsum = 0.0;
    CHECK(trans[0] == 1.0);
    for (int i = 0; i < K; ++i) {
      max_err = std::max(max_err, std::fabs(w[i] - ref.weights[i]));
      max_err = std::max(max_err, std::fabs(trans[i] - ref.trans[i]));
      CHECK(w[i] >= 0.0);
      if (i > 0) CHECK(trans[i] <= trans[i - 1] + 1e-15);
      wsum += w[i];
    }
    CHECK(wsum <= 1.0 + 1e-9);
    for (int c = 0; c < 3; ++c) max_err = std::max(max_err, std::fabs(s.color[c] - ref.color[c]));
    max_err = std::max(max_err, std::fabs(s.depth - ref.depth));

    // tape path must agree with the brute force as well
    ad::Tape tape;
    ad::Var sv = tape.leaf(Array::from(sigma, K, 1), false);
    ad::Var w_bk = composite_weights_op(tape, sv, Array::from(deltas, K, 1), K);
    const Array& wv = tape.value(w_bk);
    for (int i = 0; i < K; ++i) max_err = std::max(max_err, std::fabs(wv.v[i] - ref.weights[i]));
    ad::Var ld = tape.distortion_rows(w_bk, Array::from(edges, 1, K + 1));
    CHECK(tape.value(ld).v[0] >= 0.0);
    max_dist_err = std::max(max_dist_err,
                            std::fabs(tape.value(ld).v[0] - brute_distortion(ref.weights, edges)));
  }
  CHECK(max_err <= 1e-12);
  CHECK(max_dist_err <= 1e-12);
}

TEST_CASE("gradients of compositing, depth and distortion") {
  Rng rng(31);
  const int K = 6, B = 2;
  Array sigma(B * K, 1), deltas(B * K, 1), ts(B * K, 1), edges(B, K + 1), rgb(B * K, 3);
  for (int b = 0; b < B; ++b) {
    double t = rng.uniform(0.1, 0.4);
    for (int i = 0; i < K; ++i) {
      int64_t r = b * K + i;
      sigma.v[r] = rng.uniform(0.1, 4.0);
      edges.at(b, i) = t;
      ts.v[r] = t;
      double step = rng.uniform(0.05, 0.4);
      deltas.v[r] = step;
      t += step;
      for (int c = 0; c < 3; ++c) rgb.at(r, c) = rng.uniform01();
    }
    edges.at(b, K) = t;
  }

  auto build = [&](ad::Tape& t, const std::vector<ad::Var>& vs) {
    ad::Var sig = t.softplus(vs[0]);  // keep densities positive and smooth
    ad::Var w = composite_weights_op(t, sig, deltas, K);
    ad::Var color = composite_color_op(t, w, t.constant(rgb), K);
    ad::Var depth = render_depth_op(t, w, ts, K);
    ad::Var dist = t.distortion_rows(w, edges);
    return t.add(t.add(t.sum(t.square(color)), t.sum(t.square(depth))), t.sum(dist));
  };
  double err = ad::grad_check(build, {sigma}, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("render_frame against an analytic plane scene") {
  // opaque white slab at z=2
  AnalyticField plane = [](const Eigen::Vector3d& x, const Eigen::Vector3d&, double& sigma,
                           Eigen::Vector3d& rgb) {
    sigma = (x.z() >= 2.0 && x.z() <= 2.1) ? 1e5 : 0.0;
    rgb = Eigen::Vector3d(1, 1, 1);
  };
  Camera cam = simple_camera(40, 40, 16, 12, 32, 24);
  Aabb bounds{Eigen::Vector3d(-3, -3, 0), Eigen::Vector3d(3, 3, 3)};
  RenderedFrame frame = render_frame_fn(plane, cam, 128, 7, 0, bounds);
  for (size_t p = 0; p < frame.depth.size(); ++p) {
    CHECK(frame.depth[p] == doctest::Approx(2.0).epsilon(0.02));  // z-depth everywhere
    CHECK(frame.rgb[p * 3] > 0.99);
  }

  // zero-density field renders black with zero depth
  AnalyticField vacuum = [](const Eigen::Vector3d&, const Eigen::Vector3d&, double& sigma,
                            Eigen::Vector3d& rgb) {
    sigma = 0.0;
    rgb = Eigen::Vector3d(1, 1, 1);
  };
  RenderedFrame empty = render_frame_fn(vacuum, cam, 32, 7, 0, bounds);
  for (size_t p = 0; p < empty.depth.size(); ++p) {
    CHECK(empty.depth[p] == 0.0);
    CHECK(empty.rgb[p * 3] == 0.0);
  }

  // same seed renders bit-identically
  RenderedFrame again = render_frame_fn(plane, cam, 128, 7, 0, bounds);
  CHECK(frame.rgb == again.rgb);
  CHECK(frame.depth == again.depth);
}
