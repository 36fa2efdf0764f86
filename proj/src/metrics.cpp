#include "nerfrm/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

#include "nerfrm/render.hpp"

using nlohmann::ordered_json;

namespace nerfrm {

namespace {

constexpr double kPsnrCap = 99.0;

void check_metric_inputs(const Image& pred, const Image& gt, const Mask& mask) {
  NERFRM_CHECK(pred.height == gt.height && pred.width == gt.width, "image size mismatch");
  NERFRM_CHECK(mask.height == pred.height && mask.width == pred.width, "mask size mismatch");
  NERFRM_CHECK(!mask.empty(), "metric undefined on an empty mask");
}

}  // namespace

double masked_psnr(const Image& pred, const Image& gt, const Mask& mask) {
  check_metric_inputs(pred, gt, mask);
  double se = 0.0;
  int64_t count = 0;
  for (int r = 0; r < pred.height; ++r)
    for (int c = 0; c < pred.width; ++c) {
      if (!mask.at(r, c)) continue;
      for (int ch = 0; ch < pred.channels; ++ch) {
        double d = pred.at(r, c, ch) - gt.at(r, c, ch);
        se += d * d;
      }
      count += pred.channels;
    }
  double mse = se / static_cast<double>(count);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double masked_ssim(const Image& pred, const Image& gt, const Mask& mask) {
  check_metric_inputs(pred, gt, mask);
  constexpr int kRadius = 5;  // 11x11 window
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;

  double kernel[2 * kRadius + 1][2 * kRadius + 1];
  for (int dr = -kRadius; dr <= kRadius; ++dr)
    for (int dc = -kRadius; dc <= kRadius; ++dc)
      kernel[dr + kRadius][dc + kRadius] = std::exp(-(dr * dr + dc * dc) / (2.0 * kSigma * kSigma));

  auto luminance = [](const Image& img, int r, int c) {
    double s = 0.0;
    for (int ch = 0; ch < img.channels; ++ch) s += img.at(r, c, ch);
    return s / img.channels;
  };

  double total = 0.0;
  int64_t centers = 0;
  for (int r = 0; r < pred.height; ++r)
    for (int c = 0; c < pred.width; ++c) {
      if (!mask.at(r, c)) continue;
      double wsum = 0, mx = 0, my = 0;
      for (int dr = -kRadius; dr <= kRadius; ++dr)
        for (int dc = -kRadius; dc <= kRadius; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= pred.height || cc < 0 || cc >= pred.width) continue;
          if (!mask.at(rr, cc)) continue;
          double w = kernel[dr + kRadius][dc + kRadius];
          wsum += w;
          mx += w * luminance(pred, rr, cc);
          my += w * luminance(gt, rr, cc);
        }
      mx /= wsum;
      my /= wsum;
      double vx = 0, vy = 0, vxy = 0;
      for (int dr = -kRadius; dr <= kRadius; ++dr)
        for (int dc = -kRadius; dc <= kRadius; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= pred.height || cc < 0 || cc >= pred.width) continue;
          if (!mask.at(rr, cc)) continue;
          double w = kernel[dr + kRadius][dc + kRadius] / wsum;
          double dx = luminance(pred, rr, cc) - mx;
          double dy = luminance(gt, rr, cc) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          vxy += w * dx * dy;
        }
      double ssim = ((2 * mx * my + kC1) * (2 * vxy + kC2)) /
                    ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      total += ssim;
      ++centers;
    }
  return total / static_cast<double>(centers);
}

std::pair<double, double> masked_depth_error(const DepthMap& pred, const DepthMap& gt,
                                             const Mask& mask) {
  NERFRM_CHECK(pred.height == gt.height && pred.width == gt.width, "depth size mismatch");
  NERFRM_CHECK(!mask.empty(), "metric undefined on an empty mask");
  double l1 = 0, l2 = 0;
  int64_t count = 0;
  for (int r = 0; r < pred.height; ++r)
    for (int c = 0; c < pred.width; ++c) {
      if (!mask.at(r, c)) continue;
      if (gt.at(r, c) <= 0.0) continue;  // invalid ground truth
      double d = pred.at(r, c) - gt.at(r, c);
      l1 += std::fabs(d);
      l2 += d * d;
      ++count;
    }
  NERFRM_CHECK(count > 0, "no valid ground-truth depth inside the mask");
  return {l1 / static_cast<double>(count), l2 / static_cast<double>(count)};
}

EvalReport evaluate(FieldParams& params, const SceneDataset& scene, const SceneDataset& gt,
                    const std::vector<int>& frame_sel, int samples_per_ray, uint64_t seed) {
  NERFRM_CHECK(scene.width == gt.width && scene.height == gt.height,
               "scene and ground truth resolutions differ");
  const Aabb bounds{params.scene_lo, params.scene_hi};
  EvalReport report;

  for (int n : frame_sel) {
    NERFRM_CHECK(n >= 0 && n < scene.frame_count() && n < gt.frame_count(),
                 "evaluation frame " << n << " out of range");
    const Mask& mask = scene.frames[n].mask;
    if (mask.empty()) {
      report.skipped.push_back(n);
      std::cerr << "warning: frame " << n << " has an empty mask; skipping masked metrics\n";
      continue;
    }
    RenderedFrame rendered =
        render_frame(params, scene.camera(n), samples_per_ray, seed, n, ColorHead::kMv, bounds);
    Image pred(scene.height, scene.width, 3);
    pred.v = rendered.rgb;
    DepthMap pred_depth(scene.height, scene.width);
    pred_depth.v = rendered.depth;

    FrameMetrics m;
    m.frame = n;
    m.psnr = masked_psnr(pred, gt.frames[n].rgb, mask);
    m.ssim = masked_ssim(pred, gt.frames[n].rgb, mask);
    auto [l1, l2] = masked_depth_error(pred_depth, gt.frames[n].depth, mask);
    m.depth_l1 = l1;
    m.depth_l2 = l2;
    report.frames.push_back(m);
  }

  NERFRM_CHECK(!report.frames.empty(), "no evaluable frames (all masks empty?)");
  for (const FrameMetrics& m : report.frames) {
    report.psnr += m.psnr;
    report.ssim += m.ssim;
    report.depth_l1 += m.depth_l1;
    report.depth_l2 += m.depth_l2;
  }
  const double n = static_cast<double>(report.frames.size());
  report.psnr /= n;
  report.ssim /= n;
  report.depth_l1 /= n;
  report.depth_l2 /= n;
  return report;
}

void write_eval_report(const EvalReport& report, const std::string& json_path,
                       const std::string& csv_path) {
  if (!json_path.empty()) {
    ordered_json j;
    j["psnr"] = report.psnr;
    j["ssim"] = report.ssim;
    j["depth_l1"] = report.depth_l1;
    j["depth_l2"] = report.depth_l2;
    j["skipped"] = report.skipped;
    ordered_json frames = ordered_json::array();
    for (const FrameMetrics& m : report.frames) {
      ordered_json f;
      f["frame"] = m.frame;
      f["psnr"] = m.psnr;
      f["ssim"] = m.ssim;
      f["depth_l1"] = m.depth_l1;
      f["depth_l2"] = m.depth_l2;
      frames.push_back(f);
    }
    j["frames"] = frames;
    std::ofstream os(json_path);
    NERFRM_CHECK(os.good(), "cannot write report: " << json_path);
    os << j.dump(2) << "\n";
  }
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    NERFRM_CHECK(os.good(), "cannot write report: " << csv_path);
    os << "frame,psnr,ssim,depth_l1,depth_l2\n";
    for (const FrameMetrics& m : report.frames)
      os << m.frame << ',' << m.psnr << ',' << m.ssim << ',' << m.depth_l1 << ',' << m.depth_l2
         << '\n';
    os << "mean," << report.psnr << ',' << report.ssim << ',' << report.depth_l1 << ','
       << report.depth_l2 << '\n';
  }
}

}  // namespace nerfrm
