#include "nerfrm/inpaint.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <thread>

namespace fs = std::filesystem;

namespace nerfrm {

ImageU8 encode_depth(const DepthMap& depth) {
  ImageU8 out(depth.height, depth.width, 3);
  for (int r = 0; r < depth.height; ++r)
    for (int c = 0; c < depth.width; ++c) {
      double d = depth.at(r, c);
      NERFRM_CHECK(d >= 0.0, "negative depth at (" << r << "," << c << ")");
      double scaled = 255.0 * std::min(d, kDepthClipMeters) / kDepthClipMeters;
      uint8_t v = static_cast<uint8_t>(std::min(255.0, std::floor(scaled + 0.5)));
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = v;
    }
  return out;
}

DepthMap decode_depth(const ImageU8& img) {
  NERFRM_CHECK(img.channels == 3, "decode_depth expects 3 channels");
  DepthMap out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double mean = (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / 3.0;
      out.at(r, c) = kDepthClipMeters * mean / 255.0;
    }
  return out;
}

ImageU8 inpaint_builtin(const InpaintRequest& request) {
  const ImageU8& img = request.image;
  const Mask& mask = request.mask;
  NERFRM_CHECK(img.height == mask.height && img.width == mask.width,
               "image/mask resolution mismatch");
  const size_t masked_count = mask.count();
  if (masked_count == 0) return img;
  NERFRM_CHECK(masked_count < mask.v.size(), "cannot inpaint a full-image mask");

  const int H = img.height, W = img.width, C = img.channels;
  // boundary values in [0,1]; masked pixels start from the unmasked mean
  std::vector<double> cur(static_cast<size_t>(H) * W * C), next;
  std::vector<double> boundary_mean(C, 0.0);
  size_t unmasked = mask.v.size() - masked_count;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      if (!mask.at(r, c))
        for (int ch = 0; ch < C; ++ch) boundary_mean[ch] += img.at(r, c, ch) / 255.0;
  for (int ch = 0; ch < C; ++ch) boundary_mean[ch] /= static_cast<double>(unmasked);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < C; ++ch)
        cur[(static_cast<size_t>(r) * W + c) * C + ch] =
            mask.at(r, c) ? boundary_mean[ch] : img.at(r, c, ch) / 255.0;
  next = cur;

  std::vector<std::pair<int, int>> holes;
  holes.reserve(masked_count);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      if (mask.at(r, c)) holes.emplace_back(r, c);

  constexpr int kMaxIters = 50000;
  constexpr double kTol = 1e-4;
  for (int iter = 0; iter < kMaxIters; ++iter) {
    double max_delta = 0.0;
    for (const auto& [r, c] : holes) {
      static const int dr[4] = {-1, 1, 0, 0};
      static const int dc[4] = {0, 0, -1, 1};
      double sum[3] = {0, 0, 0};
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
        ++n;
        for (int ch = 0; ch < C; ++ch)
          sum[ch] += cur[(static_cast<size_t>(rr) * W + cc) * C + ch];
      }
      for (int ch = 0; ch < C; ++ch) {
        size_t idx = (static_cast<size_t>(r) * W + c) * C + ch;
        double v = sum[ch] / n;
        max_delta = std::max(max_delta, std::fabs(v - cur[idx]));
        next[idx] = v;
      }
    }
    for (const auto& [r, c] : holes)
      for (int ch = 0; ch < C; ++ch) {
        size_t idx = (static_cast<size_t>(r) * W + c) * C + ch;
        cur[idx] = next[idx];
      }
    if (max_delta < kTol) break;
  }

  ImageU8 out = img;
  for (const auto& [r, c] : holes)
    for (int ch = 0; ch < C; ++ch)
      out.at(r, c, ch) = quantize_u8(cur[(static_cast<size_t>(r) * W + c) * C + ch]);
  return out;
}

namespace {

std::string expand_template(const std::string& tmpl, const std::string& image,
                            const std::string& mask, const std::string& out) {
  std::string cmd = tmpl;
  auto replace_all = [&](const std::string& key, const std::string& value) {
    size_t pos = 0;
    while ((pos = cmd.find(key, pos)) != std::string::npos) {
      cmd.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace_all("{image}", image);
  replace_all("{mask}", mask);
  replace_all("{out}", out);
  return cmd;
}

// run through /bin/sh with a kill-on-timeout watchdog
int run_with_timeout(const std::string& cmd, double timeout_sec, bool& timed_out) {
  timed_out = false;
  pid_t pid = fork();
  NERFRM_CHECK(pid >= 0, "fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_sec);
  for (;;) {
    int status = 0;
    pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) {
      if (WIFEXITED(status)) return WEXITSTATUS(status);
      return -1;
    }
    if (std::chrono::steady_clock::now() > deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      timed_out = true;
      return -1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

std::atomic<uint64_t> g_scratch_counter{0};

}  // namespace

ImageU8 inpaint_external(const InpaintRequest& request, const ExternalInpainter& tool) {
  NERFRM_CHECK(!tool.command_template.empty(), "external inpainter command not configured");
  if (request.mask.empty()) return request.image;  // nothing to inpaint

  fs::path scratch = fs::temp_directory_path() /
                     ("nerfrm_inpaint_" + std::to_string(getpid()) + "_" +
                      std::to_string(g_scratch_counter.fetch_add(1)));
  fs::create_directories(scratch);
  std::string image_path = (scratch / "image.png").string();
  std::string mask_path = (scratch / "mask.png").string();
  std::string out_path = (scratch / "out.png").string();
  save_png_u8(request.image, image_path);
  save_mask_png(request.mask, mask_path);

  std::string cmd = expand_template(tool.command_template, image_path, mask_path, out_path);
  bool timed_out = false;
  int rc = run_with_timeout(cmd, tool.timeout_sec, timed_out);

  auto cleanup = [&] { std::error_code ec; fs::remove_all(scratch, ec); };
  if (timed_out) {
    cleanup();
    NERFRM_CHECK(false, "external inpainter timed out after " << tool.timeout_sec << "s: " << cmd);
  }
  if (rc != 0) {
    cleanup();
    NERFRM_CHECK(false, "external inpainter exited with status " << rc << ": " << cmd);
  }
  if (!fs::exists(out_path)) {
    cleanup();
    NERFRM_CHECK(false, "external inpainter produced no output: " << cmd);
  }
  ImageU8 result = load_png_u8(out_path);
  cleanup();
  NERFRM_CHECK(result.height == request.image.height && result.width == request.image.width,
               "external inpainter returned wrong resolution " << result.width << "x"
                                                               << result.height);
  // only masked pixels may differ from the input
  ImageU8 out = request.image;
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      if (request.mask.at(r, c))
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = result.at(r, c, ch);
  return out;
}

void inpaint_scene(SceneDataset& scene, const InpaintSceneOptions& opts) {
  const int N = scene.frame_count();
  std::vector<std::string> failures(N);
  std::atomic<int> next{0};
  int workers = std::max(1, opts.parallelism);

  auto work = [&] {
    for (;;) {
      int n = next.fetch_add(1);
      if (n >= N) return;
      Frame& f = scene.frames[n];
      try {
        InpaintRequest rgb_req{u8_from_image(f.rgb), f.mask};
        InpaintRequest depth_req{encode_depth(f.depth), f.mask};
        ImageU8 rgb_out, depth_out;
        if (f.mask.empty()) {
          rgb_out = rgb_req.image;
          depth_out = depth_req.image;
        } else if (opts.use_builtin) {
          rgb_out = inpaint_builtin(rgb_req);
          depth_out = inpaint_builtin(depth_req);
        } else {
          rgb_out = inpaint_external(rgb_req, opts.external);
          depth_out = inpaint_external(depth_req, opts.external);
        }
        f.inpaint_rgb = image_from_u8(rgb_out);
        f.inpaint_depth = decode_depth(depth_out);
      } catch (const std::exception& e) {
        failures[n] = e.what();
      }
    }
  };

  std::vector<std::thread> threads;
  for (int i = 1; i < workers; ++i) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();

  for (int n = 0; n < N; ++n)
    NERFRM_CHECK(failures[n].empty(), "inpainting failed for frame " << n << ": " << failures[n]);
}

}  // namespace nerfrm
