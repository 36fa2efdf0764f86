#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nerfrm/common.hpp"

namespace nerfrm {

// Floating-point image in [0,1], row-major H*W*C.
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c), v(static_cast<size_t>(h) * w * c, 0.0) {}

  double& at(int r, int c, int ch) { return v[(static_cast<size_t>(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch) const {
    return v[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

struct ImageU8 {
  int height = 0, width = 0, channels = 0;
  std::vector<uint8_t> v;

  ImageU8() = default;
  ImageU8(int h, int w, int c)
      : height(h), width(w), channels(c), v(static_cast<size_t>(h) * w * c, 0) {}

  uint8_t& at(int r, int c, int ch) {
    return v[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  uint8_t at(int r, int c, int ch) const {
    return v[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
};

struct Mask {
  int height = 0, width = 0;
  std::vector<uint8_t> v;  // 0 or 1

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), v(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * width + c]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  bool empty() const { return count() == 0; }
};

// Depth in meters; 0 marks invalid measurements.
struct DepthMap {
  int height = 0, width = 0;
  std::vector<double> v;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), v(static_cast<size_t>(h) * w, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * width + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * width + c]; }
};

inline uint8_t quantize_u8(double x) {
  double scaled = x * 255.0;
  if (scaled <= 0.0) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<uint8_t>(std::floor(scaled + 0.5));  // round half up
}

Image image_from_u8(const ImageU8& img);
ImageU8 u8_from_image(const Image& img);

ImageU8 load_png_u8(const std::string& path);  // forced to 3 channels
void save_png_u8(const ImageU8& img, const std::string& path);

Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

Mask load_mask_png(const std::string& path);
void save_mask_png(const Mask& mask, const std::string& path);

// PFM: 32-bit float, little-endian, bottom-up row order.
DepthMap load_depth_pfm(const std::string& path);
void save_depth_pfm(const DepthMap& depth, const std::string& path);

// 16-bit PNG in millimeters.
DepthMap load_depth_png16(const std::string& path);
void save_depth_png16(const DepthMap& depth, const std::string& path);

// dispatches on extension (.pfm or .png)
DepthMap load_depth(const std::string& path);

}  // namespace nerfrm
