#include "nerfrm/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace nerfrm {

Image image_from_u8(const ImageU8& img) {
  Image out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.v.size(); ++i) out.v[i] = img.v[i] / 255.0;
  return out;
}

ImageU8 u8_from_image(const Image& img) {
  ImageU8 out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.v.size(); ++i) out.v[i] = quantize_u8(img.v[i]);
  return out;
}

ImageU8 load_png_u8(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR
  NERFRM_CHECK(!m.empty(), "cannot read image: " << path);
  ImageU8 out(m.rows, m.cols, 3);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      cv::Vec3b px = m.at<cv::Vec3b>(r, c);
      out.at(r, c, 0) = px[2];
      out.at(r, c, 1) = px[1];
      out.at(r, c, 2) = px[0];
    }
  return out;
}

void save_png_u8(const ImageU8& img, const std::string& path) {
  NERFRM_CHECK(img.channels == 3 || img.channels == 1, "save_png_u8 expects 1 or 3 channels");
  cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (img.channels == 3)
        m.at<cv::Vec3b>(r, c) = cv::Vec3b(img.at(r, c, 2), img.at(r, c, 1), img.at(r, c, 0));
      else
        m.at<uint8_t>(r, c) = img.at(r, c, 0);
    }
  NERFRM_CHECK(cv::imwrite(path, m), "cannot write image: " << path);
}

Image load_png(const std::string& path) { return image_from_u8(load_png_u8(path)); }

void save_png(const Image& img, const std::string& path) { save_png_u8(u8_from_image(img), path); }

Mask load_mask_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  NERFRM_CHECK(!m.empty(), "cannot read mask: " << path);
  Mask out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out.at(r, c) = m.at<uint8_t>(r, c) >= 128 ? 1 : 0;
  return out;
}

void save_mask_png(const Mask& mask, const std::string& path) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) m.at<uint8_t>(r, c) = mask.at(r, c) ? 255 : 0;
  NERFRM_CHECK(cv::imwrite(path, m), "cannot write mask: " << path);
}

DepthMap load_depth_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  NERFRM_CHECK(is.good(), "cannot read depth: " << path);
  std::string magic;
  is >> magic;
  NERFRM_CHECK(magic == "Pf", "not a single-channel PFM: " << path);
  int w, h;
  double scale;
  is >> w >> h >> scale;
  is.get();  // single whitespace after the header
  NERFRM_CHECK(w > 0 && h > 0, "bad PFM dimensions");
  NERFRM_CHECK(scale < 0, "big-endian PFM not supported");
  std::vector<float> buf(static_cast<size_t>(w) * h);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  NERFRM_CHECK(is.good(), "truncated PFM: " << path);
  DepthMap out(h, w);
  for (int r = 0; r < h; ++r)  // PFM rows are stored bottom-up
    for (int c = 0; c < w; ++c) out.at(r, c) = buf[static_cast<size_t>(h - 1 - r) * w + c];
  return out;
}

void save_depth_pfm(const DepthMap& depth, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  NERFRM_CHECK(os.good(), "cannot write depth: " << path);
  os << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
  std::vector<float> buf(static_cast<size_t>(depth.width) * depth.height);
  for (int r = 0; r < depth.height; ++r)
    for (int c = 0; c < depth.width; ++c)
      buf[static_cast<size_t>(depth.height - 1 - r) * depth.width + c] =
          static_cast<float>(depth.at(r, c));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  NERFRM_CHECK(os.good(), "depth write failed: " << path);
}

DepthMap load_depth_png16(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  NERFRM_CHECK(!m.empty(), "cannot read depth: " << path);
  NERFRM_CHECK(m.type() == CV_16UC1, "expected 16-bit single-channel PNG: " << path);
  DepthMap out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out.at(r, c) = m.at<uint16_t>(r, c) / 1000.0;
  return out;
}

void save_depth_png16(const DepthMap& depth, const std::string& path) {
  cv::Mat m(depth.height, depth.width, CV_16UC1);
  for (int r = 0; r < depth.height; ++r)
    for (int c = 0; c < depth.width; ++c) {
      double mm = depth.at(r, c) * 1000.0;
      m.at<uint16_t>(r, c) = static_cast<uint16_t>(std::min(65535.0, std::max(0.0, std::floor(mm + 0.5))));
    }
  NERFRM_CHECK(cv::imwrite(path, m), "cannot write depth: " << path);
}

DepthMap load_depth(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm") return load_depth_pfm(path);
  return load_depth_png16(path);
}

}  // namespace nerfrm
