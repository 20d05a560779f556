#include "xbench/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "xbench/common/error.hpp"

namespace xbench::data {

RgbImage decode_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_IGNORE_ORIENTATION);
  } catch (const cv::Exception& e) {
    throw DataError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  RgbImage out;
  out.height = bgr.rows;
  out.width = bgr.cols;
  out.rgb.resize(static_cast<size_t>(out.height) * out.width * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* src = bgr.ptr<uint8_t>(y);
    uint8_t* dst = out.rgb.data() + static_cast<size_t>(y) * out.width * 3;
    for (int x = 0; x < bgr.cols; ++x) {
      dst[3 * x + 0] = src[3 * x + 2];
      dst[3 * x + 1] = src[3 * x + 1];
      dst[3 * x + 2] = src[3 * x + 0];
    }
  }
  return out;
}

namespace {

cv::Mat to_bgr_mat(const RgbImage& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* dst = bgr.ptr<uint8_t>(y);
    const uint8_t* src = image.rgb.data() + static_cast<size_t>(y) * image.width * 3;
    for (int x = 0; x < image.width; ++x) {
      dst[3 * x + 0] = src[3 * x + 2];
      dst[3 * x + 1] = src[3 * x + 1];
      dst[3 * x + 2] = src[3 * x + 0];
    }
  }
  return bgr;
}

void write_mat(const std::filesystem::path& path, const cv::Mat& mat,
               const std::vector<int>& params = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat, params)) {
    throw Error("failed to write image " + path.string());
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_mat(path, to_bgr_mat(image));
}

void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality) {
  write_mat(path, to_bgr_mat(image), {cv::IMWRITE_JPEG_QUALITY, quality});
}

void write_png_gray16(const std::filesystem::path& path, int height, int width,
                      std::span<const uint16_t> pixels) {
  if (pixels.size() != static_cast<size_t>(height) * width) {
    throw ShapeError("write_png_gray16: pixel count mismatch");
  }
  cv::Mat m(height, width, CV_16UC1);
  std::copy(pixels.begin(), pixels.end(), m.ptr<uint16_t>(0));
  write_mat(path, m);
}

std::vector<uint16_t> read_png_gray16(const std::filesystem::path& path, int& height,
                                      int& width) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_16UC1) {
    throw DataError("not a 16-bit grayscale PNG: " + path.string());
  }
  height = m.rows;
  width = m.cols;
  const auto* p = m.ptr<uint16_t>(0);
  return {p, p + static_cast<size_t>(height) * width};
}

ImageTensor to_unit_tensor(const RgbImage& image) {
  ImageTensor t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const uint8_t* px = image.rgb.data() + (static_cast<size_t>(y) * image.width + x) * 3;
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<float>(px[c]) / 255.0f;
    }
  }
  return t;
}

namespace {

struct Tap {
  int lo, hi;
  float w_hi;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return taps;
}

void resize_plane(const float* src, int ih, int iw, float* dst, int oh, int ow) {
  const auto ty = bilinear_taps(ih, oh);
  const auto tx = bilinear_taps(iw, ow);
  for (int y = 0; y < oh; ++y) {
    const float* r0 = src + static_cast<size_t>(ty[y].lo) * iw;
    const float* r1 = src + static_cast<size_t>(ty[y].hi) * iw;
    const float wy = ty[y].w_hi;
    float* out = dst + static_cast<size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      const float wx = tx[x].w_hi;
      const float top = r0[tx[x].lo] + wx * (r0[tx[x].hi] - r0[tx[x].lo]);
      const float bot = r1[tx[x].lo] + wx * (r1[tx[x].hi] - r1[tx[x].lo]);
      out[x] = top + wy * (bot - top);
    }
  }
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& in, int out_height, int out_width) {
  ImageTensor out(in.channels, out_height, out_width);
  for (int c = 0; c < in.channels; ++c) {
    resize_plane(in.data.data() + c * in.plane(), in.height, in.width,
                 out.data.data() + c * out.plane(), out_height, out_width);
  }
  return out;
}

Matrix resize_bilinear(const Matrix& in, int out_rows, int out_cols) {
  Matrix out(out_rows, out_cols);
  resize_plane(in.data(), in.rows(), in.cols(), out.data(), out_rows, out_cols);
  return out;
}

ResizeCropPlan plan_resize_crop(int height, int width, int target) {
  if (height <= 0 || width <= 0) throw ShapeError("plan_resize_crop: empty image");
  ResizeCropPlan p;
  if (height <= width) {
    p.resized_height = target;
    p.resized_width = static_cast<int>(std::lround(static_cast<double>(width) * target / height));
  } else {
    p.resized_width = target;
    p.resized_height = static_cast<int>(std::lround(static_cast<double>(height) * target / width));
  }
  p.crop_top = (p.resized_height - target) / 2;
  p.crop_left = (p.resized_width - target) / 2;
  return p;
}

ImageTensor preprocess(const ImageTensor& unit_rgb) {
  if (unit_rgb.channels != 3) throw ShapeError("preprocess: expected 3 channels");
  const ResizeCropPlan plan = plan_resize_crop(unit_rgb.height, unit_rgb.width);
  const ImageTensor resized =
      (plan.resized_height == unit_rgb.height && plan.resized_width == unit_rgb.width)
          ? unit_rgb
          : resize_bilinear(unit_rgb, plan.resized_height, plan.resized_width);
  ImageTensor out(3, kInputSize, kInputSize);
  for (int c = 0; c < 3; ++c) {
    const float mean = kChannelMean[c];
    const float inv_std = 1.0f / kChannelStd[c];
    for (int y = 0; y < kInputSize; ++y) {
      for (int x = 0; x < kInputSize; ++x) {
        out.at(c, y, x) = (resized.at(c, y + plan.crop_top, x + plan.crop_left) - mean) * inv_std;
      }
    }
  }
  return out;
}

ImageTensor preprocess(const RgbImage& image) { return preprocess(to_unit_tensor(image)); }

RgbImage denormalize(const ImageTensor& normalized) {
  RgbImage out;
  out.height = normalized.height;
  out.width = normalized.width;
  out.rgb.resize(static_cast<size_t>(out.height) * out.width * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = normalized.at(c, y, x) * kChannelStd[c] + kChannelMean[c];
        out.rgb[(static_cast<size_t>(y) * out.width + x) * 3 + c] =
            static_cast<uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace xbench::data
