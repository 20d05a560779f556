#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xbench/common/tensor.hpp"

namespace xbench::data {

inline constexpr int kInputSize = 224;

// Channel statistics the four checkpoints were pretrained with.
inline constexpr std::array<float, 3> kChannelMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd{0.229f, 0.224f, 0.225f};

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // height * width * 3
};

// Throws DataError carrying the path when the file cannot be decoded.
RgbImage decode_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality = 95);
void write_png_gray16(const std::filesystem::path& path, int height, int width,
                      std::span<const uint16_t> pixels);
std::vector<uint16_t> read_png_gray16(const std::filesystem::path& path, int& height, int& width);

// 8-bit RGB -> float CHW in [0, 1].
ImageTensor to_unit_tensor(const RgbImage& image);

// Bilinear resampling with half-pixel centres (corner alignment off), no
// antialiasing. Operates on every channel independently.
ImageTensor resize_bilinear(const ImageTensor& in, int out_height, int out_width);
Matrix resize_bilinear(const Matrix& in, int out_rows, int out_cols);

struct ResizeCropPlan {
  int resized_height = 0;
  int resized_width = 0;
  int crop_top = 0;
  int crop_left = 0;
};

// Shorter side -> target, longer side scaled and rounded to nearest; centre
// crop offsets floor((resized - target) / 2).
ResizeCropPlan plan_resize_crop(int height, int width, int target = kInputSize);

// [0,1] CHW image of any size -> normalized 3 x 224 x 224.
ImageTensor preprocess(const ImageTensor& unit_rgb);
ImageTensor preprocess(const RgbImage& image);

// Inverse of the channel standardization, clamped to 8-bit.
RgbImage denormalize(const ImageTensor& normalized);

}  // namespace xbench::data
