#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xbench {

/// Dense row-major float matrix. Token activations are (tokens x features).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const float* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  float& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  float operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  void fill(float v);
  void reset(int rows, int cols);  // resize and zero

  bool operator==(const Matrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

/// Channel-major image tensor (C x H x W).
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}

  size_t plane() const { return static_cast<size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<size_t>(y) * width + x]; }

  bool operator==(const ImageTensor&) const = default;
};

/// Largest absolute elementwise difference; sizes must match.
float max_abs_diff(std::span<const float> a, std::span<const float> b);

}  // namespace xbench
