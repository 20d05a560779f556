#include <algorithm>
#include <cmath>

#include "xbench/common/error.hpp"
#include "xbench/common/tensor.hpp"

namespace xbench {

void Matrix::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::reset(int rows, int cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(static_cast<size_t>(rows) * cols, 0.0f);
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace xbench
