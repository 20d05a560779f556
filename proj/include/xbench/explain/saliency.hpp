#pragma once

#include <string>

#include "xbench/common/tensor.hpp"

namespace xbench::explain {

enum class Method { ROLLOUT, GRAD_ROLLOUT, GRAD_CAM };

Method parse_method(const std::string& text);
const char* method_name(Method m);

/// 224 x 224 map in [0, 1] for one (image, target class).
struct SaliencyMap {
  Matrix values;
  Method source_method = Method::GRAD_CAM;
  int target_class = 0;
  // Raw field was constant, so the normalized map is all zeros.
  bool constant = false;
  // Windowed-attention rollout; see rollout.hpp.
  bool approximate = false;
};

// (x - min) / (max - min); a constant input maps to zeros. Throws on
// non-finite entries.
Matrix normalize_map(const Matrix& raw);
bool is_constant(const Matrix& raw);

// Token-grid scores -> bilinear upsample to 224 x 224 -> normalize.
SaliencyMap finish_map(const Matrix& grid, Method method, int target_class);

}  // namespace xbench::explain
