#include "xbench/explain/saliency.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "xbench/common/error.hpp"
#include "xbench/data/image.hpp"
#include "xbench/explain/explain.hpp"

namespace xbench::explain {

Method parse_method(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "rollout" || t == "attention_rollout") return Method::ROLLOUT;
  if (t == "grad_rollout" || t == "gradient_rollout" || t == "gradient_attention_rollout") return Method::GRAD_ROLLOUT;
  if (t == "grad_cam" || t == "gradcam") return Method::GRAD_CAM;
  throw ConfigError("unknown explainer '" + text + "' (expected rollout, grad_rollout or grad_cam)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::ROLLOUT: return "ROLLOUT";
    case Method::GRAD_ROLLOUT: return "GRAD_ROLLOUT";
    case Method::GRAD_CAM: return "GRAD_CAM";
  }
  return "?";
}

bool is_constant(const Matrix& raw) {
  const auto v = raw.values();
  if (v.empty()) return true;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *lo == *hi;
}

Matrix normalize_map(const Matrix& raw) {
  const auto v = raw.values();
  for (float x : v)
    if (!std::isfinite(x)) throw Error("saliency map contains non-finite values");
  Matrix out(raw.rows(), raw.cols());
  if (v.empty() || is_constant(raw)) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, range = static_cast<double>(*hi) - mn;
  auto o = out.values();
  for (size_t i = 0; i < v.size(); ++i) o[i] = static_cast<float>((v[i] - mn) / range);
  return out;
}

SaliencyMap finish_map(const Matrix& grid, Method method, int target_class) {
  SaliencyMap m;
  m.source_method = method;
  m.target_class = target_class;
  const Matrix up = data::resize_bilinear(grid, data::kInputSize, data::kInputSize);
  m.constant = is_constant(up);
  m.values = normalize_map(up);
  return m;
}

SaliencyMap explain(Method method, const model::CaptureBundle& bundle, const ExplainerSettings& settings) {
  switch (method) {
    case Method::ROLLOUT: return attention_rollout(bundle.attentions, settings.rollout, bundle.target_class);
    case Method::GRAD_ROLLOUT: return gradient_attention_rollout(bundle, settings.gradient_rollout);
    case Method::GRAD_CAM: return grad_cam(bundle);
  }
  throw Error("unreachable explainer");
}

}  // namespace xbench::explain
