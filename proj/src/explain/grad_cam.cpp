#include "xbench/explain/grad_cam.hpp"

#include <algorithm>

#include "xbench/common/error.hpp"

namespace xbench::explain {

Matrix grad_cam_raw(const model::FeatureMap& act, const model::FeatureMap& grad) {
  if (act.values.empty() || grad.values.empty()) throw Error("Grad-CAM needs captured activations and gradients");
  if (act.channels != grad.channels || act.rows != grad.rows || act.cols != grad.cols)
    throw ShapeError("Grad-CAM activation and gradient shapes differ");
  const int cells = act.rows * act.cols;
  std::vector<double> acc(static_cast<size_t>(cells), 0.0);
  for (int k = 0; k < act.channels; ++k) {
    const float* g = grad.values.data() + static_cast<size_t>(k) * cells;
    const float* a = act.values.data() + static_cast<size_t>(k) * cells;
    double w = 0.0;
    for (int i = 0; i < cells; ++i) w += g[i];
    w /= cells;
    for (int i = 0; i < cells; ++i) acc[static_cast<size_t>(i)] += w * a[i];
  }
  Matrix out(act.rows, act.cols);
  auto o = out.values();
  for (int i = 0; i < cells; ++i) o[static_cast<size_t>(i)] = static_cast<float>(std::max(0.0, acc[static_cast<size_t>(i)]));
  return out;
}

SaliencyMap grad_cam(const model::CaptureBundle& bundle) {
  return finish_map(grad_cam_raw(bundle.target_activations, bundle.target_grads), Method::GRAD_CAM,
                    bundle.target_class);
}

}  // namespace xbench::explain
