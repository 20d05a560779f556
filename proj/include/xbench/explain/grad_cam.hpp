#pragma once

#include "xbench/explain/saliency.hpp"
#include "xbench/model/capture.hpp"

namespace xbench::explain {

// max(0, sum_k mean(grad_k) * act_k) on the feature grid, before upsampling.
Matrix grad_cam_raw(const model::FeatureMap& activations, const model::FeatureMap& gradients);

SaliencyMap grad_cam(const model::CaptureBundle& bundle);

}  // namespace xbench::explain
