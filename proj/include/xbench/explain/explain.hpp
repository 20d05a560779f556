#pragma once

#include "xbench/explain/grad_cam.hpp"
#include "xbench/explain/rollout.hpp"

namespace xbench::explain {

struct ExplainerSettings {
  RolloutConfig rollout = plain_rollout_defaults();
  RolloutConfig gradient_rollout = gradient_rollout_defaults();
};

SaliencyMap explain(Method method, const model::CaptureBundle& bundle, const ExplainerSettings& settings = {});

}  // namespace xbench::explain
