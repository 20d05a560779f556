#pragma once

#include <memory>
#include <vector>

#include "xbench/common/tensor.hpp"
#include "xbench/model/backbone.hpp"
#include "xbench/model/capture.hpp"
#include "xbench/model/layers.hpp"

namespace xbench::model {

struct StepResult {
  float loss = 0.0f;
  int predicted = 0;
};

// A classifier with analytic gradients. All members are const and keep their
// working state on the stack, so one network may serve many threads at once
// as long as nobody mutates params() concurrently.
class Network {
 public:
  virtual ~Network() = default;

  virtual int num_classes() const = 0;
  virtual const ArchConfig& arch() const = 0;
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // Names of the classification head parameters (replaced on fine-tuning).
  virtual std::vector<int> head_params() const = 0;

  virtual std::vector<float> logits(const ImageTensor& image) const = 0;

  // Cross-entropy forward/backward; parameter gradients are added to `grads`.
  virtual StepResult train_step(const ImageTensor& image, int label, GradBuffer& grads) const = 0;

  // Forward with attention capture, then backpropagate the target-class
  // logit to the attention probabilities and the Grad-CAM layer.
  virtual CaptureBundle capture(const ImageTensor& image, int target_class) const = 0;

  // Token-layout (tokens x channels, class token included when present)
  // activation of the Grad-CAM layer.
  virtual Matrix target_activation(const ImageTensor& image) const = 0;
  // Logits with the Grad-CAM layer activation replaced by `activation`.
  virtual std::vector<float> logits_with_target(const ImageTensor& image,
                                                const Matrix& activation) const = 0;

 protected:
  ParamSet params_;
};

std::unique_ptr<Network> make_vit(const VitConfig& cfg, int num_classes);
std::unique_ptr<Network> make_swin(const SwinConfig& cfg, int num_classes);
std::unique_ptr<Network> make_network(const ArchConfig& arch, int num_classes);

// Truncated-normal(0.02) matrices, zero biases, unit norm scales.
void init_params(ParamSet& params, uint64_t seed);

}  // namespace xbench::model
