#pragma once

#include "xbench/model/layers.hpp"

namespace xbench::model {

// Adam with decoupled weight decay. Decay applies only to parameters flagged
// `decay` (weight matrices), not to biases, norms or embeddings.
class AdamW {
 public:
  struct Options {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(const ParamSet& params, Options opts);

  // grads are scaled by grad_scale (e.g. 1/batch) before the update.
  void step(ParamSet& params, const GradBuffer& grads, float grad_scale);
  long steps() const { return t_; }

 private:
  Options opts_;
  long t_ = 0;
  GradBuffer m_, v_;
};

}  // namespace xbench::model
