#include "xbench/model/optim.hpp"

#include <cmath>

namespace xbench::model {

AdamW::AdamW(const ParamSet& params, Options opts)
    : opts_(opts), m_(make_grad_buffer(params)), v_(make_grad_buffer(params)) {}

void AdamW::step(ParamSet& params, const GradBuffer& grads, float grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opts_.beta1);
  const float b2 = static_cast<float>(opts_.beta2);
  const float step = static_cast<float>(opts_.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(opts_.eps);
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = params.at(static_cast<int>(i));
    float* w = p.value.data();
    const float* g = grads[i].data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const float decay = p.decay ? static_cast<float>(opts_.lr * opts_.weight_decay) : 0.0f;
    for (size_t j = 0; j < p.value.size(); ++j) {
      const float gj = g[j] * grad_scale;
      m[j] = b1 * m[j] + (1.0f - b1) * gj;
      v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
      w[j] -= decay * w[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace xbench::model
