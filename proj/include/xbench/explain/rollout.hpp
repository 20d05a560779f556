#pragma once

#include <vector>

#include "xbench/explain/saliency.hpp"
#include "xbench/model/capture.hpp"

namespace xbench::explain {

enum class HeadFusion { MEAN, MAX, MIN };

struct RolloutConfig {
  HeadFusion head_fusion = HeadFusion::MEAN;
  double discard_ratio = 0.0;
  double residual_weight = 0.5;

  void validate() const;
};

inline RolloutConfig plain_rollout_defaults() { return {}; }
inline RolloutConfig gradient_rollout_defaults() { return {HeadFusion::MEAN, 0.9, 0.5}; }

// normalize_rows(w * I + (1 - w) * A). Rows of A must sum to 1.
Matrix augment_attention(const Matrix& A, double residual_weight);

// Scores before reshaping to the token grid. With a class token this is the
// class-token row of A1 * A2 * ... * AB restricted to patch columns; without
// one (Swin) it is the mean row. Windowed layers are scatter-summed into a
// dense token x token matrix, and only the trailing run of layers that share
// one token count is chained; `approximate` is set in that case.
std::vector<double> rollout_token_scores(const model::AttentionStack& stack, const RolloutConfig& cfg,
                                         bool* approximate = nullptr);

// Same chain over clamp(attention * gradient), with the lowest discard_ratio
// fraction of entries zeroed per layer. The class-token self entry is never
// discarded.
std::vector<double> gradient_rollout_token_scores(const model::AttentionStack& attentions,
                                                  const model::AttentionStack& gradients,
                                                  const RolloutConfig& cfg, bool* approximate = nullptr);

SaliencyMap attention_rollout(const model::AttentionStack& stack, const RolloutConfig& cfg,
                              int target_class = 0);
SaliencyMap gradient_attention_rollout(const model::CaptureBundle& bundle, const RolloutConfig& cfg);

}  // namespace xbench::explain
