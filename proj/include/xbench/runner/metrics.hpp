#pragma once

#include <vector>

namespace xbench::runner {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;  // per-class F1 weighted by true-class support
  double macro_f1 = 0.0;
  size_t count = 0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                                             int num_classes);

}  // namespace xbench::runner
