#include "xbench/runner/metrics.hpp"

#include "xbench/common/error.hpp"

namespace xbench::runner {

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                                             int num_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("label and prediction counts differ");
  ClassificationMetrics m;
  m.count = truth.size();
  m.confusion.assign(static_cast<size_t>(num_classes), std::vector<int>(static_cast<size_t>(num_classes), 0));
  if (truth.empty()) return m;
  size_t correct = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
      throw ShapeError("class index out of range");
    ++m.confusion[static_cast<size_t>(truth[i])][static_cast<size_t>(predicted[i])];
    correct += truth[i] == predicted[i];
  }
  m.accuracy = static_cast<double>(correct) / truth.size();
  // Macro F1 averages over classes that occur in either labels or predictions.
  int present = 0;
  for (int k = 0; k < num_classes; ++k) {
    double tp = m.confusion[static_cast<size_t>(k)][static_cast<size_t>(k)], support = 0, predicted_k = 0;
    for (int j = 0; j < num_classes; ++j) {
      support += m.confusion[static_cast<size_t>(k)][static_cast<size_t>(j)];
      predicted_k += m.confusion[static_cast<size_t>(j)][static_cast<size_t>(k)];
    }
    if (support + predicted_k == 0) continue;
    const double f1 = 2.0 * tp / (support + predicted_k);
    m.weighted_f1 += f1 * support / truth.size();
    {
      m.macro_f1 += f1;
      ++present;
    }
  }
  if (present > 0) m.macro_f1 /= present;
  return m;
}

}  // namespace xbench::runner
