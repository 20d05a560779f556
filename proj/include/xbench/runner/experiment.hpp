#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xbench/data/dataset.hpp"
#include "xbench/data/source.hpp"
#include "xbench/runner/config.hpp"
#include "xbench/runner/metrics.hpp"

namespace xbench::runner {

struct ClassificationRow {
  std::string model;
  ClassificationMetrics metrics;
  std::string status = "ok";
  std::filesystem::path weights;
};

// metrics.csv: model,accuracy,weighted_f1,macro_f1,images,status (percent).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<ClassificationRow>& rows);

struct ImageEvaluation {
  int target_class = 0;
  float confidence = 0.0f;
  explain::SaliencyMap map;
  faith::FaithfulnessCurve insertion;
  faith::FaithfulnessCurve deletion;
};

// Explains the predicted class and scores the map with both curves. With
// `reverse_ordering` the pixels are perturbed least salient first.
ImageEvaluation evaluate_image(const model::Adapter& adapter, const ImageTensor& image, explain::Method method,
                               const explain::ExplainerSettings& settings, const FaithConfig& faith_cfg,
                               bool reverse_ordering = false);

struct FaithfulnessResult {
  std::vector<faith::AucRow> auc;
  std::vector<faith::CurveRecord> curves;
  std::vector<faith::CurveRecord> mean_curves;  // image_id "mean"
};

struct ErrorCase {
  std::string image;
  int true_class = 0;
  int predicted_class = 0;
  double confidence = 0.0;
  std::filesystem::path panel;
};

// Up to max_cases misclassified samples, each rendered as a panel
// input | predicted-class map | true-class map [| every class]. `probs`
// may carry precomputed predictions for `validation`.
std::vector<ErrorCase> misclassification_report(const model::Adapter& adapter, explain::Method method,
                                                const explain::ExplainerSettings& settings,
                                                const data::SampleSource& validation, int max_cases,
                                                bool all_classes, const std::filesystem::path& out_dir,
                                                const Matrix* probs = nullptr);

struct ReportBundle {
  std::vector<ClassificationRow> classification;
  FaithfulnessResult faithfulness;
  std::vector<std::filesystem::path> gallery;
  std::vector<ErrorCase> error_cases;
  std::filesystem::path manifest;
  std::vector<std::string> failures;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return cfg_; }
  const data::ImageCollection& collection();
  // Reuses <output_dir>/split.manifest when present, otherwise creates it.
  const data::DatasetSplit& split();
  std::vector<data::SampleRef> eval_subset();
  std::filesystem::path weights_path(model::Family f) const;
  // Loads the trained weights bundle when present, otherwise fine-tunes.
  model::Adapter& adapter(model::Family f);

  std::vector<ClassificationRow> run_classification();
  FaithfulnessResult run_faithfulness();
  std::vector<std::filesystem::path> render_gallery(const std::vector<data::SampleRef>& samples);
  std::vector<ErrorCase> run_error_analysis();
  ReportBundle run_all();

  void record(const std::string& kind, const std::filesystem::path& path);
  std::filesystem::path write_manifest();

 private:
  const Matrix& validation_probs(model::Family f);

  ExperimentConfig cfg_;
  std::optional<data::ImageCollection> collection_;
  std::optional<data::DatasetSplit> split_;
  std::map<model::Family, std::unique_ptr<model::Adapter>> adapters_;
  std::map<model::Family, Matrix> val_probs_;
  std::vector<std::pair<std::string, std::filesystem::path>> artifacts_;
};

// Spreads n picks over the classes round-robin, in subset order.
std::vector<data::SampleRef> gallery_picks(const std::vector<data::SampleRef>& subset, int n);

}  // namespace xbench::runner
