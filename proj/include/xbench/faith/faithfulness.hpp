#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xbench/common/tensor.hpp"
#include "xbench/explain/saliency.hpp"

namespace xbench::faith {

enum class Direction { INSERTION, DELETION };
const char* direction_name(Direction d);

/// Pixel positions (row-major index) from most to least salient.
struct PixelOrdering {
  int height = 0;
  int width = 0;
  std::vector<int> indices;
};

// Stable descending sort, so equal values keep row-major order.
PixelOrdering rank_pixels(const Matrix& map);
PixelOrdering reversed(const PixelOrdering& ordering);

enum class BaselineKind { BLUR, BLANK };

struct BaselineSpec {
  BaselineKind kind = BaselineKind::BLANK;
  double blur_sigma = 11.0;

  void validate() const;
  std::string describe() const;
};

inline BaselineSpec insertion_default() { return {BaselineKind::BLUR, 11.0}; }
inline BaselineSpec deletion_default() { return {BaselineKind::BLANK, 11.0}; }

// BLANK is zero in normalized space; BLUR is a separable Gaussian with
// radius ceil(3 sigma) and mirrored borders.
ImageTensor make_baseline(const ImageTensor& image, const BaselineSpec& spec);

// Pixels changed at step k of `steps`: floor(k * N / steps).
std::vector<size_t> step_counts(size_t pixels, int steps);

std::vector<ImageTensor> perturb_sequence(const ImageTensor& image, const PixelOrdering& ordering, Direction direction,
                                          const BaselineSpec& baseline, int steps);

/// Batch of preprocessed images -> batch x classes probabilities.
using Oracle = std::function<Matrix(std::span<const ImageTensor>)>;

struct FaithfulnessCurve {
  std::vector<double> fractions;
  std::vector<double> probabilities;
  Direction direction = Direction::INSERTION;
  double auc = 0.0;
};

double trapezoid_auc(std::span<const double> fractions, std::span<const double> values);

struct CurveOptions {
  int steps = 50;
  int batch_size = 17;
};

FaithfulnessCurve faithfulness_curve(const Oracle& predict, const ImageTensor& image, const PixelOrdering& ordering,
                                     int target_class, Direction direction, const BaselineSpec& baseline,
                                     const CurveOptions& opts = {});
FaithfulnessCurve faithfulness_curve(const Oracle& predict, const ImageTensor& image,
                                     const explain::SaliencyMap& map, int target_class, Direction direction,
                                     const BaselineSpec& baseline, const CurveOptions& opts = {});

struct CurveAggregate {
  std::vector<double> fractions;
  std::vector<double> mean_probabilities;
  double mean_auc = 0.0;
  double auc_of_mean = 0.0;
  size_t count = 0;
};

CurveAggregate aggregate_curves(std::span<const FaithfulnessCurve> curves);

struct CurveRecord {
  std::string image_id;
  std::string model;
  std::string method;
  FaithfulnessCurve curve;
};

// Header: fraction,probability,image_id,model,method,direction
void write_curves_csv(const std::filesystem::path& path, std::span<const CurveRecord> records);

struct AucRow {
  std::string model;
  std::string method;
  double insertion = 0.0;
  double deletion = 0.0;
  size_t images = 0;
  size_t skipped = 0;
};

void write_auc_csv(const std::filesystem::path& path, std::span<const AucRow> rows);
std::vector<AucRow> read_auc_csv(const std::filesystem::path& path);
// Methods as rows, models as column pairs (Deletion, Insertion).
std::string auc_table_text(std::span<const AucRow> rows);

}  // namespace xbench::faith
