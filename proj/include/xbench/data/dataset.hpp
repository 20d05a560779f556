#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "xbench/common/tensor.hpp"

namespace xbench::data {

using ClassNames = std::shared_ptr<const std::vector<std::string>>;

/// Reference to one image on disk; decoding is deferred to load_sample().
struct SampleRef {
  std::string source_path;  // relative to the collection root
  int label = 0;

  bool operator==(const SampleRef&) const = default;
};

struct LoadReport {
  size_t scanned = 0;
  size_t loaded = 0;
  size_t skipped = 0;
  std::vector<std::string> warnings;
};

struct ImageCollection {
  std::filesystem::path root;
  ClassNames class_names;
  std::vector<SampleRef> samples;
  LoadReport report;

  size_t num_classes() const { return class_names ? class_names->size() : 0; }
};

/// One preprocessed image (3 x 224 x 224, normalized) with its label.
struct ImageSample {
  ImageTensor pixels;
  int label = 0;
  ClassNames class_names;
  std::string source_path;
};

struct LoadOptions {
  // Decode every file at load time so unreadable ones are skipped and counted.
  bool verify = true;
};

// Class directories are sorted by name; for PBC that is the canonical order
// basophil, eosinophil, erythroblast, ig, lymphocyte, monocyte, neutrophil,
// platelet.
ImageCollection load_pbc(const std::filesystem::path& root, const LoadOptions& opts = {});

// Classes are always {benign, malignant, normal}; files whose name contains
// "_mask" are segmentation masks and are excluded.
ImageCollection load_busi(const std::filesystem::path& root, const LoadOptions& opts = {});

const std::vector<std::string>& busi_class_names();

ImageSample load_sample(const ImageCollection& collection, const SampleRef& ref);

struct DatasetSplit {
  std::vector<SampleRef> train;
  std::vector<SampleRef> validation;
  uint64_t seed = 0;
  double val_fraction = 0.0;
  bool stratified = true;
};

// Deterministic stratified split. The validation total is
// round(val_fraction * N); per-class counts are floor(val_fraction * n_c)
// plus one for the classes with the largest remainders, so every class is
// within one sample of its exact share.
DatasetSplit split(const ImageCollection& collection, double val_fraction, uint64_t seed);

// Exactly per_class samples from each class, class-major order.
std::vector<SampleRef> sample_eval_subset(const std::vector<SampleRef>& validation,
                                          const std::vector<std::string>& class_names,
                                          int per_class, uint64_t seed);

// `<source_path>\t<train|val>` lines in collection order.
void write_split_manifest(const std::filesystem::path& path, const ImageCollection& collection,
                          const DatasetSplit& split);
DatasetSplit read_split_manifest(const std::filesystem::path& path,
                                 const ImageCollection& collection);
std::string split_manifest_text(const ImageCollection& collection, const DatasetSplit& split);
uint64_t manifest_hash(const std::vector<SampleRef>& samples);

}  // namespace xbench::data
